fn main() {
    std::process::exit(oddshts::cli::run(std::env::args_os()));
}
