//! Command-line front end: `simulate`, `forecast`, `evaluate`, `experiment`.
//!
//! Exit codes: 0 on success, 1 on data or parameter errors, 2 on usage errors.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::eval::{experiment, ExperimentConfig, ExperimentReport, LevelScores, ZeroPolicy};
use crate::forecast::{import_external_forecasts, BackendConfig, BackendKind};
use crate::hierarchy::{aggregate, Level};
use crate::io;
use crate::pipeline::{run_forecast, run_with_external, RunConfig};
use crate::simulate::{sample_hierarchy_spec, simulate_dataset};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DATA: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "oddshts", version, about = "Top-down hierarchical count forecasting with odds")]
pub struct Cli {
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a pool of INARMA count series and sample one hierarchy from it.
    Simulate {
        #[arg(long)]
        vars: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Run config JSON (simulation ranges, seed).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Forecast a hierarchy top-down from its bottom series.
    Forecast {
        #[arg(long)]
        hierarchy: PathBuf,
        #[arg(long)]
        series: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_parser = parse_backend)]
        backend: Option<BackendKind>,
        /// CSV of externally produced forecasts (`id,step,value`).
        #[arg(long)]
        external: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a forecast CSV against actuals in the same layout.
    Evaluate {
        #[arg(long)]
        forecast: PathBuf,
        #[arg(long)]
        actual: PathBuf,
        #[arg(long, default_value = "skip", value_parser = parse_zero_policy)]
        zero_policy: ZeroPolicy,
        /// Backend name written to the score table.
        #[arg(long, default_value = "forecast")]
        label: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate many hierarchies, forecast each with every backend and score them.
    Experiment {
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long, value_delimiter = ',', value_parser = parse_backend)]
        backend: Vec<BackendKind>,
        #[arg(long)]
        seed: u64,
        /// Worker threads; defaults to the number of processors.
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_parser = parse_zero_policy)]
        zero_policy: Option<ZeroPolicy>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_backend(s: &str) -> std::result::Result<BackendKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_zero_policy(s: &str) -> std::result::Result<ZeroPolicy, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).target(env_logger::Target::Stderr).try_init();

    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_DATA
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Simulate {
            vars,
            steps,
            seed,
            config,
            out,
        } => simulate_cmd(vars, steps, seed, config.as_deref(), &out),
        Command::Forecast {
            hierarchy,
            series,
            config,
            backend,
            external,
            seed,
            out,
        } => forecast_cmd(&hierarchy, &series, config.as_deref(), backend, external, seed, &out),
        Command::Evaluate {
            forecast,
            actual,
            zero_policy,
            label,
            out,
        } => evaluate_cmd(&forecast, &actual, zero_policy, &label, &out),
        Command::Experiment {
            runs,
            backend,
            seed,
            jobs,
            config,
            zero_policy,
            out,
        } => experiment_cmd(runs, backend, seed, jobs, config.as_deref(), zero_policy, &out),
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    let config: RunConfig = match path {
        Some(p) => io::read_json(p)?,
        None => RunConfig::default(),
    };
    config.validate()?;
    Ok(config)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn simulate_cmd(vars: Option<usize>, steps: Option<usize>, seed: Option<u64>, config: Option<&Path>, out: &Path) -> Result<()> {
    let mut config = load_config(config)?;
    if let Some(v) = vars {
        config.simulation.n_vars = v;
    }
    if let Some(s) = steps {
        config.simulation.length = s;
    }
    if let Some(s) = seed {
        config.seed = s;
    }
    let sim = &config.simulation;
    // keep the echoed config usable by `forecast` on this data
    if config.train_length + config.horizon > sim.length && sim.length > config.horizon {
        config.train_length = sim.length - config.horizon;
    }

    let frame = simulate_dataset(sim, config.seed)?;
    let spec = sample_hierarchy_spec(sim.n_vars, config.seed)?;
    let hierarchy = spec.to_hierarchy()?;

    ensure_dir(out)?;
    io::write_series_frame(&out.join("series.csv"), &frame)?;
    io::write_json(&out.join("hierarchy.json"), &hierarchy)?;
    io::write_json(&out.join("hierarchy_spec.json"), &spec)?;
    io::write_json(&out.join("config.json"), &config)?;
    log::info!(
        "simulated {} series x {} steps; hierarchy with {} bottoms",
        frame.n_series(),
        frame.len(),
        hierarchy.n_bottom()
    );
    Ok(())
}

fn forecast_cmd(
    hierarchy: &Path,
    series: &Path,
    config: Option<&Path>,
    backend: Option<BackendKind>,
    external: Option<PathBuf>,
    seed: Option<u64>,
    out: &Path,
) -> Result<()> {
    let mut config = load_config(config)?;
    if let Some(kind) = backend {
        config.backend.kind = kind;
    }
    if external.is_some() {
        config.external = external;
    }
    if let Some(s) = seed {
        config.seed = s;
    }
    let hierarchy = io::read_hierarchy(hierarchy)?;
    let frame = io::read_series_frame(series)?;
    let levels = aggregate(&hierarchy, &frame)?;

    let forecast = match &config.external {
        Some(path) => {
            let ext = import_external_forecasts(path)?;
            run_with_external(&hierarchy, &levels, &config, &ext)?
        }
        None => run_forecast(&hierarchy, &levels, &config)?,
    };
    let holdout = levels.slice(config.train_length..config.train_length + config.horizon)?;

    ensure_dir(out)?;
    io::write_forecast_csv(&out.join("forecast.csv"), &forecast)?;
    io::write_levels_csv(&out.join("actual.csv"), &holdout)?;
    io::write_json(&out.join("diagnostics.json"), &forecast.diagnostics)?;
    Ok(())
}

fn evaluate_cmd(forecast: &Path, actual: &Path, policy: ZeroPolicy, label: &str, out: &Path) -> Result<()> {
    let predicted = io::read_long_csv(forecast)?;
    let truth = io::read_long_csv(actual)?;
    let mut levels: Vec<LevelScores> = Level::ALL.iter().map(|&l| LevelScores::new(l)).collect();
    for ((level, id), pred) in &predicted {
        let act = truth
            .get(&(*level, id.clone()))
            .ok_or_else(|| Error::data(id, format!("no {level} actuals in {}", actual.display())))?;
        if act.len() != pred.len() {
            return Err(Error::data(
                id,
                format!("{} forecast steps but {} actual steps", pred.len(), act.len()),
            ));
        }
        levels[*level as usize].push(None, id, act, pred, policy)?;
    }
    for l in &mut levels {
        l.finish();
    }

    ensure_dir(out)?;
    io::write_json(&out.join("scores.json"), &levels)?;
    let rows = levels
        .iter()
        .flat_map(|l| l.nodes.iter().map(move |n| (label, l.level, n.label(), n.rmspe)));
    write_score_csv(&out.join("scores.csv"), rows)?;
    print_summary(label, &levels);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn experiment_cmd(
    runs: Option<usize>,
    backends: Vec<BackendKind>,
    seed: u64,
    jobs: Option<usize>,
    config: Option<&Path>,
    zero_policy: Option<ZeroPolicy>,
    out: &Path,
) -> Result<()> {
    let base = load_config(config)?;
    let defaults = ExperimentConfig::default();
    let kinds = if backends.is_empty() { vec![base.backend.kind] } else { backends };
    let exp = ExperimentConfig {
        runs: runs.unwrap_or(defaults.runs),
        backends: kinds.into_iter().map(|kind| BackendConfig { kind, ..base.backend }).collect(),
        seed,
        run_seeds: None,
        simulation: base.simulation.clone(),
        train_length: base.train_length,
        horizon: base.horizon,
        smoothing: base.smoothing,
        zero_policy: zero_policy.unwrap_or_default(),
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        if j == 0 {
            return Err(Error::param("jobs", "must be >= 1"));
        }
        pool = pool.num_threads(j);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::param("jobs", e.to_string()))?;
    let report = pool.install(|| experiment(&exp))?;

    ensure_dir(out)?;
    io::write_json(&out.join("report.json"), &report)?;
    write_score_csv(&out.join("scores.csv"), report.score_rows())?;
    for b in &report.scores {
        print_summary(&b.backend, &b.levels);
    }
    if report.failed_runs > 0 {
        log::warn!("{} of {} runs had failures", report.failed_runs, report.runs.len());
    }
    Ok(())
}

fn write_score_csv<B: AsRef<str>>(path: &Path, rows: impl Iterator<Item = (B, Level, String, f64)>) -> Result<()> {
    let file = fs::File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    let err = |e: csv::Error| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    w.write_record(["backend", "level", "node", "rmspe"]).map_err(err)?;
    for (backend, level, node, score) in rows {
        w.write_record([backend.as_ref(), level.as_str(), &node, &format!("{score}")])
            .map_err(err)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn print_summary(label: &str, levels: &[LevelScores]) {
    let mut err = std::io::stderr().lock();
    for l in levels {
        match &l.summary {
            Some(s) => {
                let _ = writeln!(
                    err,
                    "{label:>8} {:>6}  n={:<4} median={:>7.3}%  q1={:>7.3}%  q3={:>7.3}%  outliers={}",
                    l.level.as_str(),
                    s.count,
                    s.median,
                    s.q1,
                    s.q3,
                    l.outliers.len()
                );
            }
            None => {
                let _ = writeln!(err, "{label:>8} {:>6}  no scores", l.level.as_str());
            }
        }
    }
}

/// Parsed report, for callers that post-process `report.json`.
pub fn read_report(path: &Path) -> Result<ExperimentReport> {
    io::read_json(path)
}
