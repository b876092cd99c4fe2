use std::path::Path;
use std::process::{Command, Output};

fn oddshts(args: &[&str], paths: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_oddshts"));
    cmd.args(args);
    for (flag, p) in paths {
        cmd.arg(flag).arg(p);
    }
    cmd.output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn simulate(dir: &Path) {
    let o = oddshts(&["simulate", "--vars", "60", "--steps", "120", "--seed", "5"], &[("--out", dir)]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn simulate_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    simulate(a.path());
    simulate(b.path());
    for f in ["series.csv", "hierarchy.json", "hierarchy_spec.json", "config.json"] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn simulate_forecast_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate(d);
    let series_before = std::fs::read(d.join("series.csv")).unwrap();
    let hier_before = std::fs::read(d.join("hierarchy.json")).unwrap();

    let fc = d.join("fc");
    let o = oddshts(
        &["forecast", "--backend", "ar"],
        &[
            ("--hierarchy", &d.join("hierarchy.json")),
            ("--series", &d.join("series.csv")),
            ("--config", &d.join("config.json")),
            ("--out", &fc),
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read(d.join("series.csv")).unwrap(), series_before);
    assert_eq!(std::fs::read(d.join("hierarchy.json")).unwrap(), hier_before);

    let forecast = std::fs::read_to_string(fc.join("forecast.csv")).unwrap();
    assert!(forecast.starts_with("level,id,step,value\n"));
    assert!(forecast.lines().any(|l| l.starts_with("top,TOP,30,")));
    let diag: serde_json::Value = serde_json::from_slice(&std::fs::read(fc.join("diagnostics.json")).unwrap()).unwrap();
    assert_eq!(diag["smoothing"], 0.5);

    let ev = d.join("ev");
    let o = oddshts(
        &["evaluate", "--label", "ar"],
        &[("--forecast", &fc.join("forecast.csv")), ("--actual", &fc.join("actual.csv")), ("--out", &ev)],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let scores: serde_json::Value = serde_json::from_slice(&std::fs::read(ev.join("scores.json")).unwrap()).unwrap();
    assert_eq!(scores.as_array().unwrap().len(), 3);
    assert_eq!(scores[0]["nodes"].as_array().unwrap().len(), 1);
    let csv = std::fs::read_to_string(ev.join("scores.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().starts_with("ar,top,TOP,"));

    // scoring actuals against themselves gives zero everywhere
    let self_ev = d.join("self");
    let o = oddshts(
        &["evaluate"],
        &[("--forecast", &fc.join("actual.csv")), ("--actual", &fc.join("actual.csv")), ("--out", &self_ev)],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(self_ev.join("scores.csv")).unwrap();
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",0")), "{csv}");
}

#[test]
fn missing_hierarchy_file_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path());
    let missing = dir.path().join("no_such_hierarchy.json");
    let o = oddshts(
        &["forecast"],
        &[("--hierarchy", &missing), ("--series", &dir.path().join("series.csv")), ("--out", &dir.path().join("o"))],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no_such_hierarchy.json"), "{}", stderr(&o));
}

#[test]
fn experiment_with_naive_backend() {
    let dir = tempfile::tempdir().unwrap();
    let o = oddshts(&["experiment", "--runs", "2", "--backend", "naive", "--seed", "8"], &[("--out", dir.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["runs"].as_array().unwrap().len(), 2);
    assert_eq!(report["scores"][0]["backend"], "naive");
    assert!(std::fs::read_to_string(dir.path().join("scores.csv")).unwrap().starts_with("backend,level,node,rmspe\n"));
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = oddshts(&["experiment", "--runs", "2"], &[("--out", dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--seed"));
    let o = oddshts(&["experiment", "--seed", "1", "--backend", "lstm"], &[("--out", dir.path())]);
    assert_eq!(o.status.code(), Some(2));
}
