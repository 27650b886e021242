//! End-to-end runs of the `cedar` binary.

use std::path::Path;
use std::process::{Command, Output};

fn cedar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cedar")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = cedar(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn simulate(dir: &Path) -> Vec<String> {
    let out = dir.join("sites");
    ok(&["simulate", "--p", "3", "--n", "20", "-M", "4", "--seed", "7", "--out", out.to_str().unwrap()]);
    (1..=4).map(|s| out.join(format!("site{s}.csv")).display().to_string()).collect()
}

#[test]
fn simulate_then_run_over_file_drop() {
    let dir = tempfile::tempdir().unwrap();
    let files = simulate(dir.path());
    assert!(dir.path().join("sites/truth.json").exists());
    let work = dir.path().join("work");
    let mut args = vec!["run", "--method", "cedar8", "--json", "--work-dir", work.to_str().unwrap()];
    args.extend(files.iter().map(String::as_str));
    let report: serde_json::Value = serde_json::from_str(&ok(&args)).unwrap();
    assert_eq!(report["p"], 3);
    assert_eq!(report["trace"]["rounds"], 1);
    assert_eq!(report["fit"]["beta"].as_array().unwrap().len(), 3);
    assert!(work.join("cedar8/round1/complete").exists());

    let mut args = vec!["run", "--method", "csla", "--work-dir", work.to_str().unwrap()];
    args.extend(files.iter().map(String::as_str));
    let table = ok(&args);
    assert!(table.contains("method csla"));
}

#[test]
fn run_reports_bad_csv_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let mut files = simulate(dir.path());
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "1,2,3,4\n1,2,oops,4\n").unwrap();
    files.push(bad.display().to_string());
    let work = dir.path().join("work");
    let mut args = vec!["run", "--method", "avgm", "--work-dir", work.to_str().unwrap()];
    args.extend(files.iter().map(String::as_str));
    let out = cedar(&args);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.csv") && err.contains("row 2"), "{err}");
}

#[test]
fn experiment_is_deterministic_and_reportable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"p": 4, "n": [8, 16], "M": 4, "K": [0, 4], "replicates": 2}"#).unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&["experiment", "--config", cfg.to_str().unwrap(), "--seed", "3", "--out", out.to_str().unwrap()]);
        std::fs::read(out.join("results.csv")).unwrap()
    };
    let a = run("a");
    assert_eq!(a, run("b"));
    let results = dir.path().join("a/results.csv");
    let plots = dir.path().join("plots");
    let summary = ok(&["report", results.to_str().unwrap(), "--gnuplot", plots.to_str().unwrap()]);
    assert!(summary.starts_with("method,p,n,M,K"));
    assert!(plots.join("cedar4.dat").exists());
}

#[test]
fn privacy_emits_one_row_per_leverage() {
    let out = ok(&["privacy", "--p", "4", "-K", "4", "--c", "1,0.25", "--reps", "20000", "--seed", "1"]);
    let mut rdr = csv::Reader::from_reader(out.as_bytes());
    assert_eq!(rdr.headers().unwrap().iter().collect::<Vec<_>>(), ["c", "eps_mc", "eps_forward_mean", "eps_expected"]);
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2);
    for r in &rows {
        let eps: f64 = r[1].parse().unwrap();
        let bound: f64 = r[2].parse().unwrap();
        assert!(eps > 0.0 && eps < bound);
    }
}

#[test]
fn invalid_arguments_fail_cleanly() {
    assert!(!cedar(&["privacy", "--p", "4", "-K", "4", "--c", "0.25", "--reps", "10", "--seed", "1"]).status.success());
    assert!(!cedar(&["run", "--method", "bogus", "--work-dir", "/tmp/x", "a.csv"]).status.success());
    assert!(!cedar(&["simulate", "--p", "3"]).status.success());
}
