use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn dispbell(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dispbell"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

fn column(header: &[String], rows: &[Vec<String>], name: &str) -> Vec<f64> {
    let i = header.iter().position(|h| h == name).unwrap();
    rows.iter().map(|r| r[i].parse().unwrap()).collect()
}

#[test]
fn unknown_experiment_is_rejected_with_valid_names() {
    let out = dispbell(&["--experiment", "tmss"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("tmss-chsh") && err.contains("wstate-atom"), "{err}");
}

#[test]
fn invalid_override_is_named() {
    let out = dispbell(&["--experiment", "wstate", "--set", "lambda=0.2"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("`lambda`"), "{err}");

    let out = dispbell(&["--experiment", "wstate", "--set", "n=two"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`n`"));
}

#[test]
fn filter_check_writes_record_and_table() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("filter.json");
    let csv = dir.path().join("filter.csv");
    let out = dispbell(&[
        "--experiment",
        "filter-check",
        "--out",
        json.to_str().unwrap(),
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let record = read_json(&json);
    assert_eq!(record["converged"], true);
    assert_eq!(record["config"]["experiment"], "filter-check");
    assert!(record["result"]["max_deviation"].as_f64().unwrap() < 1e-4);
    let (header, rows) = read_csv(&csv);
    assert_eq!(header.last().map(String::as_str), Some("error"));
    assert_eq!(rows.len(), 2 * 27);
}

#[test]
fn empty_grid_gives_header_only_file() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("empty.csv");
    let out = dispbell(&[
        "--experiment",
        "tmss-chsh",
        "--set",
        "eta_from=0.9",
        "--set",
        "eta_to=0.6",
        "--set",
        "eta_step=0.05",
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("eta,violation,lambda"));
}

#[test]
fn tmss_violation_changes_sign_between_065_and_070() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("curve.csv");
    let out = dispbell(&[
        "--experiment",
        "tmss-chsh",
        "--set",
        "eta_from=0.6",
        "--set",
        "eta_to=0.9",
        "--set",
        "eta_step=0.05",
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let (header, rows) = read_csv(&csv);
    let eta = column(&header, &rows, "eta");
    let v = column(&header, &rows, "violation");
    assert_eq!(eta, vec![0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9]);
    for (e, v) in eta.iter().zip(&v) {
        assert_eq!(*v > 1e-12, *e > 0.67, "eta {e} violation {v}");
    }
}

#[test]
fn wstate_sweep_decreases_with_party_number() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("w.csv");
    let out = dispbell(&[
        "--experiment",
        "wstate",
        "--set",
        "n_from=2",
        "--set",
        "n_to=8",
        "--csv",
        csv.to_str().unwrap(),
        "--out",
        dir.path().join("w.json").to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let (header, rows) = read_csv(&csv);
    assert_eq!(rows.len(), 7);
    let t = column(&header, &rows, "threshold");
    assert!(t.windows(2).all(|w| w[1] < w[0]), "{t:?}");
    assert!((t[3] - 0.739).abs() < 5e-3, "N=5 threshold {}", t[3]);
}

#[test]
fn single_thresholds_match_reference_values() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [(&[&str], f64); 2] = [
        (&["--experiment", "wstate-atom", "--set", "n=4"], 0.5),
        (&["--experiment", "tmss-chsh", "--nmax", "5"], 0.667),
    ];
    for (i, (args, expected)) in cases.iter().enumerate() {
        let path = dir.path().join(format!("{i}.json"));
        let mut all = args.to_vec();
        all.extend(["--out", path.to_str().unwrap()]);
        let out = dispbell(&all);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let record = read_json(&path);
        let eta = record["result"]["threshold"].as_f64().unwrap();
        assert!((eta - expected).abs() < 5e-3, "{args:?}: {eta}");
        assert!(record["truncation_delta"].as_f64().unwrap() <= 1e-6);
        assert!(record["wall_time_s"].as_f64().unwrap() > 0.0);
        assert_eq!(record["version"], env!("CARGO_PKG_VERSION"));
    }
    let tmss = read_json(&dir.path().join("1.json"));
    assert!(tmss["result"]["configuration"]["lambda"].as_f64().is_some());
    assert!(tmss["result"]["squeezing_db"].as_f64().is_some());
}

#[test]
fn rerun_reproduces_reported_digits() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first.json");
    let second = dir.path().join("second.json");
    let out = dispbell(&["--experiment", "wstate", "--set", "n=3", "--seed", "7", "--out", first.to_str().unwrap()]);
    assert!(out.status.success());
    let out = dispbell(&["--rerun", first.to_str().unwrap(), "--out", second.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (a, b) = (read_json(&first), read_json(&second));
    assert_eq!(b["config"]["seed"], 7);
    assert_eq!(a["result"]["threshold"], b["result"]["threshold"]);
    assert_eq!(a["result"]["optimal_params"], b["result"]["optimal_params"]);
    assert_eq!(a["result"]["trace"], b["result"]["trace"]);
}
