use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ccopf"))
        .arg("-q")
        .args(args)
        .output()
        .expect("binary runs")
}

fn rts96_args() -> Vec<String> {
    vec![
        "--case".into(),
        data("case24_ieee_rts.m").display().to_string(),
        "--recipe".into(),
        data("rts96_recipe.json").display().to_string(),
        "--unc".into(),
        data("rts96_uncertainty.json").display().to_string(),
    ]
}

fn with<'a>(base: &'a [String], extra: &[&'a str]) -> Vec<&'a str> {
    base.iter().map(String::as_str).chain(extra.iter().copied()).collect()
}

fn pf_json(extra: &[&str]) -> Value {
    let case = data("case24_ieee_rts.m").display().to_string();
    let mut args = vec!["pf", "--case", &case];
    args.extend(extra);
    let out = run(&args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn power_flow_command() {
    let warm = pf_json(&[]);
    assert!(warm["max_mismatch"].as_f64().unwrap() <= 1e-8);
    let flat = pf_json(&["--flat-start"]);
    for key in ["theta", "v"] {
        for (a, b) in warm[key].as_array().unwrap().iter().zip(flat[key].as_array().unwrap()) {
            assert!((a.as_f64().unwrap() - b.as_f64().unwrap()).abs() <= 1e-7);
        }
    }
}

#[test]
fn missing_case_is_a_usage_error() {
    let out = run(&["pf", "--case", "/nonexistent/case.m"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
    assert_eq!(run(&["solve", "--bogus"]).status.code(), Some(2));
}

#[test]
fn too_few_monte_carlo_samples() {
    let dir = tempfile::tempdir().unwrap();
    let base = rts96_args();
    let d = dir.path().display().to_string();
    let mut args = vec!["solve", "--engine", "mc"];
    args.extend(with(&base, &["--eps", "0.001", "--samples", "100", "--out-dir", &d]));
    let out = run(&args);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

fn solve_outputs(dir: &Path, extra: &[&str]) -> (String, String) {
    let base = rts96_args();
    let d = dir.display().to_string();
    let mut args = vec!["solve"];
    args.extend(with(&base, &["--out-dir", &d]));
    args.extend(extra);
    let out = run(&args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let read = |n: &str| std::fs::read_to_string(dir.join(n)).unwrap();
    (read("solve_margins.csv"), read("solve.json"))
}

#[test]
fn solve_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = solve_outputs(a.path(), &["--seed", "7", "--engine", "mc", "--threads", "1"]);
    let second = solve_outputs(b.path(), &["--seed", "7", "--engine", "mc", "--threads", "4"]);
    assert_eq!(first, second);
    assert!(a.path().join("solve_iterations.csv").exists());
    assert!(a.path().join("solve_timings.json").exists());
}

#[test]
fn tightened_opf_matches_solve() {
    let dir = tempfile::tempdir().unwrap();
    let (_, report) = solve_outputs(dir.path(), &[]);
    let cost = serde_json::from_str::<Value>(&report).unwrap()["objective_cost"].as_f64().unwrap();
    let case = data("case24_ieee_rts.m").display().to_string();
    let recipe = data("rts96_recipe.json").display().to_string();
    let margins = dir.path().join("solve.json").display().to_string();
    let out = run(&["opf", "--case", &case, "--recipe", &recipe, "--margins", &margins]);
    assert_eq!(out.status.code(), Some(0));
    let sol: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((sol["cost"].as_f64().unwrap() - cost).abs() <= 1e-4 * cost);
}

#[test]
fn validate_reads_solve_report() {
    let dir = tempfile::tempdir().unwrap();
    solve_outputs(dir.path(), &[]);
    let base = rts96_args();
    let d = dir.path().display().to_string();
    let report = dir.path().join("solve.json").display().to_string();
    let mut args = vec!["validate"];
    args.extend(with(&base, &["--report", &report, "--samples", "2000", "--out-dir", &d]));
    let out = run(&args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["n_samples"], 2000);
    assert!(v["max_eps_emp"].as_f64().unwrap() <= 0.025);
    assert!(dir.path().join("violations.csv").exists());
}

#[test]
fn sweep_has_row_per_point_and_category() {
    let dir = tempfile::tempdir().unwrap();
    let base = rts96_args();
    let d = dir.path().display().to_string();
    let mut args = vec!["sweep"];
    args.extend(with(&base, &["--samples", "500", "--out-dir", &d]));
    let out = run(&args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 15 * 4);
    for cat in ["p", "q", "v", "i"] {
        assert_eq!(rows.iter().filter(|r| r.split(',').nth(1) == Some(cat)).count(), 15);
    }
}

#[test]
fn infeasible_tightening_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let base = rts96_args();
    let d = dir.path().display().to_string();
    let mut args = vec!["solve"];
    args.extend(with(&base, &["--sigma-scale", "10", "--out-dir", &d]));
    let out = run(&args);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("infeasible"));
}
