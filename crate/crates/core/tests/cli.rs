mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::{repo_root, report_schema, schema_errors, SMALL_CASH};
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_robust-impulse"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn small_solve_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg =
        write(dir.path(), "cash.toml", &format!("{SMALL_CASH}\n[outputs]\npaths_csv = true\npaths_csv_limit = 3\n"));
    let out = dir.path().join("out");
    let o = run(&["solve", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    for key in ["y0", "se", "levels", "dual_gap"] {
        assert!(report.get(key).is_some(), "missing {key}");
    }
    assert!(report.get("run").is_some());
    let errors = schema_errors(&report_schema(), &report);
    assert!(errors.is_empty(), "{errors:#?}");

    let levels = fs::read_to_string(out.join("levels.csv")).unwrap();
    assert!(levels.starts_with("k,Y0,SE,sup_increment"));
    assert_eq!(levels.lines().count(), 1 + report["levels"].as_array().unwrap().len());
    let oracle = fs::read_to_string(out.join("oracle.csv")).unwrap();
    assert_eq!(oracle.lines().count(), 4);
    let strategy = fs::read_to_string(out.join("strategy.csv")).unwrap();
    assert_eq!(strategy.lines().count(), 4001);
    let paths = fs::read_to_string(out.join("paths.csv")).unwrap();
    assert!(paths.starts_with("step,time,path_id,x_0\n"));
    assert_eq!(paths.lines().count(), 1 + 21 * 3);
    assert!(out.join("diagnostics.csv").exists());
    assert!(out.join("surfaces.json").exists());

    // the sampled impulse sequence feeds straight back into `evaluate`
    let sample = out.join("sample_impulses.json");
    let o = run(&["evaluate", "--config", &cfg, "--strategy", sample.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let ev: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(ev["robust_value"].is_number());
    assert_eq!(ev["constant_actions"].as_array().unwrap().len(), 3);
}

#[test]
fn deterministic_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "cash.toml", SMALL_CASH);
    let mut reports = Vec::new();
    let out = dir.path().join("out");
    for _ in 0..2 {
        let o = run(&["solve", "--config", &cfg, "--seed", "1", "--out", out.to_str().unwrap(), "--deterministic"]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        reports.push(fs::read(out.join("report.json")).unwrap());
    }
    assert!(reports[0] == reports[1]);
    let report: Value = serde_json::from_slice(&reports[0]).unwrap();
    assert!(report.get("run").is_none());
    assert_eq!(report["seed"], 1);
}

#[test]
fn too_few_paths_exits_with_validation_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", &SMALL_CASH.replace("paths = 4000", "paths = 10"));
    let o = run(&["solve", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("monte_carlo.paths"));
}

#[test]
fn json_config_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "bad.json",
        r#"{"problem": {"name": "cash1d"}, "grid": {"steps": "fifty"}, "monte_carlo": {"paths": 100}}"#,
    );
    let o = run(&["validate", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("grid.steps"));
}

#[test]
fn invalid_tree_probability_is_a_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"
        [problem]
        name = "cash1d"
        overrides = { actions = [-10.0, 0.0, 10.0] }
        [grid]
        steps = 10
        [monte_carlo]
        paths = 2000
        [oracle]
        enabled = true
        steps = 10
    "#;
    let cfg = write(dir.path(), "steep.toml", text);
    let o = run(&["oracle", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("probability"));
}

#[test]
fn oracle_prints_csv() {
    let o = run(&["oracle", "--config", repo_root().join("configs/cash1d.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "r,value");
    assert_eq!(lines.len(), 5);
    let v3: f64 = lines[4].split(',').nth(1).unwrap().parse().unwrap();
    assert!((v3 + 0.35436).abs() < 1e-5);
}

#[test]
fn shipped_configs_validate() {
    for name in ["cash1d", "mart1d", "pathdep1d"] {
        let path = repo_root().join(format!("configs/{name}.toml"));
        let o = run(&["validate", "--config", path.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{name}: {}", String::from_utf8_lossy(&o.stderr));
    }
}
