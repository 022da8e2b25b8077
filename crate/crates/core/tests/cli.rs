use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_foliate");

fn write_config(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn foliate(args: &[&str], out: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .env("FOLIATE_OUTPUT_DIR", out)
        .output()
        .unwrap()
}

fn report(out: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap()
}

#[test]
fn maml_leaf_run_succeeds_and_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "leaf.json", r#"{"experiment": "maml-leaf"}"#);
    let out = dir.path().join("out");
    let o = foliate(&["run", cfg.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.lines().any(|l| l.starts_with("PASS leaf-loss-error")));
    for f in ["report.json", "timing.json", "leaf.csv"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    assert_eq!(report(&out)["summary"]["passed"], Value::Bool(true));
}

#[test]
fn config_output_dir_is_relative_to_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "leaf.json",
        r#"{"experiment": "maml-leaf", "output_dir": "results"}"#,
    );
    let o = Command::new(BIN)
        .args(["run", cfg.to_str().unwrap()])
        .env_remove("FOLIATE_OUTPUT_DIR")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(dir.path().join("results/report.json").exists());
}

#[test]
fn seed_override_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"experiment": "maml-corollary", "seed": 3}"#);
    let out = dir.path().join("out");
    let o = foliate(&["run", cfg.to_str().unwrap(), "--seed", "17"], &out);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(report(&out)["config"]["seed"], Value::from(17));
}

#[test]
fn different_seeds_give_different_corollary_cases() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"experiment": "maml-corollary"}"#);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    foliate(&["run", cfg.to_str().unwrap(), "--seed", "1"], &a);
    foliate(&["run", cfg.to_str().unwrap(), "--seed", "2"], &b);
    let cases = |p: &Path| std::fs::read(p.join("cases.csv")).unwrap();
    assert_ne!(cases(&a), cases(&b));
}

#[test]
fn unknown_experiment_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.json", r#"{"experiment": "teleport"}"#);
    let out = dir.path().join("out");
    let o = foliate(&["run", cfg.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
    assert!(!out.exists());
}

#[test]
fn unknown_parameter_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "bad.json",
        r#"{"experiment": "maml-leaf", "params": {"bogus": 1}}"#,
    );
    let out = dir.path().join("out");
    assert_eq!(foliate(&["run", cfg.to_str().unwrap()], &out).status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn missing_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let missing = dir.path().join("nope.json");
    assert_eq!(
        foliate(&["run", missing.to_str().unwrap()], &out).status.code(),
        Some(2)
    );
}

#[test]
fn failing_check_exits_one_but_still_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "t.json",
        r#"{"experiment": "proto-train", "params": {"steps": 0}}"#,
    );
    let out = dir.path().join("out");
    let o = foliate(&["run", cfg.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL nll-reduction"));
    assert_eq!(report(&out)["summary"]["passed"], Value::Bool(false));
}

#[test]
fn plot_prints_series_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "leaf.json", r#"{"experiment": "maml-leaf"}"#);
    let out = dir.path().join("out");
    foliate(&["run", cfg.to_str().unwrap()], &out);
    let o = foliate(&["plot", out.join("report.json").to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x,y,series"));
    assert_eq!(lines.count(), 16);
}

#[test]
fn check_suites_exit_by_outcome() {
    let dir = tempfile::tempdir().unwrap();
    let o = foliate(&["check", "maml"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    assert_eq!(foliate(&["check", "astrology"], dir.path()).status.code(), Some(2));
}
