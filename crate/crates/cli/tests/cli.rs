use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn roughflow(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_roughflow")).args(args).current_dir(dir).env_remove("ROUGHFLOW_THREADS").output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn schedule_prints_k_and_is_deterministic() {
    let t = tempfile::tempdir().unwrap();
    write(t.path(), "s.json", r#"{"schedule": {"rho0": 1.0, "c": 2.0}}"#);
    let a = roughflow(&["schedule", "-c", "s.json", "--out", "a"], t.path());
    let b = roughflow(&["schedule", "-c", "s.json", "--out", "b"], t.path());
    assert!(a.status.success(), "{}", stderr(&a));
    assert!(stdout(&a).contains("K = "));
    assert_eq!(stdout(&a).lines().take(12).collect::<Vec<_>>(), stdout(&b).lines().take(12).collect::<Vec<_>>());
    assert!(stdout(&a).contains("T_i"));
    let (x, y) = (std::fs::read(t.path().join("a/schedule.csv")).unwrap(), std::fs::read(t.path().join("b/schedule.csv")).unwrap());
    assert_eq!(x, y);
    let rep = json(&t.path().join("a/schedule.json"));
    assert_eq!(rep["all_hold"], Value::Bool(true));
}

#[test]
fn oracle_on_smooth_scalar_noise() {
    let t = tempfile::tempdir().unwrap();
    write(t.path(), "o.json", r#"{"model": {"kernel": "sin_tanh", "d": 1}, "noise": {"grid_n": 512}, "oracle": {"tolerance": 1e-3}}"#);
    let o = roughflow(&["oracle", "-c", "o.json", "--out", "o"], t.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let rep = json(&t.path().join("o/oracle.json"));
    assert_eq!(rep["reference"], "rk4");
    assert!(rep["max_relative_error"].as_f64().unwrap() <= 1e-3);
}

#[test]
fn failed_numeric_check_exits_with_three() {
    let t = tempfile::tempdir().unwrap();
    write(t.path(), "o.json", r#"{"model": {"kernel": "sin_tanh", "d": 1}, "noise": {"grid_n": 64}, "oracle": {"tolerance": 1e-12}}"#);
    let o = roughflow(&["oracle", "-c", "o.json", "--out", "o"], t.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(t.path().join("o/manifest.json").exists());
}

#[test]
fn invalid_exponents_cite_the_hypothesis() {
    let t = tempfile::tempdir().unwrap();
    write(t.path(), "bad.json", r#"{"model": {"kernel": "sin_tanh", "d": 2}, "params": {"beta_prime": 0.46, "beta_second": 0.47}}"#);
    let o = roughflow(&["solve", "-c", "bad.json", "--out", "o"], t.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("(H1)"), "{}", stderr(&o));
    assert!(!t.path().join("o").exists(), "validation must precede any output");
}

#[test]
fn other_validation_failures_exit_with_two() {
    let t = tempfile::tempdir().unwrap();
    write(t.path(), "k.json", r#"{"model": {"kernel": "nope", "d": 2}}"#);
    write(t.path(), "f.json", r#"{"model": {"kernel": "sin_tanh", "d": 2}, "typo": 1}"#);
    write(t.path(), "m.json", r#"{"model": "missing.json"}"#);
    write(t.path(), "kind.json", r#"{"kind": "schedule"}"#);
    for args in [
        vec!["solve", "-c", "k.json"],
        vec!["solve", "-c", "f.json"],
        vec!["solve", "-c", "m.json"],
        vec!["solve", "-c", "absent.json"],
        vec!["solve", "-c", "kind.json"],
        vec!["run", "-c", "f.json"],
    ] {
        let o = roughflow(&args, t.path());
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
    }
    let o = Command::new(env!("CARGO_BIN_EXE_roughflow")).args(["schedule", "-c", "kind.json"]).current_dir(t.path()).env("ROUGHFLOW_THREADS", "zero").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn model_files_resolve_relative_to_the_config() {
    let t = tempfile::tempdir().unwrap();
    std::fs::create_dir(t.path().join("cfg")).unwrap();
    write(t.path(), "cfg/model.json", r#"{"kernel": "bump_tanh", "d": 2}"#);
    write(t.path(), "cfg/solve.json", r#"{"kind": "solve", "model": "model.json", "noise": {"grid_n": 64}, "seeds": [3]}"#);
    let o = roughflow(&["run", "-c", "cfg/solve.json", "--out", "s"], t.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let m = json(&t.path().join("s/manifest.json"));
    assert_eq!(m["config"]["model"]["kernel"], "bump_tanh");
    assert_eq!(m["seeds"], serde_json::json!([3]));
    let diag = json(&t.path().join("s/diagnostics_seed3.json"));
    assert!(diag["max_chen_residual"].as_f64().unwrap() < 1e-12);
}

#[test]
fn noise_sample_writes_the_csv_schema() {
    let t = tempfile::tempdir().unwrap();
    let args = ["noise", "sample", "--hurst", "0.45", "--modes", "3", "--decay-p", "2", "--grid-n", "64", "--window", "0,1", "--seed", "9", "--out"];
    let a = roughflow(&[&args[..], &["a.csv"]].concat(), t.path());
    let b = roughflow(&[&args[..], &["b.csv"]].concat(), t.path());
    assert!(a.status.success(), "{}", stderr(&a));
    let x = std::fs::read_to_string(t.path().join("a.csv")).unwrap();
    assert_eq!(x.lines().next().unwrap(), "time,mode_1,mode_2,mode_3");
    assert_eq!(x.lines().count(), 66);
    assert_eq!(x, std::fs::read_to_string(t.path().join("b.csv")).unwrap());
    assert!(b.status.success() && t.path().join("a.csv.manifest.json").exists());
    let w = roughflow(&["noise", "sample", "--modes", "1", "--grid-n", "64", "--window", "-1,1", "--out", "w.csv"], t.path());
    assert!(w.status.success(), "{}", stderr(&w));
    let bad = roughflow(&["noise", "sample", "--modes", "1", "--window", "0,1,2", "--out", "x.csv"], t.path());
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn manifests_round_trip() {
    let t = tempfile::tempdir().unwrap();
    write(t.path(), "c.json", r#"{"model": {"kernel": "sin_tanh", "d": 2}, "noise": {"grid_n": 64}, "seeds": [1, 2], "taus": [0.0, 0.25, 0.5]}"#);
    let o = roughflow(&["rds", "-c", "c.json", "--out", "r"], t.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let again = roughflow(&["rerun", "r/manifest.json", "--out", "again"], t.path());
    assert!(again.status.success(), "{}", stderr(&again));
    assert!(stdout(&again).contains("byte for byte"));
    assert_eq!(std::fs::read(t.path().join("r/cocycle.csv")).unwrap(), std::fs::read(t.path().join("again/cocycle.csv")).unwrap());

    // a wrong artifact hash is a numeric failure, a tampered config a validation failure
    let mut m = json(&t.path().join("r/manifest.json"));
    m["artifacts"][0]["sha256"] = Value::String("0".repeat(64));
    write(t.path(), "hash.json", &m.to_string());
    assert_eq!(roughflow(&["rerun", "hash.json", "--out", "h"], t.path()).status.code(), Some(3));
    let mut m = json(&t.path().join("r/manifest.json"));
    m["config"]["t_end"] = serde_json::json!(0.5);
    write(t.path(), "cfg.json", &m.to_string());
    assert_eq!(roughflow(&["rerun", "cfg.json", "--out", "c"], t.path()).status.code(), Some(2));
}

#[test]
fn thread_count_does_not_change_results() {
    let t = tempfile::tempdir().unwrap();
    write(t.path(), "c.json", r#"{"model": {"kernel": "sin_tanh", "d": 2}, "noise": {"grid_n": 64}, "levels": [3, 4, 5, 6], "compare_level": 3}"#);
    let run = |threads: &str, out: &str| {
        Command::new(env!("CARGO_BIN_EXE_roughflow"))
            .args(["convergence", "-c", "c.json", "--out", out])
            .current_dir(t.path())
            .env("ROUGHFLOW_THREADS", threads)
            .output()
            .unwrap()
    };
    assert!(run("1", "one").status.success());
    assert!(run("3", "three").status.success());
    assert_eq!(std::fs::read(t.path().join("one/convergence.csv")).unwrap(), std::fs::read(t.path().join("three/convergence.csv")).unwrap());
}

#[test]
fn area_subcommand_reports_chen() {
    let t = tempfile::tempdir().unwrap();
    write(t.path(), "a.json", r#"{"model": {"kernel": "sin_tanh", "d": 2}, "noise": {"grid_n": 64}, "levels": [3, 4, 5, 6], "compare_level": 3}"#);
    let o = roughflow(&["area", "-c", "a.json", "--out", "a"], t.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let s = json(&t.path().join("a/area_summary.json"));
    assert!(s["chen_residual"].as_f64().unwrap() < 1e-10);
    assert_eq!(std::fs::read_to_string(t.path().join("a/area_convergence.csv")).unwrap().lines().count(), 4);
}
