use std::path::Path;
use std::process::{Command, Output};

use hopflax_core::cli::RunConfig;
use serde_json::Value;

fn hopflax(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hopflax"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn config_errors_exit_2_with_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.json", r#"{"quotient": {"points": "many"}}"#);
    let out = hopflax(&["evaluate", "--config", &bad, "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("quotient.points"), "{err}");

    let unknown = write(dir.path(), "unknown.json", r#"{"time": {"end": 1.0, "cuont": 3}}"#);
    let out = hopflax(&["evaluate", "--config", &unknown, "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("time"));

    let out = hopflax(&["evaluate", "--beta", "1.2", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("o").exists());
}

#[test]
fn numerical_failure_exits_3_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    // Every path has E_t < 1 at such short times, so the conditioned mean is undefined.
    let cfg = write(dir.path(), "c.json", r#"{"time": {"end": 1e-9, "count": 2}, "n_paths": 200}"#);
    let out = hopflax(
        &["evaluate", "--config", &cfg, "--condition-et-ge-1", "on", "--out", "o"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!dir.path().join("o").exists());
}

#[test]
fn sample_at_time_zero_is_all_zeros() {
    let dir = tempfile::tempdir().unwrap();
    let out = hopflax(&["sample", "--time", "0", "--paths", "500", "--out", "s"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(dir.path().join("s/inverse.csv")).unwrap();
    let values: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(values.len(), 500);
    assert!(values.iter().all(|v| v.parse::<f64>().unwrap() == 0.0));
    for f in ["stable.csv", "moments.csv", "sample.json"] {
        assert!(dir.path().join("s").join(f).exists());
    }
}

#[test]
fn evaluate_is_byte_identical_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    for w in ["1", "8"] {
        let out = hopflax(
            &["evaluate", "--paths", "5000", "--seed", "11", "--workers", w, "--out", &format!("w{w}")],
            dir.path(),
        );
        assert_eq!(out.status.code(), Some(0));
    }
    for f in ["field.csv", "field.json"] {
        let a = std::fs::read(dir.path().join("w1").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("w8").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
}

#[test]
fn emitted_metadata_round_trips_and_seed_flag_wins() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{"seed": 1, "n_paths": 300, "beta": 0.7, "time": {"count": 3}}"#,
    );
    let out = hopflax(
        &["evaluate", "--config", &cfg, "--seed", "99", "--beta", "0.3", "--out", "e"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let meta: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("e/field.json")).unwrap()).unwrap();
    let back = RunConfig::from_value(meta["config"].clone()).unwrap();
    assert_eq!(back.seed, 99);
    assert_eq!(back.beta, 0.7, "config file wins over --beta");
    assert_eq!(back.n_paths, 300);
    assert_eq!(back.time.count, 3);
    assert_eq!(back.to_value(), meta["config"]);
    let rows = std::fs::read_to_string(dir.path().join("e/field.csv")).unwrap().lines().count();
    assert_eq!(rows, 1 + 41 * 3);
}

#[test]
fn transform_accepts_a_tabulated_lagrangian() {
    let dir = tempfile::tempdir().unwrap();
    let mut table = String::from("p,value\n");
    for k in 0..=40 {
        let v = -2.0 + 0.1 * k as f64;
        table.push_str(&format!("{v},{}\n", v.powi(4) / 4.0 + v * v / 2.0));
    }
    let table = write(dir.path(), "l.csv", &table);
    let cfg = write(
        dir.path(),
        "c.json",
        &format!(
            r#"{{"lagrangian": {{"kind": "tabulated", "file": {table:?}, "dual_interval": [-1.0, 1.0], "dual_points": 21, "c": 2.0}}}}"#
        ),
    );
    let out = hopflax(&["transform", "--config", &cfg, "--out", "t"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let meta: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("t/transform.json")).unwrap()).unwrap();
    assert_eq!(meta["quadratic"], Value::Bool(false));
    assert_eq!(meta["hamiltonian_convexity"]["convex"], Value::Bool(true));
    assert_eq!(meta["constants"]["c_derived"], Value::Bool(false));
    let h = std::fs::read_to_string(dir.path().join("t/hamiltonian.csv")).unwrap();
    assert_eq!(h.lines().count(), 22);
}

#[test]
fn verify_identity_quadratic_preset_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = hopflax(&["verify", "--preset", "identity-quadratic", "--out", "v"], dir.path());
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(out.status.code(), Some(0), "{err}");
    let report: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("v/report.json")).unwrap()).unwrap();
    assert_eq!(report["all_passed"], Value::Bool(true));
    let names: Vec<&str> = report["checks"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["name"].as_str().unwrap())
        .collect();
    for expected in [
        "moments",
        "upper_bound",
        "time_monotonicity",
        "spatial_modulus",
        "initial_layer_slope",
        "initial_layer_bound",
        "time_holder",
        "dpp",
        "subsolution",
        "subsolution_closed_form",
        "classical_limit",
    ] {
        assert!(names.contains(&expected), "missing {expected}");
    }
    assert!(std::fs::read_to_string(dir.path().join("v/report.txt")).unwrap().contains("overall: PASS"));
}
