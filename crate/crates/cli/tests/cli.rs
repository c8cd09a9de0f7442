use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn capgen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_capgen"))
        .args(args)
        .output()
        .expect("spawn capgen")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, body).unwrap();
    path.display().to_string()
}

#[test]
fn verify_bounds_writes_layout() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"schema_version": 1, "experiment": "verify-bounds", "generator": {"count": 10}}"#,
    );
    let out_root = dir.path().join("out");
    let out = capgen(&["verify-bounds", "--config", &cfg, "--out", out_root.to_str().unwrap(), "--jobs", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("violations: 0"), "{stdout}");
    let runs: Vec<_> = fs::read_dir(out_root.join("verify-bounds")).unwrap().collect();
    assert_eq!(runs.len(), 1);
    let run = runs[0].as_ref().unwrap().path();
    for f in ["config.json", "results.csv", "summary.json"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    assert!(!run.join("violations.json").exists());
}

#[test]
fn malformed_config_exits_2_and_names_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"schema_version": 1, "experiment": "verify-bounds", "bogus_field": 3}"#,
    );
    let out = capgen(&["verify-bounds", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus_field"));
}

#[test]
fn mismatched_experiment_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"schema_version": 1, "experiment": "sweep"}"#);
    let out = capgen(&["fruit-forage", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn solver_budget_exhaustion_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"schema_version": 1, "experiment": "verify-bounds",
            "generator": {"count": 3}, "solver": {"tol": 1e-12, "max_iters": 1}}"#,
    );
    let out_root = dir.path().join("out");
    let out = capgen(&["verify-bounds", "--config", &cfg, "--out", out_root.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn missing_replay_file_exits_2() {
    let out = capgen(&["replay", "/nonexistent/violations.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/violations.json"));
}
