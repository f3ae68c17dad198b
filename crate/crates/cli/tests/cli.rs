use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"{
    "simulate": {"nx": 16, "steps": 20, "output_every": 10, "distribution": {"particles": 2000}},
    "kernels": {"samples": 5000, "adversarial": 200},
    "verify": {"fields": 2, "characteristics": 4, "t_end": 0.5, "sign_samples": 10000,
               "lipschitz_paths": 20, "vacuum_steps": 200}
}"#;

fn rvm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rvm")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.in.json");
    fs::write(&path, text).unwrap();
    path.display().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn non_superlinear_damping_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"force": {"m": 1.5}}"#);
    let o = rvm(&["trace", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(126));
    assert!(stderr(&o).contains("M>2"), "{}", stderr(&o));
}

#[test]
fn low_rate_is_rejected_with_the_minimal_rate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"force": {"a": 1.0}}"#);
    let o = rvm(&["trace", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(126));
    assert!(stderr(&o).contains("minimal admissible A = 5"), "{}", stderr(&o));
}

#[test]
fn unknown_config_field_names_its_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"trace": {"dtt": 0.1}}"#);
    let o = rvm(&["trace", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(126));
    assert!(stderr(&o).contains("trace"), "{}", stderr(&o));
}

#[test]
fn bad_flag_is_a_usage_error() {
    assert_eq!(rvm(&["verify", "--no-such-flag"]).status.code(), Some(126));
    assert_eq!(rvm(&["--help"]).status.code(), Some(0));
}

#[test]
fn verify_is_deterministic_and_exits_with_failure_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = rvm(&["verify", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "5"]);
        (o, fs::read_to_string(out.join("report.json")).unwrap())
    };
    let (first, report) = run("a");
    let (_, again) = run("b");
    assert_eq!(report, again);
    let json: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(json["seed"], 5);
    let failures = json["failures"].as_u64().unwrap();
    let counted = json["entries"].as_array().unwrap().iter().filter(|e| e["status"] != "pass").count() as u64;
    assert_eq!(failures, counted);
    assert_eq!(first.status.code(), Some(failures.min(125) as i32));
    let stdout = String::from_utf8_lossy(&first.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS ") || l.starts_with("FAIL ")).count(), json["checks"].as_u64().unwrap() as usize);
}

#[test]
fn ode_without_out_streams_csv() {
    let o = rvm(&["ode", "--C", "0.5", "--t", "0.5", "--dt", "0.01"]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    let mut lines = stdout.lines();
    assert_eq!(lines.next(), Some("t,W,Z,envelope,log_W,log_Z,log_envelope,log_companion"));
    assert_eq!(lines.count(), 51);
    assert!(stderr(&o).contains("companion envelope"));
    assert!(matches!(o.status.code(), Some(0..=2)));
}

#[test]
fn kernels_report_goes_to_requested_path() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("k.json");
    let o = rvm(&[
        "kernels",
        "--out",
        dir.path().to_str().unwrap(),
        "--samples",
        "2000",
        "--adversarial",
        "100",
        "--report",
        report.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["samples"], 2000);
    assert!(dir.path().join("config.json").exists());
    assert!(dir.path().join("manifest.json").exists());
}

#[test]
fn trace_writes_one_csv_per_characteristic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"trace": {"characteristics": 3, "t_end": 0.2}}"#);
    let o = rvm(&["trace", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for i in 0..3 {
        assert!(dir.path().join(format!("trace_{i:03}.csv")).exists());
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["characteristics"].as_array().unwrap().len(), 3);
}
