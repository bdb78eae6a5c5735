use std::path::Path;
use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_snrlab");

fn config(dir: &Path, model: &str, extra: &str) -> std::path::PathBuf {
    let text = format!(
        r#"{{
  "model": {model},
  "grid": {{"n_steps": 256}},
  "lambda_grid": {{"start": 0.0, "stop": 1.0, "count": 3}},
  "engine": {{"quadrature": {{"nodes": 32}}}},
  "n_paths": 256,
  "seed": 17,
  {extra}
  "outputs": {{"directory": "{}", "formats": ["csv", "json"]}}
}}"#,
        dir.join("out").display()
    );
    let path = dir.join("scenario.json");
    std::fs::write(&path, text).unwrap();
    path
}

fn run(args: &[&str]) -> (i32, String) {
    let out = Command::new(BIN).args(args).env_remove("SNRLAB_OUT_DIR").output().unwrap();
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

const ZERO: &str = r#"{"kind": "zero"}"#;
const GAUSS: &str = r#"{"kind": "gauss_channel", "params": {"variance": 1.0}}"#;

#[test]
fn verify_on_zero_model_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), ZERO, "");
    let (code, err) = run(&["verify", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let csv = std::fs::read_to_string(dir.path().join("out/verify.csv")).unwrap();
    assert!(csv.starts_with("quantity,lambda,estimate,stderr,oracle,rel_err,pass\n"));
    assert!(!csv.contains(",false"));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/verify.json")).unwrap()).unwrap();
    assert_eq!(json["schema_version"], 1);
}

#[test]
fn malformed_config_exits_2_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), ZERO, "");
    let text = std::fs::read_to_string(&cfg).unwrap().replace("\"n_paths\": 256", "\"n_paths\": -5");
    std::fs::write(&cfg, text).unwrap();
    let (code, _) = run(&["verify", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(!dir.path().join("out").exists());
    let (code, _) = run(&["verify"]);
    assert_eq!(code, 2);
    let (code, _) = run(&["frobnicate"]);
    assert_eq!(code, 2);
}

#[test]
fn sweep_reports_mutual_information_with_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), GAUSS, "");
    let (code, err) = run(&["sweep", "--config", cfg.to_str().unwrap()]);
    assert!(code == 0 || code == 1, "{err}");
    let csv = std::fs::read_to_string(dir.path().join("out/sweep.csv")).unwrap();
    let row = csv
        .lines()
        .find(|l| l.starts_with("mutual_information,1.0,"))
        .expect("I(1) row");
    let cols: Vec<&str> = row.split(',').collect();
    let oracle: f64 = cols[4].parse().unwrap();
    assert!((oracle - 0.346574).abs() < 1e-6);
    let est: f64 = cols[2].parse().unwrap();
    assert!((est - oracle).abs() < 0.1, "{est}");
}

#[test]
fn raw_path_functionals_cannot_be_swept() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), r#"{"kind": "path_functional", "params": {"function": "sin"}}"#, "");
    let (code, _) = run(&["sweep", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code, 2);
    // but the Malliavin checks and simulation still run
    let (code, err) = run(&["verify", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let (code, err) = run(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
}

#[test]
fn weight_collapse_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), GAUSS, "");
    let text = std::fs::read_to_string(&cfg)
        .unwrap()
        .replace(r#"{"quadrature": {"nodes": 32}}"#, r#"{"particle": {"particles": 4}}"#);
    std::fs::write(&cfg, text).unwrap();
    let (code, err) = run(&["verify", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code, 3, "{err}");
    assert!(err.contains("collapse"), "{err}");
}

#[test]
fn outputs_are_bit_identical_across_runs_and_threads() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), GAUSS, r#""antithetic": true,"#);
    let c = cfg.to_str().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(run(&["simulate", "--config", c, "--threads", "1", "--out", a.to_str().unwrap()]).0 == 0);
    assert!(run(&["simulate", "--config", c, "--threads", "3", "--out", b.to_str().unwrap()]).0 == 0);
    for f in ["simulate.csv", "simulate.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let s = dir.path().join("s");
    run(&["simulate", "--config", c, "--seed", "18", "--out", s.to_str().unwrap()]);
    assert_ne!(std::fs::read(a.join("simulate.csv")).unwrap(), std::fs::read(s.join("simulate.csv")).unwrap());
}

#[test]
fn output_directory_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), ZERO, "");
    let env_dir = dir.path().join("env");
    let status = Command::new(BIN)
        .args(["verify", "--config", cfg.to_str().unwrap()])
        .env("SNRLAB_OUT_DIR", &env_dir)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(env_dir.join("verify.csv").exists());
    assert!(!dir.path().join("out").exists());
    let flag_dir = dir.path().join("flag");
    let status = Command::new(BIN)
        .args(["verify", "--config", cfg.to_str().unwrap(), "--out", flag_dir.to_str().unwrap()])
        .env("SNRLAB_OUT_DIR", &env_dir)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(flag_dir.join("verify.csv").exists());
}

#[test]
fn report_merges_prior_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), ZERO, "");
    let c = cfg.to_str().unwrap();
    let (code, _) = run(&["report", "--config", c]);
    assert_eq!(code, 2);
    assert_eq!(run(&["verify", "--config", c]).0, 0);
    assert_eq!(run(&["simulate", "--config", c]).0, 0);
    assert_eq!(run(&["report", "--config", c]).0, 0);
    let csv = std::fs::read_to_string(dir.path().join("out/report.csv")).unwrap();
    assert!(csv.contains("verify/carleman_satisfied_fraction,"));
    assert!(csv.contains("verify/failed,,0.0,,,,true"));
    assert!(csv.contains("simulate/rows,"));
}
