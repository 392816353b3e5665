use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn nfwbo(args: &[&str], env_out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_nfwbo"));
    cmd.args(args).env_remove("NFWBO_OUT_DIR");
    if let Some(dir) = env_out {
        cmd.env("NFWBO_OUT_DIR", dir);
    }
    cmd.output().unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("cfg.json");
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

const RANDOM_TINY: &str = r#"{
  "objective": {"kind": "synthetic", "name": "mf_branin"},
  "methods": ["random"],
  "budget": 3,
  "seeds": [0]
}"#;

#[test]
fn list_objectives_names_all_synthetics() {
    let out = nfwbo(&["list-objectives"], None);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["mf_branin", "mf_park4", "mf_curve"] {
        assert!(text.contains(name), "{text}");
    }
}

#[test]
fn validate_accepts_good_and_rejects_bad_configs() {
    let dir = tempfile::tempdir().unwrap();
    let good = write_config(dir.path(), RANDOM_TINY);
    assert_eq!(nfwbo(&["validate", "--config", &good], None).status.code(), Some(0));

    let bad = write_config(dir.path(), &RANDOM_TINY.replace("\"budget\": 3", "\"budget\": -1"));
    let out = nfwbo(&["validate", "--config", &bad], None);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("budget"));

    let missing = dir.path().join("nope.json");
    assert_eq!(nfwbo(&["validate", "--config", missing.to_str().unwrap()], None).status.code(), Some(1));
}

#[test]
fn run_writes_artifacts_to_out() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), RANDOM_TINY);
    let out_dir = dir.path().join("results");
    let out = nfwbo(&["run", "--config", &cfg, "--out", out_dir.to_str().unwrap(), "--workers", "2"], None);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    let mut lines = summary.lines();
    assert_eq!(lines.next(), Some("method,objective,seeds,mean_best,std_best,mean_cost_to_95pct"));
    assert!(lines.next().unwrap().starts_with("random,mf_branin,1,"));
    assert_eq!(fs::read_dir(out_dir.join("traces")).unwrap().count(), 1);
}

#[test]
fn output_directory_falls_back_to_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), RANDOM_TINY);
    let env_dir = dir.path().join("from_env");
    let out = nfwbo(&["run", "--config", &cfg], Some(&env_dir));
    assert_eq!(out.status.code(), Some(0));
    assert!(env_dir.join("summary.csv").exists());
}

#[test]
fn run_with_invalid_config_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &RANDOM_TINY.replace("\"random\"", "\"cma_es\""));
    let out = nfwbo(&["run", "--config", &cfg, "--out", dir.path().to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn one_failed_run_exits_2_and_spares_the_others() {
    let dir = tempfile::tempdir().unwrap();
    let body = RANDOM_TINY
        .replace("\"seeds\": [0]", "\"seeds\": [0, 1]")
        .replace("\"budget\": 3", "\"budget\": 3, \"checkpoint\": true");
    let cfg = write_config(dir.path(), &body);
    let out_dir = dir.path().join("results");
    fs::create_dir_all(out_dir.join("checkpoints")).unwrap();
    fs::write(out_dir.join("checkpoints/mf_branin_random_seed1.json"), "{ corrupted").unwrap();

    let out = nfwbo(&["run", "--config", &cfg, "--out", out_dir.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed 1"));
    let failures = fs::read_to_string(out_dir.join("failures.csv")).unwrap();
    assert_eq!(failures.lines().count(), 2);
    assert!(failures.lines().nth(1).unwrap().starts_with("random,1,"));
    assert!(out_dir.join("traces/mf_branin_random_seed0.csv").exists());
    let summary = fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    assert!(summary.lines().nth(1).unwrap().starts_with("random,mf_branin,1,"));
}

#[test]
fn shipped_configs_validate() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["mf_curve.json", "external.json"] {
        let path = root.join(name);
        let out = nfwbo(&["validate", "--config", path.to_str().unwrap()], None);
        assert_eq!(out.status.code(), Some(0), "{name}: {}", String::from_utf8_lossy(&out.stderr));
    }
}
