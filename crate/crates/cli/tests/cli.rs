use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn relkin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_relkin"))
        .args(args)
        .env("RELKIN_THREADS", "2")
        .output()
        .expect("failed to launch relkin")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn run_in(dir: &TempDir, experiment: &str, body: &str, extra: &[&str]) -> (Output, PathBuf) {
    let cfg = write_config(dir.path(), &format!("{experiment}.json"), body);
    let out = dir.path().join(format!("out-{experiment}"));
    let mut args = vec![experiment, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    (relkin(&args), out)
}

fn report(out: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap()
}

#[test]
fn list_names_every_experiment() {
    let o = relkin(&["list"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("free-particle"));
    assert!(text.contains("spectral"));
    assert!(text.lines().count() >= 10);
}

#[test]
fn identities_pass_in_natural_units() {
    let dir = TempDir::new().unwrap();
    let (o, out) = run_in(&dir, "identities", r#"{"natural_units": true}"#, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&out);
    assert_eq!(r["pass"], Value::Bool(true));
    assert_eq!(r["experiment"], "identities");
    assert_eq!(r["config_hash"].as_str().unwrap().len(), 64);
    for c in r["checks"].as_array().unwrap() {
        for key in ["name", "value", "target", "tolerance", "pass"] {
            assert!(c.get(key).is_some(), "check lacks {key}");
        }
    }
    assert!(out.join("identities.csv").exists());
}

#[test]
fn ratio_table_reports_the_electron_rate() {
    let dir = TempDir::new().unwrap();
    let (o, out) = run_in(&dir, "ratio-table", r#"{"constants": {"preset": "electron"}}"#, &[]);
    assert_eq!(o.status.code(), Some(0));
    let r = report(&out);
    let rate = r["checks"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["name"] == "electron_rate")
        .unwrap()["value"]
        .as_f64()
        .unwrap();
    assert!((rate / 7.7634e20 - 1.0).abs() < 5e-5);
    let table = fs::read_to_string(out.join("ratio_table.csv")).unwrap();
    assert!(table.starts_with("tau,rate_tau,ratio,ratio_from_density\n"));
    assert!(!table.contains('\r'));
}

#[test]
fn same_seed_gives_identical_csv() {
    let dir = TempDir::new().unwrap();
    let body = r#"{"natural_units": true,
        "field": {"kind": "free_particle_rest", "boost": [0.2, 0.1, 0.0]},
        "simulation": {"step": 0.01, "n_steps": 20, "n_paths": 50, "seed": 3}}"#;
    let (a, out) = run_in(&dir, "simulate", body, &[]);
    assert_eq!(a.status.code(), Some(0));
    let first = fs::read(out.join("ensemble.csv")).unwrap();
    let (b, out) = run_in(&dir, "simulate", body, &[]);
    assert_eq!(b.status.code(), Some(0));
    assert_eq!(first, fs::read(out.join("ensemble.csv")).unwrap());
    let (c, out) = run_in(&dir, "simulate", body, &["--seed", "4"]);
    assert_eq!(c.status.code(), Some(0));
    assert_ne!(first, fs::read(out.join("ensemble.csv")).unwrap());
    assert_eq!(report(&out)["seed"], 4);
}

#[test]
fn missing_seed_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let body = r#"{"natural_units": true,
        "simulation": {"step": 0.01, "n_steps": 5, "n_paths": 5}}"#;
    let (o, _) = run_in(&dir, "simulate", body, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("seed"));
    let (o, _) = run_in(&dir, "simulate", body, &["--seed", "1"]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn invalid_configs_exit_with_two() {
    let dir = TempDir::new().unwrap();
    let (o, _) = run_in(&dir, "identities", r#"{"natural_units": true, "colour": "red"}"#, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("colour"));
    let (o, _) = run_in(&dir, "identities", r#"{"experiment": "spectral", "natural_units": true}"#, &[]);
    assert_eq!(o.status.code(), Some(2));
    let (o, _) = run_in(&dir, "spectral", r#"{"natural_units": true}"#, &[]);
    assert_eq!(o.status.code(), Some(2));
    let (o, _) = run_in(&dir, "no-such-thing", r#"{"natural_units": true}"#, &[]);
    assert_eq!(o.status.code(), Some(2));
    let o = relkin(&["identities", "--config", "/nonexistent/relkin.json"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn failing_check_exits_with_one() {
    let dir = TempDir::new().unwrap();
    let body = r#"{"natural_units": true, "tolerances": {"normalization": 0.0}}"#;
    let (o, out) = run_in(&dir, "free-particle", body, &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("FAIL normalization"));
    let r = report(&out);
    assert_eq!(r["pass"], Value::Bool(false));
    let passes: Vec<bool> = r["checks"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["pass"].as_bool().unwrap())
        .collect();
    assert!(passes.iter().any(|p| *p) && passes.iter().any(|p| !*p));
}

#[test]
fn natural_units_flag_overrides_constants() {
    let dir = TempDir::new().unwrap();
    let (o, _) = run_in(&dir, "nelson-check", r#"{}"#, &[]);
    assert_eq!(o.status.code(), Some(2));
    let (o, out) = run_in(&dir, "nelson-check", r#"{"constants": {"preset": "electron"}}"#, &["--natural-units"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(report(&out)["pass"], Value::Bool(true));
}

#[test]
fn sampled_grid_field() {
    let dir = TempDir::new().unwrap();
    let mut csv = String::from("x0,x1,x2,x3,u0,u1,u2,u3,v0,v1,v2,v3\n");
    for a in [-1, 0, 1] {
        for b in [-1, 0, 1] {
            for c in [-1, 0, 1] {
                for d in [-1, 0, 1] {
                    csv.push_str(&format!("{a},{b},{c},{d},0,0,0,0,1,0,0,0\n"));
                }
            }
        }
    }
    fs::write(dir.path().join("rest.csv"), csv).unwrap();
    let body = r#"{"natural_units": true,
        "field": {"kind": "grid", "path": "rest.csv"},
        "params": {"points": [[0.1, 0.2, -0.3, 0.4], [-0.5, 0.5, 0.5, -0.5]]}}"#;
    let (o, out) = run_in(&dir, "nelson-check", body, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("nelson.json").exists());
    // outside the sampled box the field is undefined
    let body = r#"{"natural_units": true,
        "field": {"kind": "grid", "path": "rest.csv"},
        "params": {"points": [[5.0, 0.0, 0.0, 0.0]]}}"#;
    let (o, _) = run_in(&dir, "nelson-check", body, &[]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn spectral_writes_operators_and_spectrum() {
    let dir = TempDir::new().unwrap();
    let body = r#"{"natural_units": true,
        "grid": {"lengths": [6.283185307179586], "points": [128], "v": [2.0], "w": [[10.0]], "x0_index": 40}}"#;
    let (o, out) = run_in(&dir, "spectral", body, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["operator_backward.csv", "operator_forward.csv", "density.csv", "spectrum.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let spec: Value = serde_json::from_str(&fs::read_to_string(out.join("spectrum.json")).unwrap()).unwrap();
    assert_eq!(spec["eigenvalues"].as_array().unwrap().len(), 128);
}
