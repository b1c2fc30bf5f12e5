use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn nlrepr(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nlrepr"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn report(out: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap()
}

const CHAIN: &str = r#"{"kind":"chain","horizon":1}"#;
const BINOMIAL: &str = r#"{"kind":"binomial","horizon":3}"#;
const LINEAR: &str = r#"{"variant":"linear"}"#;

#[test]
fn chain_representation() {
    let dir = tempfile::tempdir().unwrap();
    let o = nlrepr(
        &["repr", "solve", "--tree", CHAIN, "--operator", LINEAR, "--process", "[3, 1]"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("l.csv")).unwrap();
    assert_eq!(
        csv,
        "node_id,time,parent,value\n0,0,,-2.0000000000000000e0\n1,1,0,-1.0000000000000000e0\n"
    );
    let r = report(dir.path());
    assert_eq!(r["schema"], "nlrepr/1");
    assert_eq!(r["passed"], true);
}

#[test]
fn steep_driver_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let op = r#"{"variant":"z_driver","driver":{"form":"abs_z","kappa":1.5}}"#;
    let o = nlrepr(
        &["repr", "solve", "--tree", BINOMIAL, "--operator", op, "--process", r#"{"constant":1}"#],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("CONDITION_VIOLATED"));
}

#[test]
fn unchecked_axioms_report_a_failure() {
    let dir = tempfile::tempdir().unwrap();
    let op = r#"{"variant":"z_driver","driver":{"form":"abs_z","kappa":1.5}}"#;
    let o = nlrepr(&["axioms", "check", "--unchecked", "--tree", BINOMIAL, "--operator", op], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let r = report(dir.path());
    assert!(r["failed"].as_array().unwrap().iter().any(|v| v == "strict_monotonicity"));
}

#[test]
fn missing_input_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = nlrepr(&["repr", "solve", "--operator", LINEAR], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn alpha_maxmin_cannot_stop() {
    let dir = tempfile::tempdir().unwrap();
    let op = r#"{"variant":"alpha_maxmin","driver":{"form":"abs_z","kappa":0.2},"alpha":0.5}"#;
    let o = nlrepr(
        &["stop", "solve", "--tree", BINOMIAL, "--operator", op, "--process", r#"{"random":{"seed":1}}"#],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_file_with_relative_process() {
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path();
    fs::write(base.join("x.json"), "[0.5, 1.0, -1.0, 2.0, 0.0, 1.5, -0.5]").unwrap();
    fs::write(
        base.join("run.json"),
        r#"{"tree": {"kind": "binomial", "horizon": 2}, "operator": {"variant": "linear"}, "process": "x.json"}"#,
    )
    .unwrap();
    let out = base.join("out");
    let o = nlrepr(&["stop", "verify", "--config", base.join("run.json").to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&out);
    let v = r["results"]["value"].as_f64().unwrap();
    assert!((v - r["results"]["brute_force_value"].as_f64().unwrap()).abs() <= 1e-12);
}

#[test]
fn sweep_writes_both_layouts() {
    let dir = tempfile::tempdir().unwrap();
    let market = r#"{"kind":"crr","horizon":3,"spot":100,"rate":0.01,"vol":0.2,"dt":0.25}"#;
    let o = nlrepr(
        &["amput", "sweep", "--market", market, "--operator", LINEAR, "--strikes", "90:110:5", "--enumerate"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let wide = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(wide.lines().count(), 6);
    let long = fs::read_to_string(dir.path().join("sweep_long.csv")).unwrap();
    assert_eq!(long.lines().count(), 1 + 5 * 5);
}

#[test]
fn tree_gen_probabilities() {
    let dir = tempfile::tempdir().unwrap();
    let o = nlrepr(&["tree", "gen", "--tree", r#"{"kind":"binomial","horizon":1,"p":0.25}"#], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("tree.csv")).unwrap();
    assert!(csv.ends_with("2,1,0,7.5000000000000000e-1\n"));
}
