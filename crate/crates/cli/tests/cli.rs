use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn data(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name).display().to_string()
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qsdlab")).args(args).output().expect("spawn qsdlab")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    r.records().map(|r| r.unwrap().iter().map(str::to_string).collect()).collect()
}

fn weight(rows: &[Vec<String>], state: i64) -> f64 {
    let row = rows.iter().find(|r| r[0] == state.to_string()).expect("state row");
    row[1].parse().unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("qsdlab-test-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&d);
    d
}

#[test]
fn analyze_hub_json() {
    let o = run(&["analyze", "--gallery", "hub", "--q", "0.95", "--alpha", "1.5", "--json"]);
    assert!(o.status.success());
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let expect = 2.29416 * 2.0 / (1.5 + 2.0 / 3.0);
    assert!((v["e_lambda_cr"].as_f64().unwrap() - expect).abs() < 1e-4, "{v}");
    assert_eq!(v["regime"], "infinite");
    assert_eq!(v["manifest"]["command"], "analyze");
}

#[test]
fn analyze_two_state_spec() {
    let o = run(&["analyze", "--spec", &data("twostate.json"), "--json"]);
    assert!(o.status.success());
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!((v["lambda_cr"].as_f64().unwrap() - 0.5 * 2f64.ln()).abs() < 1e-12);
    assert_eq!(v["regime"], "infinite");
    assert_eq!(v["existence"]["exists"], "Holds");
}

#[test]
fn malformed_inputs_exit_2() {
    assert_eq!(run(&["analyze", "--spec", &data("malformed.json")]).status.code(), Some(2));
    assert_eq!(run(&["analyze", "--spec", &data("missing.json")]).status.code(), Some(2));
    assert_eq!(run(&["analyze", "--gallery", "hub", "--q", "0.3", "--alpha", "1"]).status.code(), Some(2));
    assert_eq!(run(&["qsd", "--gallery", "hub", "--q", "0.8", "--alpha", "1", "--minimal", "--method", "bogus"]).status.code(), Some(2));
}

#[test]
fn qsd_hub_renewal_row() {
    let o = run(&["qsd", "--gallery", "hub", "--q", "0.8", "--alpha", "1.25", "--minimal", "--method", "renewal"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&stdout(&o));
    assert!((weight(&rows, 0) - 0.6).abs() < 1e-9);
    assert!((weight(&rows, -2) - 0.3 * 0.16).abs() < 1e-9);
}

#[test]
fn qsd_hub_martin_plus() {
    let dir = scratch("martin");
    let o = run(&[
        "qsd", "--gallery", "hub", "--q", "0.8", "--alpha", "0", "--lambda", "l0", "--method", "martin:+", "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&fs::read_to_string(dir.join("qsd.csv")).unwrap());
    for (y, v) in [(0, 0.25), (1, 0.1875), (-1, 0.0625), (2, 0.15625)] {
        assert!((weight(&rows, y) - v).abs() < 1e-6, "y = {y}");
    }
    let cert: Value = serde_json::from_str(&fs::read_to_string(dir.join("certificate.json")).unwrap()).unwrap();
    assert_eq!(cert["certificate"]["pass"], true);
    assert!(cert["tv_to_oracle"].as_f64().unwrap() < 1e-6);
    fs::remove_dir_all(dir).unwrap();
}

#[test]
fn killed_walk_has_no_qsd() {
    let o = run(&["qsd", "--gallery", "killed-walk", "--eps", "0.6", "--lambda", "0.2"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no QSD"));
}

#[test]
fn sweep_values() {
    let o = run(&["sweep", "--q", "0.95", "--alphas", "0.5,1,2"]);
    assert!(o.status.success());
    let rows = csv_rows(&stdout(&o));
    let e: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!((e[0] - 2.29416).abs() < 1e-5);
    assert!((e[1] - 2.29416).abs() < 1e-5);
    assert!((e[2] - 1.83533).abs() < 1e-5);
    assert_eq!(rows[0][4], "finite");
    assert_eq!(rows[2][4], "infinite");
}

#[test]
fn verify_pass_and_fail() {
    let spec = data("twostate.json");
    let ok = run(&["verify", "--spec", &spec, "--qsd", &data("twostate_qsd.csv"), "--lambda", "0.34657"]);
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    let v: Value = serde_json::from_str(&stdout(&ok)).unwrap();
    assert_eq!(v["pass"], true);
    let bad = run(&["verify", "--spec", &spec, "--qsd", &data("uniform_qsd.csv"), "--lambda", "0.34657"]);
    assert_eq!(bad.status.code(), Some(5));
}

#[test]
fn qsd_output_verifies() {
    let dir = scratch("roundtrip");
    let o = run(&["qsd", "--spec", &data("twostate.json"), "--minimal", "--method", "perron", "--out", dir.to_str().unwrap()]);
    assert!(o.status.success());
    let csv = dir.join("qsd.csv");
    let v = run(&["verify", "--spec", &data("twostate.json"), "--qsd", csv.to_str().unwrap(), "--lambda", "lcr", "--tol", "1e-12"]);
    assert!(v.status.success(), "{}", String::from_utf8_lossy(&v.stderr));
    fs::remove_dir_all(dir).unwrap();
}

#[test]
fn yaglom_reports_tv() {
    let dir = scratch("yaglom");
    let o = run(&[
        "yaglom", "--gallery", "hub", "--q", "0.8", "--alpha", "1.25", "--n", "30", "--paths", "1000000", "--seed", "7",
        "--out", dir.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s: Value = serde_json::from_str(&fs::read_to_string(dir.join("yaglom.json")).unwrap()).unwrap();
    let tv = s["tv_to_oracle"].as_f64().unwrap();
    assert!(tv < 0.05, "{tv}");
    assert_eq!(s["manifest"]["seed"], 7);
    let rows = csv_rows(&fs::read_to_string(dir.join("yaglom.csv")).unwrap());
    assert!(rows.iter().any(|r| r[0] == "0" && !r[3].is_empty()));
    fs::remove_dir_all(dir).unwrap();
}

#[test]
fn identical_manifests_give_identical_bytes() {
    let (a, b) = (scratch("rep-a"), scratch("rep-b"));
    let args = |d: &Path| {
        vec![
            "yaglom".to_string(),
            "--spec".into(),
            data("twostate.json"),
            "--parity".into(),
            "--n".into(),
            "10".into(),
            "--paths".into(),
            "50000".into(),
            "--seed".into(),
            "3".into(),
            "--out".into(),
            d.display().to_string(),
        ]
    };
    let ra = Command::new(env!("CARGO_BIN_EXE_qsdlab")).args(args(&a)).output().unwrap();
    let rb = Command::new(env!("CARGO_BIN_EXE_qsdlab")).env("QSDLAB_THREADS", "1").args(args(&b)).output().unwrap();
    assert!(ra.status.success() && rb.status.success());
    for f in ["yaglom.csv", "yaglom.json"] {
        let (x, y) = (fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
        // only the output directory differs, and it is not part of the manifest
        assert_eq!(x, y, "{f}");
    }
    fs::remove_dir_all(a).unwrap();
    fs::remove_dir_all(b).unwrap();
}
