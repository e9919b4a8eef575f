use qsd_wasm::{finite_qsd, hub_qsd, hub_sweep};
use serde_json::Value;

fn parse(s: String) -> Value {
    serde_json::from_str(&s).unwrap()
}

#[test]
fn sweep_plateau_and_decay() {
    let v = parse(hub_sweep(0.95, 0.5, 2.0, 4));
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 4);
    assert!((v["e_lambda0"].as_f64().unwrap() - 2.29416).abs() < 1e-5);
    assert!((rows[1]["e_lambda_cr"].as_f64().unwrap() - 2.29416).abs() < 1e-5);
    assert!((rows[3]["e_lambda_cr"].as_f64().unwrap() - 1.83533).abs() < 1e-5);
    assert_eq!(rows[3]["regime"], "infinite");
}

#[test]
fn hub_modes() {
    let v = parse(hub_qsd(0.8, 1.25, "minimal", 3));
    assert_eq!(v["states"].as_array().unwrap().len(), 7);
    assert!(v["tv_to_oracle"].as_f64().unwrap() < 1e-8);
    let v = parse(hub_qsd(0.8, 0.0, "martin-", 3));
    assert!(v["tv_to_oracle"].as_f64().unwrap() < 1e-6, "{v}");
    assert_eq!(v["certificate"]["pass"], true);
    let e = parse(hub_qsd(0.8, 0.0, "minimal", 3));
    assert!(e["error"].as_str().unwrap().contains("regime"));
    assert!(parse(hub_qsd(0.8, 1.0, "bogus", 3))["error"].is_string());
}

#[test]
fn finite_spec() {
    let spec = r#"{"type":"discrete","states":[0,1],"rows":{"0":[[1,"1"]],"1":[[0,"0.5"],["DELTA","0.5"]]}}"#;
    let v = parse(finite_qsd(spec));
    assert!((v["lambda"].as_f64().unwrap() - 0.5 * 2f64.ln()).abs() < 1e-12);
    let w = v["weights"].as_array().unwrap();
    assert!((w[0].as_f64().unwrap() - (2f64.sqrt() - 1.0)).abs() < 1e-10);
    assert!(parse(finite_qsd("{")).get("error").is_some());
}
