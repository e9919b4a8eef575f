// build with: wasm-pack build crates/wasm --target web --out-dir www/pkg
//
// Every export returns a JSON string; failures come back as {"error": "..."}.

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use qsd_core::analytics::{critical_parameter, regime_classify, Regime, Schedule};
use qsd_core::gallery::{hub_two_spokes, HubTwoSpokes};
use qsd_core::qsd::{escaping_sequence, minimal_qsd, qsd_finite_state, qsd_martin_limit, MartinOutcome, Qsd, DEFAULT_MARTIN_NS};
use qsd_core::spec::ChainSpec;
use qsd_core::StateId;

fn regime(r: Regime) -> &'static str {
    match r {
        Regime::FiniteMgf => "finite",
        Regime::InfiniteMgf => "infinite",
        Regime::Undetermined => "undetermined",
    }
}

fn wrap(r: Result<Value, String>) -> String {
    match r {
        Ok(v) => v.to_string(),
        Err(e) => json!({ "error": e }).to_string(),
    }
}

fn qsd_json(q: &Qsd, radius: i64) -> Value {
    let keep: Vec<(i64, f64)> = q.pairs().into_iter().filter(|(s, _)| s.0.abs() <= radius).map(|(s, w)| (s.0, w)).collect();
    json!({
        "lambda": q.lambda,
        "states": keep.iter().map(|e| e.0).collect::<Vec<_>>(),
        "weights": keep.iter().map(|e| e.1).collect::<Vec<_>>(),
        "certificate": q.certificate,
    })
}

pub fn sweep(q: f64, from: f64, to: f64, count: usize) -> Result<Value, String> {
    if count == 0 || count > 200 {
        return Err("count must lie in 1..=200".into());
    }
    let sched = Schedule::default();
    let mut rows = Vec::with_capacity(count);
    for i in 0..count {
        let alpha = if count == 1 { from } else { from + (to - from) * i as f64 / (count - 1) as f64 };
        let h = HubTwoSpokes::new(q, alpha).map_err(|e| e.to_string())?;
        let m = hub_two_spokes(q, alpha).map_err(|e| e.to_string())?;
        let c = m.discrete().expect("hub is discrete");
        let est = critical_parameter(c, &sched).map_err(|e| e.to_string())?;
        let r = regime_classify(c, &est, None, &sched).map_err(|e| e.to_string())?;
        rows.push(json!({
            "alpha": alpha,
            "e_lambda_cr": est.lambda.exp(),
            "closed_form": h.e_lambda_cr(),
            "regime": regime(r.regime),
        }));
    }
    Ok(json!({ "q": q, "e_lambda0": HubTwoSpokes::new(q, 0.0).map_err(|e| e.to_string())?.e_lambda0(), "rows": rows }))
}

/// `mode`: "minimal", "martin+" or "martin-".
pub fn hub(q: f64, alpha: f64, mode: &str, radius: i64) -> Result<Value, String> {
    let h = HubTwoSpokes::new(q, alpha).map_err(|e| e.to_string())?;
    let m = hub_two_spokes(q, alpha).map_err(|e| e.to_string())?;
    let c = m.discrete().expect("hub is discrete");
    let (qsd, oracle): (Qsd, Box<dyn Fn(i64) -> f64>) = match mode {
        "minimal" => {
            let s = minimal_qsd(c, &Schedule::default(), 400).map_err(|e| e.to_string())?;
            (s, Box::new(move |y| h.qsd_cr(y)))
        }
        "martin+" | "martin-" => {
            let sign = if mode == "martin+" { 1 } else { -1 };
            let seq = escaping_sequence(sign, &DEFAULT_MARTIN_NS);
            let sched = Schedule::new(vec![400, 800, 1600, 3200]);
            let lam = h.lambda0().min(h.e_lambda_cr().ln());
            match qsd_martin_limit(c, lam, &seq, &sched).map_err(|e| e.to_string())? {
                MartinOutcome::Qsd(s) => (s, Box::new(move |y| h.qsd_edge(sign, y))),
                MartinOutcome::Subprobability { mass, .. } => {
                    return Err(format!("kernel limit has mass {mass:.6}: not a QSD"))
                }
            }
        }
        other => return Err(format!("unknown mode {other:?}")),
    };
    let mut v = qsd_json(&qsd, radius);
    let states: Vec<i64> = v["states"].as_array().unwrap().iter().map(|s| s.as_i64().unwrap()).collect();
    v["oracle"] = json!(states.iter().map(|&y| oracle(y)).collect::<Vec<_>>());
    v["tv_to_oracle"] = json!(qsd.tv(&qsd.states.iter().map(|&s| (s, oracle(s.0))).collect::<Vec<(StateId, f64)>>()));
    Ok(v)
}

/// Perron QSD of a finite chain given as a chain-spec document.
pub fn finite(spec: &str) -> Result<Value, String> {
    let s = ChainSpec::parse(spec).map_err(|e| e.to_string())?;
    let loaded = s.build().map_err(|e| e.to_string())?;
    let c = loaded.discrete().ok_or("only discrete chains are supported here")?;
    if !c.is_finite() {
        return Err("the chain must have finitely many states".into());
    }
    let n = c.enumeration().len().unwrap_or(0);
    qsd_core::chain::validate(c, n).map_err(|e| e.to_string())?;
    let q = qsd_finite_state(c).map_err(|e| e.to_string())?;
    Ok(qsd_json(&q, i64::MAX))
}

#[wasm_bindgen]
pub fn hub_sweep(q: f64, from: f64, to: f64, count: usize) -> String {
    wrap(sweep(q, from, to, count))
}

#[wasm_bindgen]
pub fn hub_qsd(q: f64, alpha: f64, mode: &str, radius: i32) -> String {
    wrap(hub(q, alpha, mode, radius as i64))
}

#[wasm_bindgen]
pub fn finite_qsd(spec: &str) -> String {
    wrap(finite(spec))
}
