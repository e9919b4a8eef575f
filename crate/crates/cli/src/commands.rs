use std::path::{Path, PathBuf};

use anyhow::Result;
use serde_json::{json, Value};

use qsd_core::analytics::{regime_classify, total_variation, Regime, Schedule};
use qsd_core::chain::{ContinuousChain, DiscreteChain};
use qsd_core::cts::{certify_cts, cts_qsd_renewal};
use qsd_core::gallery::{hub_two_spokes, HubTwoSpokes, ModelChain};
use qsd_core::monte_carlo::{yaglom_estimate, yaglom_parity_average, SimConfig};
use qsd_core::qsd::{
    escaping_sequence, existence_report, minimal_qsd, qsd_finite_state, qsd_martin_limit, qsd_mu, qsd_renewal,
    qsd_window_perron, verify_qsd, MartinOutcome, Qsd, QsdMethod, Verdict, DEFAULT_MARTIN_NS,
};
use qsd_core::StateId;

use crate::manifest::{csv_table, fmt17, Body, Outputs, RunManifest};
use crate::model::{read_qsd_csv, regime_name, Model, Source};
use crate::Failure;

fn numeric_regime(chain: &DiscreteChain, m: &Model, est: &qsd_core::analytics::CriticalEstimate) -> Result<Regime> {
    Ok(regime_classify(chain, est, None, &m.schedule)?.regime)
}

pub fn analyze(src: &Source, lambda: Option<&str>, as_json: bool, out: Option<&Path>) -> Result<()> {
    let m = src.load()?;
    let est = m.critical()?;
    let mut report = json!({
        "lambda_cr": est.lambda,
        "e_lambda_cr": est.lambda.exp(),
        "bracket": [est.bracket.0, est.bracket.1],
        "method": format!("{:?}", est.method),
    });
    let regime = match &m.loaded.chain {
        ModelChain::Discrete(c) => {
            let r = numeric_regime(c, &m, &est)?;
            let lam = match lambda {
                Some(t) => m.lambda(t)?,
                None => est.lambda,
            };
            if lam > 0.0 {
                let ex = existence_report(c, lam, &m.schedule, m.window)?;
                report["existence"] = serde_json::to_value(&ex)?;
            }
            r
        }
        ModelChain::Continuous(_) => Regime::Undetermined,
    };
    report["regime"] = json!(regime_name(regime));
    if let Some(g) = m.gallery() {
        let o = &g.oracle;
        report["oracle"] = json!({
            "lambda_cr": o.lambda_cr(),
            "e_lambda_cr": o.lambda_cr().map(f64::exp),
            "regime": o.regime().map(regime_name),
        });
    }

    let mut man = RunManifest::new("analyze", m.inputs.clone());
    man.param("window", m.window);
    man.param("schedule", &m.schedule.windows);
    man.param("lambda", lambda);
    let mut outs = Outputs::new(man);
    outs.add("analyze.json", Body::Json(report.clone()));
    if as_json || out.is_some() {
        outs.emit(out)?;
    }
    if !as_json {
        print_table(&report);
    }
    Ok(())
}

fn print_table(r: &Value) {
    let num = |v: &Value| v.as_f64().map_or("-".to_string(), |x| format!("{x:.10}"));
    println!("{:<24}{}", "lambda_cr", num(&r["lambda_cr"]));
    println!("{:<24}{}", "e^lambda_cr", num(&r["e_lambda_cr"]));
    println!("{:<24}[{}, {}]", "bracket", num(&r["bracket"][0]), num(&r["bracket"][1]));
    println!("{:<24}{}", "estimate", r["method"].as_str().unwrap_or("-"));
    println!("{:<24}{}", "regime", r["regime"].as_str().unwrap_or("-"));
    if let Some(o) = r.get("oracle") {
        println!("{:<24}{}", "oracle e^lambda_cr", num(&o["e_lambda_cr"]));
        println!("{:<24}{}", "oracle regime", o["regime"].as_str().unwrap_or("-"));
    }
    if let Some(e) = r.get("existence") {
        println!("{:<24}{}", "existence at lambda", num(&e["lambda"]));
        for key in ["unbounded_below", "bounded_at", "column_sums", "finite_absorption_set"] {
            println!("  {:<22}{}", key, e[key]["verdict"].as_str().unwrap_or("-"));
        }
        println!("  {:<22}{}", "lambda_0", num(&e["lambda_0"]));
        println!("  {:<22}{}", "QSD exists", e["exists"].as_str().unwrap_or("-"));
    }
}

fn martin_sign(method: &str) -> Option<i64> {
    match method {
        "martin:+" => Some(1),
        "martin:-" => Some(-1),
        _ => None,
    }
}

fn discrete_qsd(c: &DiscreteChain, m: &Model, lambda: Option<f64>, method: &str, anchor: Option<StateId>) -> Result<Qsd> {
    let resolve = |l: Option<f64>| -> Result<f64> {
        match l {
            Some(v) => Ok(v),
            None => Ok(m.critical()?.lambda),
        }
    };
    if let Some(l) = lambda {
        if !c.is_finite() {
            let est = m.critical()?;
            if l < est.bracket.0 || l > est.bracket.1 + 1e-9 {
                let ex = existence_report(c, l, &m.schedule, m.window)?;
                if ex.exists == Verdict::Fails {
                    return Err(Failure::no_qsd(format!(
                        "no QSD at lambda = {l}: {}",
                        if ex.bounded_at.verdict == Verdict::Holds { &ex.bounded_at.evidence } else { "above the critical parameter" }
                    ))
                    .into());
                }
            }
        }
    }
    let q = match method {
        "perron" => {
            let q = if c.is_finite() { qsd_finite_state(c)? } else { qsd_window_perron(c, m.window)? };
            if let Some(l) = lambda {
                if (q.lambda - l).abs() > 1e-6 * l.abs().max(1.0) {
                    return Err(Failure::no_qsd(format!(
                        "Perron vector has decay parameter {} but lambda = {l} was requested",
                        q.lambda
                    ))
                    .into());
                }
            }
            q
        }
        "renewal" if lambda.is_none() => minimal_qsd(c, &m.schedule, m.window)?,
        "renewal" => qsd_renewal(c, resolve(lambda)?, anchor, m.window)?,
        "mu" => {
            let x = anchor.or_else(|| c.state_at(0)).ok_or(qsd_core::QsdError::EmptyWindow)?;
            qsd_mu(c, resolve(lambda)?, x, m.window)?
        }
        other => {
            let sign = martin_sign(other).ok_or_else(|| {
                Failure::validation(format!("unknown method {other:?} (perron, renewal, mu, martin:+, martin:-)"))
            })?;
            let seq = escaping_sequence(sign, &DEFAULT_MARTIN_NS);
            match qsd_martin_limit(c, resolve(lambda)?, &seq, &m.schedule)? {
                MartinOutcome::Qsd(q) => q,
                MartinOutcome::Subprobability { mass, lambda, .. } => {
                    return Err(Failure::no_qsd(format!(
                        "no QSD at lambda = {lambda}: kernel limit has total mass {mass}"
                    ))
                    .into())
                }
            }
        }
    };
    Ok(q)
}

fn continuous_qsd(c: &ContinuousChain, m: &Model, lambda: Option<f64>, method: &str, anchor: Option<StateId>) -> Result<Qsd> {
    if method != "renewal" {
        return Err(Failure::validation("continuous chains support --method renewal").into());
    }
    let l = match lambda {
        Some(v) => v,
        None => m.critical()?.lambda,
    };
    Ok(cts_qsd_renewal(c, l, anchor, m.window)?.qsd)
}

pub fn qsd(src: &Source, lambda: Option<&str>, minimal: bool, method: &str, anchor: Option<i64>, out: Option<&Path>) -> Result<()> {
    let m = src.load()?;
    if lambda.is_none() && !minimal {
        return Err(Failure::validation("give --lambda or --minimal").into());
    }
    let lam = lambda.map(|t| m.lambda(t)).transpose()?;
    let anchor = anchor.map(StateId);
    let q = match &m.loaded.chain {
        ModelChain::Discrete(c) => discrete_qsd(c, &m, lam, method, anchor)?,
        ModelChain::Continuous(c) => continuous_qsd(c, &m, lam, method, anchor)?,
    };

    let oracle_tv = m.gallery().and_then(|g| {
        let w: Option<Vec<(StateId, f64)>> = q.states.iter().map(|&s| g.oracle.qsd(q.lambda, s).map(|v| (s, v))).collect();
        w.map(|w| total_variation(&q.pairs(), &w))
    });
    let mut man = RunManifest::new("qsd", m.inputs.clone());
    man.param("lambda", lambda);
    man.param("minimal", minimal);
    man.param("method", method);
    man.param("anchor", anchor.map(|s| s.0));
    man.param("window", m.window);
    man.param("schedule", &m.schedule.windows);
    let table = csv_table(
        &["state", "weight"],
        q.states.iter().zip(&q.weights).map(|(s, w)| vec![s.0.to_string(), fmt17(*w)]),
    )?;
    let cert = json!({
        "lambda": q.lambda,
        "method": q.method,
        "certificate": q.certificate,
        "tv_to_oracle": oracle_tv,
    });
    let mut outs = Outputs::new(man);
    outs.add("qsd.csv", Body::Csv(table));
    outs.add("certificate.json", Body::Json(cert));
    outs.emit(out)?;
    let c = &q.certificate;
    eprintln!(
        "lambda {} | eigen residual {:.3e} | tail residual {:.3e} | tail bound {:.3e} | {}",
        q.lambda,
        c.eigen_residual,
        c.tail_residual,
        c.tail_bound,
        if c.pass { "pass" } else { "FAIL" }
    );
    if !c.pass {
        return Err(Failure::certificate(format!("certificate outside tolerance {}", c.tol)).into());
    }
    Ok(())
}

fn alpha_grid(alphas: Vec<f64>, grid: Option<&str>) -> Result<Vec<f64>> {
    if !alphas.is_empty() {
        return Ok(alphas);
    }
    let spec = grid.unwrap_or("0:3:20");
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || Failure::validation(format!("--grid expects START:STOP:COUNT, got {spec:?}"));
    if parts.len() != 3 {
        return Err(bad().into());
    }
    let a: f64 = parts[0].parse().map_err(|_| bad())?;
    let b: f64 = parts[1].parse().map_err(|_| bad())?;
    let n: usize = parts[2].parse().map_err(|_| bad())?;
    Ok(match n {
        0 => vec![],
        1 => vec![a],
        _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
    })
}

pub struct SweepRow {
    pub alpha: f64,
    pub e_lambda_cr: f64,
    pub closed_form: f64,
    pub regime: Regime,
}

pub fn sweep_rows(q: f64, alphas: &[f64], schedule: &Schedule) -> Result<Vec<SweepRow>> {
    alphas
        .iter()
        .map(|&alpha| {
            let h = HubTwoSpokes::new(q, alpha)?;
            let g = hub_two_spokes(q, alpha)?;
            let c = g.discrete().expect("hub is discrete");
            let est = qsd_core::analytics::critical_parameter(c, schedule)?;
            let regime = regime_classify(c, &est, None, schedule)?.regime;
            Ok(SweepRow { alpha, e_lambda_cr: est.lambda.exp(), closed_form: h.e_lambda_cr(), regime })
        })
        .collect()
}

pub fn sweep(q: f64, alphas: Vec<f64>, grid: Option<&str>, schedule: Vec<usize>, out: Option<&Path>) -> Result<()> {
    let alphas = alpha_grid(alphas, grid)?;
    let schedule = if schedule.is_empty() { Schedule::default() } else { Schedule::new(schedule) };
    let rows = sweep_rows(q, &alphas, &schedule)?;
    let table = csv_table(
        &["alpha", "e_lambda_cr", "e_lambda_cr_closed_form", "abs_diff", "regime"],
        rows.iter().map(|r| {
            vec![
                fmt17(r.alpha),
                fmt17(r.e_lambda_cr),
                fmt17(r.closed_form),
                fmt17((r.e_lambda_cr - r.closed_form).abs()),
                regime_name(r.regime).to_string(),
            ]
        }),
    )?;
    let mut man = RunManifest::new("sweep", json!({"gallery": "hub", "params": {"q": q}}));
    man.param("alphas", &alphas);
    man.param("schedule", &schedule.windows);
    let mut outs = Outputs::new(man);
    outs.add("sweep.csv", Body::Csv(table));
    outs.emit(out)
}

fn oracle_weights(m: &Model, c: &DiscreteChain, states: &[StateId]) -> Result<Option<Vec<(StateId, f64)>>> {
    if let Some(g) = m.gallery() {
        if let Some(l) = g.oracle.lambda_cr() {
            let w: Option<Vec<(StateId, f64)>> = states.iter().map(|&s| g.oracle.qsd(l, s).map(|v| (s, v))).collect();
            if w.is_some() {
                return Ok(w);
            }
        }
    }
    if c.is_finite() {
        return Ok(Some(qsd_finite_state(c)?.pairs()));
    }
    Ok(None)
}

pub fn yaglom(src: &Source, n: usize, paths: usize, seed: u64, start: i64, parity: bool, out: Option<&Path>) -> Result<()> {
    let m = src.load()?;
    let c = m.loaded.discrete().ok_or_else(|| Failure::validation("yaglom needs a discrete chain"))?;
    let cfg = SimConfig::new(seed, paths, (n + 2) as f64);
    let x = StateId(start);
    let est = if parity { yaglom_parity_average(c, x, n, &cfg)? } else { yaglom_estimate(c, x, n, &cfg)? };
    let oracle = oracle_weights(&m, c, &est.states)?;
    let lookup = |s: StateId| oracle.as_ref().and_then(|o| o.iter().find(|e| e.0 == s).map(|e| e.1));
    let table = csv_table(
        &["state", "estimate", "std_error", "oracle", "z"],
        est.states.iter().zip(est.estimates.iter().zip(&est.std_errors)).filter(|(s, (e, _))| **e > 0.0 || lookup(**s).is_some_and(|o| o > 1e-12)).map(
            |(s, (e, se))| {
                let o = lookup(*s);
                let z = o.filter(|_| *se > 0.0).map(|o| (e - o) / se);
                vec![s.0.to_string(), fmt17(*e), fmt17(*se), o.map(fmt17).unwrap_or_default(), z.map(fmt17).unwrap_or_default()]
            },
        ),
    )?;
    let summary = json!({
        "n": n,
        "start": start,
        "parity": parity,
        "paths": est.paths,
        "survivors": est.survivors,
        "escaped": est.escaped,
        "widened": est.widened,
        "tv_to_oracle": oracle.as_ref().map(|o| est.tv(o)),
        "max_abs_z": oracle.as_ref().map(|o| est.max_z(&|s| o.iter().find(|e| e.0 == s).map_or(0.0, |e| e.1))),
    });
    let mut man = RunManifest::new("yaglom", m.inputs.clone());
    man.seed = Some(seed);
    man.param("n", n);
    man.param("paths", paths);
    man.param("start", start);
    man.param("parity", parity);
    let mut outs = Outputs::new(man);
    outs.add("yaglom.csv", Body::Csv(table));
    outs.add("yaglom.json", Body::Json(summary.clone()));
    outs.emit(out)?;
    eprintln!("tv_to_oracle {} | survivors {}", summary["tv_to_oracle"], est.survivors);
    Ok(())
}

pub fn verify(src: &Source, qsd_file: &PathBuf, lambda: &str, tol: f64, horizon: usize, out: Option<&Path>) -> Result<()> {
    let m = src.load()?;
    let nu = read_qsd_csv(qsd_file)?;
    let lam = m.lambda(lambda)?;
    let cert = match &m.loaded.chain {
        ModelChain::Discrete(c) => verify_qsd(c, &nu, lam, horizon, tol),
        ModelChain::Continuous(c) => {
            let (s, w): (Vec<StateId>, Vec<f64>) = nu.iter().copied().unzip();
            let mut cert = certify_cts(c, s, w, lam, QsdMethod::Supplied, 0.0)?.certificate;
            cert.tol = tol;
            cert.pass = cert.eigen_residual <= tol && cert.tail_residual <= tol;
            cert
        }
    };
    let mut man = RunManifest::new("verify", m.inputs.clone());
    man.param("qsd", qsd_file.display().to_string());
    man.param("lambda", lambda);
    man.param("tol", tol);
    man.param("horizon", horizon);
    let mut outs = Outputs::new(man);
    outs.add("certificate.json", Body::Json(json!({"lambda": lam, "pass": cert.pass, "certificate": cert})));
    outs.emit(out)?;
    if !cert.pass {
        return Err(Failure::certificate(format!(
            "eigen residual {:.3e}, tail residual {:.3e} against tolerance {tol}",
            cert.eigen_residual, cert.tail_residual
        ))
        .into());
    }
    Ok(())
}
