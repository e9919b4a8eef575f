//! QSD solvers (window Perron vectors, the renewal formula, the `mu_x`
//! measure and Martin kernel limits), residual certificates and existence
//! evidence.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::analytics::{
    critical_parameter, mgf_at, position, regime_classify, taboo_solve, CriticalEstimate, Regime, Schedule,
    RETURN_TOL,
};
use crate::chain::{truncate, DiscreteChain, FiniteChain, StateId};
use crate::error::{QsdError, Result};
use crate::linalg::{aitken, critical_scale, discrete_system, inverse_iteration, settle, PERRON_SEED};
use crate::par_map;

/// Default horizon `N` for the survival-tail residual.
pub const DEFAULT_HORIZON: usize = 30;
/// Residual tolerance attached to solver certificates.
pub const CERT_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum QsdMethod {
    PerronFinite,
    PerronWindow,
    Renewal,
    MuMeasure,
    MartinLimit,
    Transfer,
    BirthDeath,
    Supplied,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QsdCertificate {
    /// `max_y |(nu p)(y) - e^{-lambda} nu(y)|` with the full transition rows.
    pub eigen_residual: f64,
    /// `max_{n <= N} |P_nu(tau > n) - e^{-lambda n}|`.
    pub tail_residual: f64,
    pub horizon: usize,
    /// Mass not represented on the window.
    pub tail_bound: f64,
    pub tol: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Qsd {
    pub states: Vec<StateId>,
    pub weights: Vec<f64>,
    pub lambda: f64,
    pub method: QsdMethod,
    pub certificate: QsdCertificate,
}

impl Qsd {
    pub fn weight(&self, s: StateId) -> f64 {
        self.states.iter().position(|&t| t == s).map_or(0.0, |i| self.weights[i])
    }

    pub fn pairs(&self) -> Vec<(StateId, f64)> {
        self.states.iter().copied().zip(self.weights.iter().copied()).collect()
    }

    pub fn tv(&self, other: &[(StateId, f64)]) -> f64 {
        crate::analytics::total_variation(&self.pairs(), other)
    }

    /// `E_nu[tau] = 1/(1 - e^{-lambda})`.
    pub fn expected_absorption_time(&self) -> f64 {
        1.0 / -(-self.lambda).exp_m1()
    }
}

fn horizon_for(chain: &DiscreteChain, states: &[StateId], steps: usize) -> usize {
    let top = states.iter().filter_map(|&s| chain.index_of(s)).max().unwrap_or(0);
    2 * top + 4 * steps + 256
}

/// Residual certificate for a candidate `(nu, lambda)` against the full
/// chain. Weights are used as given (no renormalization), so a missing tail
/// shows up in the residuals.
pub fn verify_qsd(
    chain: &DiscreteChain,
    nu: &[(StateId, f64)],
    lambda: f64,
    horizon: usize,
    tol: f64,
) -> QsdCertificate {
    let states: Vec<StateId> = nu.iter().map(|e| e.0).collect();
    let reach = horizon_for(chain, &states, horizon);
    let mut rows: BTreeMap<StateId, crate::chain::Row> = BTreeMap::new();
    let mut row_of = |s: StateId| rows.entry(s).or_insert_with(|| chain.row(s, reach)).clone();

    let mut cur: BTreeMap<StateId, f64> = BTreeMap::new();
    for &(s, w) in nu {
        *cur.entry(s).or_insert(0.0) += w;
    }
    let total: f64 = cur.values().sum();
    let decay = (-lambda).exp();
    let mut eigen = 0.0f64;
    let mut tail = 0.0f64;
    let mut survive = total;
    for n in 1..=horizon.max(1) {
        let mut next: BTreeMap<StateId, f64> = BTreeMap::new();
        let mut beyond = 0.0;
        for (&s, &w) in &cur {
            if w == 0.0 {
                continue;
            }
            let r = row_of(s);
            for (y, p) in r.entries {
                *next.entry(y).or_insert(0.0) += w * p;
            }
            beyond += w * r.beyond;
        }
        if n == 1 {
            let keys: std::collections::BTreeSet<StateId> = cur.keys().chain(next.keys()).copied().collect();
            for k in keys {
                let a = next.get(&k).copied().unwrap_or(0.0);
                let b = cur.get(&k).copied().unwrap_or(0.0);
                eigen = eigen.max((a - decay * b).abs());
            }
            eigen = eigen.max(beyond);
        }
        survive = next.values().sum::<f64>() + beyond;
        tail = tail.max((survive - (-lambda * n as f64).exp()).abs());
        next.retain(|_, v| *v > 1e-300);
        cur = next;
        if horizon == 0 {
            break;
        }
    }
    let _ = survive;
    let tail_bound = (1.0 - total).abs();
    let tail_residual = if horizon == 0 { 0.0 } else { tail };
    QsdCertificate {
        eigen_residual: eigen,
        tail_residual,
        horizon,
        tail_bound,
        tol,
        pass: eigen <= tol && tail_residual <= tol && tail_bound <= tol.max(1e-8),
    }
}

fn certify(
    chain: &DiscreteChain,
    states: Vec<StateId>,
    weights: Vec<f64>,
    lambda: f64,
    method: QsdMethod,
    tail_bound: f64,
) -> Qsd {
    let pairs: Vec<(StateId, f64)> = states.iter().copied().zip(weights.iter().copied()).collect();
    let mut certificate = verify_qsd(chain, &pairs, lambda, DEFAULT_HORIZON, CERT_TOL);
    certificate.tail_bound = tail_bound;
    certificate.pass = certificate.eigen_residual <= CERT_TOL
        && certificate.tail_residual <= CERT_TOL
        && tail_bound < 1e-8;
    Qsd { states, weights, lambda, method, certificate }
}

/// Left Perron vector of `P_W` and `lambda_cr(W)`.
pub fn window_perron(fc: &FiniteChain) -> Result<(f64, Vec<f64>)> {
    let c = critical_scale(fc);
    if !c.is_finite() {
        return Err(QsdError::Bracket("window matrix is nilpotent".into()));
    }
    let lu = discrete_system(fc, c * (1.0 - 1e-9), None, false)
        .factor()
        .map_err(|_| QsdError::SingularSystem { lambda: c.ln() })?;
    let v = inverse_iteration(&lu, true, PERRON_SEED)?;
    Ok((c.ln(), v))
}

/// QSD of a finite chain: normalized left Perron vector of `P_S`.
pub fn qsd_finite_state(chain: &DiscreteChain) -> Result<Qsd> {
    let n = chain
        .enumeration()
        .len()
        .ok_or_else(|| QsdError::Precondition("state space is infinite; use qsd_window_perron".into()))?;
    let fc = truncate(chain, n)?;
    let (lambda, v) = window_perron(&fc)?;
    Ok(certify(chain, fc.states.clone(), v, lambda, QsdMethod::PerronFinite, 0.0))
}

/// Perron QSD of the truncation to a window; the tail bound is the mass
/// that leaves the window in one step.
pub fn qsd_window_perron(chain: &DiscreteChain, window: usize) -> Result<Qsd> {
    let fc = truncate(chain, window)?;
    let (lambda, v) = window_perron(&fc)?;
    let leak: f64 = v.iter().enumerate().map(|(i, w)| w * fc.exit[i]).sum::<f64>() * lambda.exp();
    let method = if chain.is_finite() && fc.len() == chain.enumeration().len().unwrap_or(0) {
        QsdMethod::PerronFinite
    } else {
        QsdMethod::PerronWindow
    };
    Ok(certify(chain, fc.states.clone(), v, lambda, method, leak))
}

/// `(e^lambda - 1)/E_x[e^{lambda tau}; tau < tau_x]` at every window state;
/// `None` where the taboo system is numerically singular.
pub fn renewal_weights(fc: &FiniteChain, lambda: f64) -> Vec<Option<f64>> {
    let idx: Vec<usize> = (0..fc.len()).collect();
    let em1 = lambda.exp_m1();
    par_map(&idx, |&i| {
        taboo_solve(fc, lambda, i)
            .map(|t| em1 / t.absorb_part)
            .filter(|v| v.is_finite() && *v > 0.0)
    })
}

fn renewal_qsd(
    chain: &DiscreteChain,
    fc: &FiniteChain,
    lambda: f64,
    anchor: usize,
    method: QsdMethod,
) -> Result<Qsd> {
    let mut w = renewal_weights(fc, lambda);
    if w.iter().any(Option::is_none) {
        // far states: nu(y) = nu(x) mu_x(y) once h_x(x) = 1
        let t = taboo_solve(fc, lambda, anchor).ok_or(QsdError::NonconvergentStoppedMgf { state: fc.states[anchor] })?;
        let nx = w[anchor].ok_or(QsdError::NonconvergentStoppedMgf { state: fc.states[anchor] })?;
        if (1.0 - t.return_part).abs() > 1e-4 {
            let bad = w.iter().position(Option::is_none).unwrap();
            return Err(QsdError::NonconvergentStoppedMgf { state: fc.states[bad] });
        }
        let mu = t.mu();
        for (i, v) in w.iter_mut().enumerate() {
            v.get_or_insert(nx * mu[i]);
        }
    }
    let w: Vec<f64> = w.into_iter().map(Option::unwrap).collect();
    let mass: f64 = w.iter().sum();
    let tail_bound = (1.0 - mass).abs();
    let weights = w.iter().map(|v| v / mass).collect();
    Ok(certify(chain, fc.states.clone(), weights, lambda, method, tail_bound))
}

/// Minimal QSD in the infinite regime from the renewal formula
/// `nu(x) = (e^lambda - 1)/E_x[e^{lambda tau}; tau < tau_x]`, at the
/// critical parameter `lambda`.
pub fn qsd_renewal(chain: &DiscreteChain, lambda: f64, anchor: Option<StateId>, window: usize) -> Result<Qsd> {
    if lambda <= 0.0 {
        return Err(QsdError::Precondition("lambda must be positive".into()));
    }
    let fc = truncate(chain, window)?;
    let anchor = anchor.or_else(|| chain.state_at(0)).ok_or(QsdError::EmptyWindow)?;
    let xi = position(&fc, anchor)?;
    let t = taboo_solve(&fc, lambda, xi).ok_or(QsdError::NonconvergentStoppedMgf { state: anchor })?;
    if !t.absorb_part.is_finite() {
        return Err(QsdError::NonconvergentStoppedMgf { state: anchor });
    }
    if (1.0 - t.return_part).abs() > 1e-4 {
        return Err(QsdError::RegimeMismatch(format!(
            "return transform at {anchor} is {} (expected 1 in the infinite regime)",
            t.return_part
        )));
    }
    renewal_qsd(chain, &fc, lambda, xi, QsdMethod::Renewal)
}

/// QSD with parameter `lambda in (0, lambda_cr]` of a downward skip-free
/// chain, where the renewal formula holds for every such `lambda`.
pub fn qsd_skip_free(chain: &DiscreteChain, lambda: f64, window: usize) -> Result<Qsd> {
    if lambda <= 0.0 {
        return Err(QsdError::Precondition("lambda must be positive".into()));
    }
    crate::gallery::skip_free(chain, window)?;
    let fc = truncate(chain, window)?;
    let xi = position(&fc, chain.state_at(0).ok_or(QsdError::EmptyWindow)?)?;
    renewal_qsd(chain, &fc, lambda, xi, QsdMethod::Renewal)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MuMeasure {
    pub lambda: f64,
    pub anchor: StateId,
    pub states: Vec<StateId>,
    pub values: Vec<f64>,
    /// `h_x(x) = E_x[e^{lambda tau_x}; tau_x < tau]`.
    pub return_part: f64,
    /// Sup-norm residual of
    /// `(mu p)(z) - e^{-lambda} mu(z) - e^{-lambda} 1{z = x}(h_x(x) - 1)` on the window.
    pub residual: f64,
}

/// The measure `mu_x(y) = E_x[sum_{s < tau_x ^ tau} e^{lambda s} 1{X_s = y}]`.
pub fn mu_measure(chain: &DiscreteChain, lambda: f64, x: StateId, window: usize) -> Result<MuMeasure> {
    let fc = truncate(chain, window)?;
    let xi = position(&fc, x)?;
    let t = taboo_solve(&fc, lambda, xi).ok_or(QsdError::SingularSystem { lambda })?;
    let mu = t.mu();
    let mp = fc.left_mul(&mu);
    let d = (-lambda).exp();
    let residual = (0..fc.len())
        .map(|z| {
            let extra = if z == xi { d * (t.return_part - 1.0) } else { 0.0 };
            (mp[z] - d * mu[z] - extra).abs()
        })
        .fold(0.0, f64::max);
    Ok(MuMeasure { lambda, anchor: x, states: fc.states.clone(), values: mu, return_part: t.return_part, residual })
}

/// Normalized `mu_x` at a parameter where `h_x(x) = 1`.
pub fn qsd_mu(chain: &DiscreteChain, lambda: f64, x: StateId, window: usize) -> Result<Qsd> {
    let m = mu_measure(chain, lambda, x, window)?;
    if (1.0 - m.return_part).abs() > 1e-4 {
        return Err(QsdError::RegimeMismatch(format!(
            "h_x(x) = {} at {x}; mu_x is a QSD only when it equals 1",
            m.return_part
        )));
    }
    let mass: f64 = m.values.iter().sum();
    let weights: Vec<f64> = m.values.iter().map(|v| v / mass).collect();
    let fc = truncate(chain, window)?;
    let leak: f64 = weights.iter().enumerate().map(|(i, w)| w * fc.exit[i]).sum::<f64>() * lambda.exp();
    Ok(certify(chain, m.states, weights, lambda, QsdMethod::MuMeasure, leak))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum MartinOutcome {
    Qsd(Qsd),
    /// Pointwise limit with total mass below one: not a QSD.
    Subprobability { states: Vec<StateId>, weights: Vec<f64>, mass: f64, lambda: f64 },
}

/// States `sign * n` for the given `n` (for one-sided chains `sign = 1`).
pub fn escaping_sequence(sign: i64, ns: &[i64]) -> Vec<StateId> {
    ns.iter().map(|&n| StateId(sign * n)).collect()
}

pub const DEFAULT_MARTIN_NS: [i64; 5] = [20, 30, 40, 50, 60];

/// Pointwise limit of `K^lambda(x_n, .)` along `sequence`, Aitken-accelerated
/// in `n` and extrapolated over the window schedule.
pub fn qsd_martin_limit(
    chain: &DiscreteChain,
    lambda: f64,
    sequence: &[StateId],
    schedule: &Schedule,
) -> Result<MartinOutcome> {
    if sequence.len() < 3 {
        return Err(QsdError::Precondition("need at least three sequence states".into()));
    }
    let need = sequence
        .iter()
        .map(|&s| chain.index_of(s).ok_or(QsdError::UnknownState(s)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .max()
        .unwrap();
    let sizes: Vec<usize> = schedule.sizes(chain).into_iter().filter(|&w| w > 2 * need + 2).collect();
    if sizes.is_empty() {
        return Err(QsdError::Precondition("window schedule too small for the sequence".into()));
    }
    let base = truncate(chain, sizes[0])?;
    let mut trails: Vec<Vec<f64>> = vec![Vec::new(); base.len()];
    let mut worst_n: f64 = 0.0;
    for &w in &sizes {
        let fc = truncate(chain, w)?;
        let lu = crate::linalg::factor_discrete(&fc, lambda, None, false)
            .map_err(|_| QsdError::DivergentGreen { lambda })?;
        let kernels: Vec<Vec<f64>> = sequence
            .iter()
            .map(|&s| {
                let xi = position(&fc, s)?;
                let mut g = vec![0.0; fc.len()];
                g[xi] = 1.0;
                lu.solve_transpose(&mut g);
                let mass: f64 = g.iter().sum();
                Ok(g.into_iter().map(|v| v / mass).collect())
            })
            .collect::<Result<_>>()?;
        let m = kernels.len();
        for (bi, &s) in base.states.iter().enumerate() {
            let i = position(&fc, s)?;
            let (a0, a1, a2) = (kernels[m - 3][i], kernels[m - 2][i], kernels[m - 1][i]);
            let lim = aitken(a0, a1, a2);
            worst_n = worst_n.max((lim - a2).abs());
            trails[bi].push(lim);
        }
    }
    if worst_n > 1e-6 {
        return Err(QsdError::NonconvergentKernel { last_change: worst_n });
    }
    let weights: Vec<f64> = trails
        .iter()
        .map(|t| if t.len() == 1 { t[0] } else { settle(&sizes, t, schedule.rtol).value.max(0.0) })
        .collect();
    let mass: f64 = weights.iter().sum();
    if (1.0 - mass).abs() > 1e-6 {
        return Ok(MartinOutcome::Subprobability { states: base.states.clone(), weights, mass, lambda });
    }
    let normalized: Vec<f64> = weights.iter().map(|v| v / mass).collect();
    Ok(MartinOutcome::Qsd(certify(
        chain,
        base.states.clone(),
        normalized,
        lambda,
        QsdMethod::MartinLimit,
        (1.0 - mass).abs(),
    )))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Holds,
    Fails,
    Undetermined,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Criterion {
    pub verdict: Verdict,
    pub evidence: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExistenceReport {
    pub lambda: f64,
    pub critical: CriticalEstimate,
    pub regime_at_critical: Regime,
    /// Some `lambda' < lambda` with `E_x[e^{lambda' tau}] -> infinity` along the enumeration.
    pub unbounded_below: Criterion,
    /// `sup_x E_x[e^{lambda tau}] < infinity` (rules out QSDs).
    pub bounded_at: Criterion,
    /// Column sums `sum_z p(z, y)` finite.
    pub column_sums: Criterion,
    /// Finitely many states feed the cemetery directly.
    pub finite_absorption_set: Criterion,
    /// `inf{lambda : E_x[e^{lambda tau}] -> infinity}`, if found.
    pub lambda_0: Option<f64>,
    pub exists: Verdict,
}

/// Behaviour of `x -> E_x[e^{lambda tau}]` along the enumeration.
fn growth_along(chain: &DiscreteChain, lambda: f64, window: usize) -> Result<(Verdict, String)> {
    let fc = truncate(chain, window)?;
    let top = (chain.enumeration().clamp(window) / 4).max(2);
    let mut idx = vec![0usize];
    let mut k = 1;
    while k < top {
        idx.push(k);
        k *= 2;
    }
    let mut vals = Vec::new();
    for &i in &idx {
        let s = chain.state_at(i).unwrap();
        match mgf_at(&fc, lambda, position(&fc, s)?) {
            Some(v) if v.is_finite() => vals.push(v),
            _ => return Ok((Verdict::Holds, format!("transform infinite at state {s}"))),
        }
    }
    let m = vals.len();
    let ev = format!("E_x[e^(lambda tau)] at enumeration indices {idx:?}: {vals:?}");
    if m < 3 {
        return Ok((Verdict::Undetermined, ev));
    }
    let (a, b, c) = (vals[m - 3], vals[m - 2], vals[m - 1]);
    if c > 1e6 * vals[0] || (c / b > 1.01 && b / a > 1.01 && (c - b) >= 0.5 * (b - a)) {
        Ok((Verdict::Holds, ev))
    } else if (c / b - 1.0).abs() < 1e-6 {
        Ok((Verdict::Fails, ev))
    } else {
        Ok((Verdict::Undetermined, ev))
    }
}

/// Numerical evidence for the existence criteria at `lambda`.
pub fn existence_report(chain: &DiscreteChain, lambda: f64, schedule: &Schedule, window: usize) -> Result<ExistenceReport> {
    if lambda <= 0.0 {
        return Err(QsdError::Precondition("lambda must be positive".into()));
    }
    let critical = critical_parameter(chain, schedule)?;
    let regime_at_critical = regime_classify(chain, &critical, None, schedule)?.regime;
    let (lo, hi) = critical.bracket;

    let below = if chain.is_finite() {
        (Verdict::Fails, "finite state space".to_string())
    } else {
        let mut best = (Verdict::Fails, String::new());
        for f in [0.5, 0.9, 0.99] {
            let g = growth_along(chain, f * lambda.min(lo), window)?;
            if g.0 == Verdict::Holds {
                best = (Verdict::Holds, format!("lambda' = {}: {}", f * lambda.min(lo), g.1));
                break;
            }
            if g.0 == Verdict::Undetermined {
                best = g;
            }
        }
        best
    };
    let bounded = if lambda > hi {
        (Verdict::Fails, format!("lambda above the critical bracket upper end {hi}"))
    } else if chain.is_finite() {
        (Verdict::Fails, "finite state space: transform infinite at lambda_cr".into())
    } else {
        let (v, ev) = growth_along(chain, lambda, window)?;
        let flip = match v {
            Verdict::Holds => Verdict::Fails,
            Verdict::Fails => Verdict::Holds,
            Verdict::Undetermined => Verdict::Undetermined,
        };
        (flip, ev)
    };

    let w1 = truncate(chain, window)?;
    let w2 = truncate(chain, (2 * window).min(chain.enumeration().clamp(2 * window)))?;
    let colmax = |fc: &FiniteChain| {
        let mut col = vec![0.0; fc.len()];
        for row in &fc.rows {
            for &(j, p) in row {
                col[j] += p;
            }
        }
        // interior half of the window only
        let keep: Vec<f64> = fc
            .states
            .iter()
            .zip(&col)
            .filter(|(s, _)| chain.index_of(**s).is_some_and(|i| i < fc.len() / 2))
            .map(|e| *e.1)
            .collect();
        keep.into_iter().fold(0.0, f64::max)
    };
    let (c1, c2) = (colmax(&w1), colmax(&w2));
    let column_sums = Criterion {
        verdict: if c1.is_finite() && (c2 - c1).abs() <= 1e-9 * c1.max(1.0) { Verdict::Holds } else { Verdict::Undetermined },
        evidence: format!("max interior column sum {c1} (window {}) vs {c2} (window {})", w1.len(), w2.len()),
    };
    let count = |fc: &FiniteChain| fc.absorb.iter().filter(|a| **a > 0.0).count();
    let (a1, a2) = (count(&w1), count(&w2));
    let finite_absorption_set = Criterion {
        verdict: if a1 == a2 { Verdict::Holds } else { Verdict::Fails },
        evidence: format!("|A ∩ W| = {a1} (window {}), {a2} (window {})", w1.len(), w2.len()),
    };

    let lambda_0 = if chain.is_finite() {
        None
    } else {
        let unbounded = |l: f64| growth_along(chain, l, window).map(|g| g.0 == Verdict::Holds);
        if unbounded(lo * (1.0 - 1e-6))? {
            let (mut a, mut b) = (0.0, lo * (1.0 - 1e-6));
            for _ in 0..30 {
                let mid = 0.5 * (a + b);
                if unbounded(mid)? {
                    b = mid;
                } else {
                    a = mid;
                }
            }
            Some(b)
        } else {
            None
        }
    };

    let near_critical = lambda >= lo - 1e-9 && lambda <= hi + 1e-9;
    let exists = if lambda > hi + 1e-9 || bounded.0 == Verdict::Holds {
        Verdict::Fails
    } else if near_critical && regime_at_critical == Regime::InfiniteMgf {
        Verdict::Holds
    } else if below.0 == Verdict::Holds
        || lambda_0.is_some_and(|l0| l0 < lambda)
        || (lambda < lo && column_sums.verdict == Verdict::Holds && finite_absorption_set.verdict == Verdict::Holds)
    {
        Verdict::Holds
    } else {
        Verdict::Undetermined
    };
    Ok(ExistenceReport {
        lambda,
        critical,
        regime_at_critical,
        unbounded_below: Criterion { verdict: below.0, evidence: below.1 },
        bounded_at: Criterion { verdict: bounded.0, evidence: bounded.1 },
        column_sums,
        finite_absorption_set,
        lambda_0,
        exists,
    })
}

/// Maximum of `nu(x) - (e^lambda - 1)/E_x[e^{lambda tau}; tau < tau_x]` over
/// the window; non-positive when the domination bound holds.
pub fn domination_gap(chain: &DiscreteChain, qsd: &Qsd, window: usize) -> Result<f64> {
    let fc = truncate(chain, window)?;
    let bound = renewal_weights(&fc, qsd.lambda);
    Ok(fc
        .states
        .iter()
        .zip(&bound)
        .filter_map(|(s, b)| b.map(|b| qsd.weight(*s) - b))
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Exact survival `P_nu(tau > n)` for `n = 0..=horizon` by propagating `nu`
/// with the full transition rows.
pub fn survival_curve(chain: &DiscreteChain, nu: &[(StateId, f64)], horizon: usize) -> Vec<f64> {
    let states: Vec<StateId> = nu.iter().map(|e| e.0).collect();
    let reach = horizon_for(chain, &states, horizon);
    let mut cur: BTreeMap<StateId, f64> = nu.iter().copied().collect();
    let mut out = vec![cur.values().sum()];
    let mut lost = 0.0;
    for _ in 0..horizon {
        let mut next: BTreeMap<StateId, f64> = BTreeMap::new();
        for (&s, &w) in &cur {
            let r = chain.row(s, reach);
            for (y, p) in r.entries {
                *next.entry(y).or_insert(0.0) += w * p;
            }
            lost += w * r.beyond;
        }
        next.retain(|_, v| *v > 1e-300);
        out.push(next.values().sum::<f64>() + lost);
        cur = next;
    }
    out
}

/// Convenience: minimal QSD of an infinite-regime chain on a window, using
/// the critical parameter estimated on `schedule`.
pub fn minimal_qsd(chain: &DiscreteChain, schedule: &Schedule, window: usize) -> Result<Qsd> {
    let est = critical_parameter(chain, schedule)?;
    let report = regime_classify(chain, &est, None, schedule)?;
    match report.regime {
        Regime::InfiniteMgf => qsd_renewal(chain, est.lambda, None, window),
        Regime::FiniteMgf => Err(QsdError::RegimeMismatch(format!(
            "finite regime at lambda_cr = {} (return transform {})",
            est.lambda, report.return_part
        ))),
        Regime::Undetermined => {
            if (1.0 - report.return_part).abs() <= RETURN_TOL * 100.0 {
                qsd_renewal(chain, est.lambda, None, window)
            } else {
                Err(QsdError::NoQsdAtLambda {
                    lambda: est.lambda,
                    reason: "regime at the critical parameter is undetermined".into(),
                })
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HarmonicFunction {
    pub anchor: StateId,
    pub lambda: f64,
    pub states: Vec<StateId>,
    /// `h_z(x) = E_x[e^{lambda tau_z}; tau_z < tau]`, with the return value at `z`.
    pub values: Vec<f64>,
    /// Sup over `x` of `|(p h)(x) - e^{-lambda} h(x) - p(x, z)(h(z) - 1)| / max(1, h(x))`.
    pub residual: f64,
}

pub fn harmonic_function(chain: &DiscreteChain, lambda: f64, z: StateId, window: usize) -> Result<HarmonicFunction> {
    let fc = truncate(chain, window)?;
    let zi = position(&fc, z)?;
    let t = taboo_solve(&fc, lambda, zi).ok_or(QsdError::SingularSystem { lambda })?;
    let mut h = t.hitting();
    h[zi] = t.return_part;
    let ph = fc.right_mul(&h);
    let d = (-lambda).exp();
    let residual = (0..fc.len())
        .map(|x| {
            let pxz = fc.rows[x].iter().filter(|e| e.0 == zi).map(|e| e.1).sum::<f64>();
            (ph[x] - d * h[x] - pxz * (h[zi] - 1.0)).abs() / h[x].max(1.0)
        })
        .fold(0.0, f64::max);
    Ok(HarmonicFunction { anchor: z, lambda, states: fc.states.clone(), values: h, residual })
}

/// Finite convex combination of QSDs sharing one parameter.
pub fn mixture(chain: &DiscreteChain, parts: &[(f64, &Qsd)]) -> Result<Qsd> {
    let first = parts.first().ok_or_else(|| QsdError::Precondition("empty mixture".into()))?.1;
    let total: f64 = parts.iter().map(|p| p.0).sum();
    if parts.iter().any(|p| p.0 < 0.0) || (total - 1.0).abs() > 1e-12 {
        return Err(QsdError::Precondition("mixture weights must be a probability vector".into()));
    }
    if parts.iter().any(|p| (p.1.lambda - first.lambda).abs() > 1e-12) {
        return Err(QsdError::Precondition("mixture components must share lambda".into()));
    }
    let mut acc: BTreeMap<StateId, f64> = BTreeMap::new();
    for (w, q) in parts {
        for (s, v) in q.pairs() {
            *acc.entry(s).or_insert(0.0) += w * v;
        }
    }
    let tail = parts.iter().map(|p| p.0 * p.1.certificate.tail_bound).sum();
    let (states, weights) = acc.into_iter().unzip();
    Ok(certify(chain, states, weights, first.lambda, QsdMethod::MartinLimit, tail))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gallery::{hub_two_spokes, killed_drifted_walk, HubTwoSpokes};

    fn ring() -> DiscreteChain {
        DiscreteChain::explicit(vec![0, 1], vec![(0, vec![(1, 1.0)], 0.0), (1, vec![(0, 0.5)], 0.5)]).unwrap()
    }

    #[test]
    fn ring_perron() {
        let q = qsd_finite_state(&ring()).unwrap();
        assert!((q.lambda - 0.5 * 2f64.ln()).abs() < 1e-12);
        assert!((q.weights[0] - (2f64.sqrt() - 1.0)).abs() < 1e-10);
        assert!((q.weights[1] - (2.0 - 2f64.sqrt())).abs() < 1e-10);
        assert!(q.certificate.pass, "{:?}", q.certificate);
        assert!(q.certificate.eigen_residual < 1e-12);
    }

    #[test]
    fn uniform_on_ring_fails_certificate() {
        let c = verify_qsd(&ring(), &[(StateId(0), 0.5), (StateId(1), 0.5)], 0.5 * 2f64.ln(), 30, 1e-5);
        // (nu p)(0) = 1/4, e^{-lambda} nu(0) = 1/(2 sqrt 2)
        assert!((c.eigen_residual - (2.0 - 2f64.sqrt()) / 4.0).abs() < 1e-12);
        assert!(!c.pass);
    }

    #[test]
    fn ring_renewal_and_mu_agree_with_perron() {
        let lam = 0.5 * 2f64.ln();
        let r = qsd_renewal(&ring(), lam, None, 2).unwrap();
        let m = qsd_mu(&ring(), lam, StateId(0), 2).unwrap();
        let p = qsd_finite_state(&ring()).unwrap();
        assert!(r.tv(&p.pairs()) < 1e-8 && m.tv(&p.pairs()) < 1e-8);
        let mm = mu_measure(&ring(), 0.1, StateId(0), 2).unwrap();
        assert!(mm.residual < 1e-12);
    }

    #[test]
    fn hub_infinite_regime_renewal() {
        let m = hub_two_spokes(0.8, 1.25).unwrap();
        let h = HubTwoSpokes::new(0.8, 1.25).unwrap();
        let lam = h.e_lambda_cr().ln();
        let q = qsd_renewal(m.discrete().unwrap(), lam, None, 161).unwrap();
        for y in -8..=8 {
            assert!((q.weight(StateId(y)) - h.qsd_cr(y)).abs() < 1e-9, "y={y}");
        }
        assert!((q.weight(StateId(0)) - 0.6).abs() < 1e-9);
        assert!((q.weight(StateId(2)) - 0.3 * 0.16).abs() < 1e-9);
        assert!(q.certificate.eigen_residual < 1e-9, "{:?}", q.certificate);
    }

    #[test]
    fn hub_finite_regime_rejects_renewal() {
        let m = hub_two_spokes(0.8, 0.0).unwrap();
        let h = HubTwoSpokes::new(0.8, 0.0).unwrap();
        let err = qsd_renewal(m.discrete().unwrap(), h.lambda0(), None, 401).unwrap_err();
        assert!(matches!(err, QsdError::RegimeMismatch(_)), "{err:?}");
    }

    #[test]
    fn hub_martin_limits() {
        let m = hub_two_spokes(0.8, 0.0).unwrap();
        let h = HubTwoSpokes::new(0.8, 0.0).unwrap();
        let sched = Schedule::new(vec![400, 800, 1600, 3200]);
        for sign in [1, -1] {
            let seq = escaping_sequence(sign, &DEFAULT_MARTIN_NS);
            let out = qsd_martin_limit(m.discrete().unwrap(), h.lambda0(), &seq, &sched).unwrap();
            let MartinOutcome::Qsd(q) = out else { panic!("expected a probability limit") };
            for y in -5..=5 {
                assert!((q.weight(StateId(y)) - h.qsd_edge(sign, y)).abs() < 1e-6, "sign={sign} y={y}");
            }
        }
        let seq = escaping_sequence(1, &DEFAULT_MARTIN_NS);
        let MartinOutcome::Qsd(q) = qsd_martin_limit(m.discrete().unwrap(), h.lambda0(), &seq, &sched).unwrap() else {
            unreachable!()
        };
        assert!((q.weight(StateId(0)) - 0.25).abs() < 1e-6);
        assert!((q.weight(StateId(1)) - 0.1875).abs() < 1e-6);
        assert!((q.weight(StateId(-1)) - 0.0625).abs() < 1e-6);
        assert!((q.weight(StateId(2)) - 0.15625).abs() < 1e-6);
    }

    #[test]
    fn killed_walk_limit_is_subprobability() {
        let m = killed_drifted_walk(0.6, 2f64.ln()).unwrap();
        let sched = Schedule::new(vec![400, 800, 1600]);
        let seq = escaping_sequence(1, &DEFAULT_MARTIN_NS);
        let out = qsd_martin_limit(m.discrete().unwrap(), 2f64.ln(), &seq, &sched);
        match out {
            Ok(MartinOutcome::Subprobability { mass, .. }) => assert!(mass < 1.0 - 1e-3, "{mass}"),
            Ok(MartinOutcome::Qsd(_)) => panic!("limit should lose mass"),
            Err(e) => assert!(matches!(e, QsdError::NonconvergentKernel { .. }), "{e:?}"),
        }
    }

    #[test]
    fn harmonic_function_on_hub() {
        let m = hub_two_spokes(0.8, 0.0).unwrap();
        let h = HubTwoSpokes::new(0.8, 0.0).unwrap();
        let lam = 0.9 * h.lambda0();
        let hf = harmonic_function(m.discrete().unwrap(), lam, StateId(0), 201).unwrap();
        assert!(hf.residual < 1e-12, "{}", hf.residual);
        let at = |s: i64| hf.values[hf.states.iter().position(|&t| t == StateId(s)).unwrap()];
        assert!((at(0) - h.return_mgf(lam, 0)).abs() < 1e-10);
        assert!((at(1) - h.a(lam)).abs() < 1e-10);
        assert!(at(0) <= 1.0 && hf.values.iter().all(|v| *v > 0.0));
    }

    #[test]
    fn mixture_of_edges_is_a_qsd() {
        let m = hub_two_spokes(0.8, 0.0).unwrap();
        let c = m.discrete().unwrap();
        let h = HubTwoSpokes::new(0.8, 0.0).unwrap();
        let edge = |sign: i64| {
            let states: Vec<StateId> = (-60..=60).map(StateId).collect();
            let weights = states.iter().map(|s| h.qsd_edge(sign, s.0)).collect();
            certify(c, states, weights, h.lambda0(), QsdMethod::MartinLimit, 0.0)
        };
        let (a, b) = (edge(1), edge(-1));
        let mix = mixture(c, &[(0.3, &a), (0.7, &b)]).unwrap();
        assert!(mix.certificate.eigen_residual < 1e-9, "{:?}", mix.certificate);
        assert!((mix.weight(StateId(0)) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn window_perron_tail_bound_shrinks() {
        let m = hub_two_spokes(0.8, 1.25).unwrap();
        let a = qsd_window_perron(m.discrete().unwrap(), 41).unwrap();
        let b = qsd_window_perron(m.discrete().unwrap(), 161).unwrap();
        assert!(b.certificate.tail_bound < a.certificate.tail_bound);
        assert!(b.certificate.tail_bound < 1e-12);
    }
}
