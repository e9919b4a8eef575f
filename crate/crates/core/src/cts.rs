//! Continuous-time chains: uniformized discretization, QSD transfer between
//! the skeleton and the process, generator residuals, the continuous renewal
//! formula and birth-death specializations.

use serde::{Deserialize, Serialize};

use crate::analytics::{CriticalEstimate, CriticalMethod, Schedule};
use crate::chain::{truncate_generator, ContinuousChain, DiscreteChain, FiniteGenerator, StateId};
use crate::error::{QsdError, Result};
use crate::gallery::BirthDeath;
use crate::linalg::{factor_generator, generator_critical, settle, BandLu};
use crate::par_map;
use crate::qsd::{Qsd, QsdCertificate, QsdMethod, CERT_TOL, DEFAULT_HORIZON};

/// Poisson tail mass left out of the uniformization series.
pub const POISSON_TAIL: f64 = 1e-13;
/// Largest accepted `Lambda * d`.
pub const UNIFORMIZATION_CAP: f64 = 1e6;

/// Poisson weights `P(N = k)` for `k = 0..=K` with tail below
/// [`POISSON_TAIL`], plus `P(N > k)`.
fn poisson(m: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if m > UNIFORMIZATION_CAP {
        return Err(QsdError::RateOverflow { rate: m, terms: 0 });
    }
    let mut w = Vec::new();
    let mut lw = -m;
    let mut k = 0usize;
    loop {
        w.push(lw.exp());
        let next = lw + m.ln() - ((k + 1) as f64).ln();
        if (k + 1) as f64 > m {
            let r = m / (k + 2) as f64;
            if next.exp() / (1.0 - r) < POISSON_TAIL {
                break;
            }
        }
        lw = next;
        k += 1;
        if k > 10 * (m as usize) + 1000 {
            return Err(QsdError::RateOverflow { rate: m, terms: k });
        }
    }
    // survivor P(N > k), summed from the right
    let mut above = vec![0.0; w.len()];
    let mut acc = 0.0;
    for k in (0..w.len()).rev() {
        above[k] = acc;
        acc += w[k];
    }
    Ok((w, above))
}

/// Uniformization of a truncated generator.
#[derive(Clone, Debug)]
pub struct Uniformized {
    pub rate: f64,
    pub g: FiniteGenerator,
}

impl Uniformized {
    pub fn new(g: FiniteGenerator) -> Self {
        let rate = (0..g.len()).map(|i| g.total_rate(i)).fold(0.0, f64::max).max(1e-300);
        Uniformized { rate, g }
    }

    /// One step of the uniformized jump chain on a row vector; returns the
    /// mass sent to the cemetery and the mass leaving the window.
    fn step(&self, v: &[f64], out: &mut [f64]) -> (f64, f64) {
        let l = self.rate;
        let (mut dead, mut gone) = (0.0, 0.0);
        for (i, o) in out.iter_mut().enumerate() {
            *o = v[i] * (1.0 - self.g.total_rate(i) / l);
        }
        for (i, row) in self.g.rows.iter().enumerate() {
            let vi = v[i];
            if vi == 0.0 {
                continue;
            }
            for &(j, r) in row {
                out[j] += vi * r / l;
            }
            dead += vi * self.g.kill[i] / l;
            gone += vi * self.g.exit[i] / l;
        }
        (dead, gone)
    }

    /// `v P^t`, with the absorbed and window-exit masses.
    pub fn propagate(&self, v: &[f64], t: f64) -> Result<(Vec<f64>, f64, f64)> {
        let (w, above) = poisson(self.rate * t)?;
        let mut cur = v.to_vec();
        let mut next = vec![0.0; v.len()];
        let mut acc: Vec<f64> = cur.iter().map(|x| x * w[0]).collect();
        let (mut dead, mut gone) = (0.0, 0.0);
        for k in 1..w.len() {
            let (d, g) = self.step(&cur, &mut next);
            dead += above[k - 1] * d;
            gone += above[k - 1] * g;
            std::mem::swap(&mut cur, &mut next);
            for (a, c) in acc.iter_mut().zip(&cur) {
                *a += w[k] * c;
            }
        }
        Ok((acc, dead, gone))
    }
}

/// Skeleton chain `X^d_n = X_{dn}` on a window.
#[derive(Clone, Debug)]
pub struct DiscretizedChain {
    pub d: f64,
    pub states: Vec<StateId>,
    /// `P^d(x, y)` inside the window.
    pub rows: Vec<Vec<(usize, f64)>>,
    /// `P_x(X_d = cemetery)`.
    pub absorb: Vec<f64>,
    /// Mass that left the window by time `d`.
    pub exit: Vec<f64>,
    pub uniform_rate: f64,
}

impl DiscretizedChain {
    /// The skeleton as an explicit finite chain (window exit folded into absorption).
    pub fn chain(&self) -> Result<DiscreteChain> {
        let rows = self
            .states
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let e: Vec<(i64, f64)> = self.rows[i].iter().map(|&(j, p)| (self.states[j].0, p)).collect();
                let total: f64 = e.iter().map(|x| x.1).sum();
                (s.0, e, (1.0 - total).max(0.0))
            })
            .collect();
        DiscreteChain::explicit(self.states.iter().map(|s| s.0).collect(), rows)
    }
}

pub fn discretize(ctmc: &ContinuousChain, d: f64, window: usize) -> Result<DiscretizedChain> {
    if !(d > 0.0) {
        return Err(QsdError::Precondition("d must be positive".into()));
    }
    let u = Uniformized::new(truncate_generator(ctmc, window)?);
    poisson(u.rate * d)?;
    let n = u.g.len();
    let idx: Vec<usize> = (0..n).collect();
    let out = par_map(&idx, |&i| {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        u.propagate(&e, d)
    });
    let mut rows = Vec::with_capacity(n);
    let mut absorb = Vec::with_capacity(n);
    let mut exit = Vec::with_capacity(n);
    for r in out {
        let (v, dead, gone) = r?;
        rows.push(v.into_iter().enumerate().filter(|e| e.1 > 0.0).collect());
        absorb.push(dead);
        exit.push(gone);
    }
    Ok(DiscretizedChain { d, states: u.g.states.clone(), rows, absorb, exit, uniform_rate: u.rate })
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 0 { 1.0 } else if n == 1 { z } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * p - pm) / (z * z - 1.0);
            let dz = p / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

pub const GL_NODES: usize = 32;
pub const QUAD_RTOL: f64 = 1e-10;

fn integrate_panels(u: &Uniformized, nu: &[f64], lambda: f64, d: f64, panels: usize) -> Result<Vec<f64>> {
    let (x, w) = gauss_legendre(GL_NODES);
    let h = d / panels as f64;
    let mut acc = vec![0.0; nu.len()];
    for p in 0..panels {
        let a = p as f64 * h;
        let mut start = if p == 0 { nu.to_vec() } else { u.propagate(nu, a)?.0 };
        let mut t_prev = 0.0;
        let mut order: Vec<usize> = (0..GL_NODES).collect();
        order.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
        for &k in &order {
            let t = 0.5 * h * (x[k] + 1.0);
            start = u.propagate(&start, t - t_prev)?.0;
            t_prev = t;
            let f = 0.5 * h * w[k] * (lambda * (a + t)).exp();
            for (acc_i, s) in acc.iter_mut().zip(&start) {
                *acc_i += f * s;
            }
        }
    }
    Ok(acc)
}

/// `nu~(x) = int_0^d e^{lambda s} P_nu(X_s = x) ds`, normalized; `qsd_d` is
/// a QSD of the `d`-skeleton on the same window.
pub fn qsd_transfer_to_cts(ctmc: &ContinuousChain, qsd_d: &Qsd, d: f64, window: usize) -> Result<Qsd> {
    let u = Uniformized::new(truncate_generator(ctmc, window)?);
    let lambda = qsd_d.lambda / d;
    let mut nu = vec![0.0; u.g.len()];
    for (s, w) in qsd_d.pairs() {
        let i = u.g.index_of(s).ok_or(QsdError::UnknownState(s))?;
        nu[i] += w;
    }
    let mut panels = 1;
    let mut prev = integrate_panels(&u, &nu, lambda, d, panels)?;
    loop {
        panels *= 2;
        let cur = integrate_panels(&u, &nu, lambda, d, panels)?;
        let scale: f64 = cur.iter().sum();
        let change = cur.iter().zip(&prev).map(|(a, b)| (a - b).abs()).sum::<f64>() / scale;
        prev = cur;
        if change <= QUAD_RTOL {
            break;
        }
        if panels >= 64 {
            return Err(QsdError::Quadrature { panels });
        }
    }
    let mass: f64 = prev.iter().sum();
    let weights: Vec<f64> = prev.iter().map(|v| v / mass).collect();
    certify_cts(ctmc, u.g.states.clone(), weights, lambda, QsdMethod::Transfer, qsd_d.certificate.tail_bound)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GeneratorResidual {
    /// `max_y |sum_x nu(x) L(x, y) + lambda nu(y)|` over the support and its neighbours.
    pub residual: f64,
    /// Same maximum over the first half of the support.
    pub interior: f64,
    /// `|1 - sum nu|`.
    pub mass_defect: f64,
    /// Negative weights, or weights that stop decaying at the far end.
    pub tail_violation: bool,
}

pub fn generator_residual(ctmc: &ContinuousChain, nu: &[(StateId, f64)], lambda: f64, window: usize) -> GeneratorResidual {
    use std::collections::BTreeMap;
    let mut flow: BTreeMap<StateId, f64> = BTreeMap::new();
    for &(x, w) in nu {
        let r = ctmc.rates(x, window);
        let q = r.total();
        *flow.entry(x).or_insert(0.0) += (lambda - q) * w;
        for (y, rate) in r.entries {
            *flow.entry(y).or_insert(0.0) += rate * w;
        }
    }
    let order: Vec<usize> = {
        let mut o: Vec<usize> = nu.iter().filter_map(|e| ctmc.index_of(e.0)).collect();
        o.sort_unstable();
        o
    };
    let half = order.get(order.len() / 2).copied().unwrap_or(0);
    let mut residual = 0.0f64;
    let mut interior = 0.0f64;
    for (y, v) in &flow {
        residual = residual.max(v.abs());
        if ctmc.index_of(*y).is_some_and(|i| i < half) {
            interior = interior.max(v.abs());
        }
    }
    let total: f64 = nu.iter().map(|e| e.1).sum();
    let mut by_index: Vec<(usize, f64)> = nu.iter().filter_map(|e| ctmc.index_of(e.0).map(|i| (i, e.1))).collect();
    by_index.sort_by_key(|e| e.0);
    let m = by_index.len();
    let peak = by_index.iter().map(|e| e.1.abs()).fold(0.0, f64::max);
    let far = by_index[m - m / 10 - 1..].iter().map(|e| e.1.abs()).fold(0.0, f64::max);
    let tail_violation = by_index.iter().any(|e| e.1 < -1e-14) || far > 1e-6 * peak;
    GeneratorResidual { residual, interior, mass_defect: (1.0 - total).abs(), tail_violation }
}

/// `P_nu(tau > t)` for `t = h, 2h, ..., n h` on the window.
pub fn cts_survival(ctmc: &ContinuousChain, nu: &[(StateId, f64)], h: f64, n: usize, window: usize) -> Result<Vec<f64>> {
    let u = Uniformized::new(truncate_generator(ctmc, window)?);
    let mut v = vec![0.0; u.g.len()];
    for &(s, w) in nu {
        v[u.g.index_of(s).ok_or(QsdError::UnknownState(s))?] += w;
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        v = u.propagate(&v, h)?.0;
        out.push(v.iter().sum());
    }
    Ok(out)
}

/// Generator residual and the survival tail at times `0.1 k`, `k <= 30`.
pub fn certify_cts(
    ctmc: &ContinuousChain,
    states: Vec<StateId>,
    weights: Vec<f64>,
    lambda: f64,
    method: QsdMethod,
    tail_bound: f64,
) -> Result<Qsd> {
    let pairs: Vec<(StateId, f64)> = states.iter().copied().zip(weights.iter().copied()).collect();
    let window = states.iter().filter_map(|&s| ctmc.index_of(s)).max().map_or(1, |i| i + 1);
    let g = generator_residual(ctmc, &pairs, lambda, window);
    let h = 0.1;
    let surv = cts_survival(ctmc, &pairs, h, DEFAULT_HORIZON, window)?;
    let tail_residual = surv
        .iter()
        .enumerate()
        .map(|(k, s)| (s - (-lambda * h * (k + 1) as f64).exp()).abs())
        .fold(0.0, f64::max);
    let scale = (0..window).filter_map(|i| ctmc.state_at(i)).map(|s| ctmc.rates(s, window).total()).fold(1.0, f64::max);
    let eigen_residual = g.residual / scale;
    let certificate = QsdCertificate {
        eigen_residual,
        tail_residual,
        horizon: DEFAULT_HORIZON,
        tail_bound,
        tol: CERT_TOL,
        pass: eigen_residual <= CERT_TOL && tail_residual <= CERT_TOL && tail_bound < 1e-8,
    };
    Ok(Qsd { states, weights, lambda, method, certificate })
}

/// Critical decay rate of the generator, from window values settled over
/// the schedule.
pub fn cts_critical(ctmc: &ContinuousChain, schedule: &Schedule) -> Result<CriticalEstimate> {
    let sizes: Vec<usize> = {
        let mut s: Vec<usize> = schedule.windows.iter().map(|&w| ctmc.enumeration().clamp(w)).collect();
        s.dedup();
        s
    };
    let vals: Vec<f64> = sizes
        .iter()
        .map(|&w| truncate_generator(ctmc, w).map(|g| generator_critical(&g)))
        .collect::<Result<_>>()?;
    let window_values: Vec<(usize, f64)> = sizes.iter().copied().zip(vals.iter().copied()).collect();
    let exact = ctmc.enumeration().len().is_some_and(|n| sizes.last() == Some(&n));
    if exact {
        let v = *vals.last().unwrap();
        return Ok(CriticalEstimate { lambda: v, bracket: (v, v), window_values, method: CriticalMethod::Exact });
    }
    let s = settle(&sizes, &vals, schedule.rtol);
    if !s.converged {
        return Err(QsdError::ScheduleExhausted { last_change: s.last_change });
    }
    let last = *vals.last().unwrap();
    let (lo, hi) = if s.value <= last { (s.value, last) } else { (last, s.value) };
    Ok(CriticalEstimate {
        lambda: s.value,
        bracket: (lo - schedule.rtol * lo.abs(), hi + schedule.rtol * hi.abs()),
        window_values,
        method: CriticalMethod::Spectral,
    })
}

/// Continuous taboo solve at window position `xi`.
struct CtsTaboo {
    q: f64,
    /// `z(y) = sum_w q(x, w) G'(w, y)` with `G'` the Green kernel killed at `x`.
    z: Vec<f64>,
    /// `kill(x) + sum_{y != x} q(x, y) E_y[e^{lambda tau}; tau < T_x]`.
    escape: f64,
    /// `sum_y q(x, y) E_y[e^{lambda T_x}; T_x < tau]`.
    back: f64,
}

fn cts_taboo(g: &FiniteGenerator, lambda: f64, xi: usize) -> Option<CtsTaboo> {
    let lu: BandLu = factor_generator(g, lambda, Some(xi), false).ok()?;
    let mut z = vec![0.0; g.len()];
    for &(j, r) in &g.rows[xi] {
        z[j] += r;
    }
    lu.solve_transpose(&mut z);
    let kill = |i: usize| g.kill[i] + g.exit[i];
    let escape = kill(xi) + (0..g.len()).filter(|&i| i != xi).map(|i| z[i] * kill(i)).sum::<f64>();
    let back = z[xi];
    if !(escape.is_finite() && back.is_finite()) {
        return None;
    }
    Some(CtsTaboo { q: g.total_rate(xi), z, escape, back })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CtsRenewal {
    pub qsd: Qsd,
    pub anchor: StateId,
    /// `E_x[e^{lambda tau_x}; tau_x < tau]` at the anchor.
    pub return_part: f64,
    /// Largest relative gap between the cycle and after-jump forms.
    pub form_gap: f64,
}

/// Renewal weights `lambda / (kill(x) + sum_y q(x,y) E_y[...])` in cycle
/// and after-jump form; far states fall back to the anchor's occupation
/// measure when their taboo system is numerically singular.
fn cts_renewal_weights(g: &FiniteGenerator, lambda: f64, anchor: usize, need_return: bool) -> Result<(Vec<f64>, f64, f64)> {
    let at = cts_taboo(g, lambda, anchor).ok_or(QsdError::SingularSystem { lambda })?;
    let return_part = at.back / (at.q - lambda);
    let idx: Vec<usize> = (0..g.len()).collect();
    let forms: Vec<Option<(f64, f64)>> = par_map(&idx, |&i| {
        let t = cts_taboo(g, lambda, i)?;
        if t.q <= lambda {
            return None;
        }
        let cycle = (lambda / (t.q - lambda)) / (t.escape / (t.q - lambda));
        let after = (lambda / t.q) / (t.escape / t.q);
        (cycle.is_finite() && cycle > 0.0).then_some((cycle, after))
    });
    let nx = forms[anchor].ok_or(QsdError::SingularSystem { lambda })?.0;
    let mut gap = 0.0f64;
    let mut w = Vec::with_capacity(g.len());
    for (i, f) in forms.iter().enumerate() {
        match f {
            Some((c, a)) => {
                gap = gap.max((c - a).abs() / c);
                w.push(*c);
            }
            None => {
                if need_return && (1.0 - return_part).abs() > 1e-4 {
                    return Err(QsdError::NonconvergentStoppedMgf { state: g.states[i] });
                }
                // nu(y) = nu(x) mu_x(y)/mu_x(x) with mu_x(y) = z(y)/(q_x - lambda)
                w.push(nx * at.z[i]);
            }
        }
    }
    Ok((w, return_part, gap))
}

fn default_anchor(g: &FiniteGenerator, ctmc: &ContinuousChain, lambda: f64) -> Result<usize> {
    (0..g.len())
        .filter_map(|k| ctmc.state_at(k))
        .filter_map(|s| g.index_of(s))
        .find(|&i| g.total_rate(i) > lambda * (1.0 + 1e-3))
        .ok_or(QsdError::RatePole { state: g.states[0], lambda, rate: g.total_rate(0) })
}

/// Minimal QSD at the critical rate in the infinite regime:
/// `nu(x) = (lambda/(q_x - lambda)) / E_x[e^{lambda tau}; tau < tau_x]`.
pub fn cts_qsd_renewal(ctmc: &ContinuousChain, lambda: f64, anchor: Option<StateId>, window: usize) -> Result<CtsRenewal> {
    if lambda <= 0.0 {
        return Err(QsdError::Precondition("lambda must be positive".into()));
    }
    let g = truncate_generator(ctmc, window)?;
    let xi = match anchor {
        Some(s) => {
            let i = g.index_of(s).ok_or(QsdError::UnknownState(s))?;
            let q = g.total_rate(i);
            if lambda >= q {
                return Err(QsdError::RatePole { state: s, lambda, rate: q });
            }
            i
        }
        None => default_anchor(&g, ctmc, lambda)?,
    };
    let (w, return_part, form_gap) = cts_renewal_weights(&g, lambda, xi, true)?;
    if (1.0 - return_part).abs() > 1e-4 {
        return Err(QsdError::RegimeMismatch(format!(
            "return transform at {} is {return_part} (expected 1 in the infinite regime)",
            g.states[xi]
        )));
    }
    let mass: f64 = w.iter().sum();
    let weights = w.iter().map(|v| v / mass).collect();
    let qsd = certify_cts(ctmc, g.states.clone(), weights, lambda, QsdMethod::Renewal, (1.0 - mass).abs())?;
    Ok(CtsRenewal { qsd, anchor: g.states[xi], return_part, form_gap })
}

/// `E_x[e^{lambda tau}]` on a truncated generator, by a transposed solve.
pub fn cts_mgf(g: &FiniteGenerator, lambda: f64, xi: usize) -> Option<f64> {
    let lu = factor_generator(g, lambda, None, false).ok()?;
    let mut e = vec![0.0; g.len()];
    e[xi] = 1.0;
    lu.solve_transpose(&mut e);
    let s: f64 = (0..g.len()).map(|i| e[i] * (g.kill[i] + g.exit[i])).sum();
    Some(s).filter(|v| v.is_finite() && *v > 0.0)
}

// ---------------------------------------------------------------------------
// Birth-death processes.

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum PassageEstimate {
    Finite { value: f64, bound: f64 },
    Divergent { partial: f64, evidence: String },
}

impl PassageEstimate {
    pub fn is_finite(&self) -> bool {
        matches!(self, PassageEstimate::Finite { .. })
    }
}

/// `E[U] = sum_{n>=1} (1/(lambda_n pi_n)) sum_{i>n} pi_i`, `pi_n = prod_{k=1}^n lambda_{k-1}/mu_k`.
pub fn bd_passage_expectation(bd: &BirthDeath, cap: usize) -> Result<PassageEstimate> {
    if cap < 10 {
        return Err(QsdError::Precondition("cap must be at least 10".into()));
    }
    let big = 4 * cap;
    let mut lpi = vec![0.0f64; big + 1];
    for n in 1..=big {
        lpi[n] = lpi[n - 1] + (bd.lambda_k(n as i64 - 1) / bd.mu_k(n as i64)).ln();
    }
    let ratio = |n: usize| (lpi[n] - lpi[n - 1]).exp();
    let r_end = ratio(big);
    if r_end >= 1.0 - 1e-9 {
        return Ok(PassageEstimate::Divergent {
            partial: f64::INFINITY,
            evidence: format!("pi_n ratio {r_end} at n = {big}: inner sums diverge"),
        });
    }
    // inner tails relative to pi_n: s_n = sum_{i>n} pi_i / pi_n
    let mut s = vec![0.0f64; big + 1];
    s[big] = r_end / (1.0 - r_end);
    for n in (1..big).rev() {
        s[n] = ratio(n + 1) * (1.0 + s[n + 1]);
    }
    let t = |n: usize| s[n] / bd.lambda_k(n as i64);
    let partial: f64 = (1..=cap).map(t).sum();
    let (a, b) = (t(cap / 2), t(cap));
    let p = -(b / a).ln() / 2f64.ln();
    if p > 1.05 && b > 0.0 {
        let bound = b * cap as f64 / (p - 1.0);
        Ok(PassageEstimate::Finite { value: partial + bound, bound })
    } else {
        Ok(PassageEstimate::Divergent {
            partial,
            evidence: format!("terms decay like n^-{p:.3} (term {b} at n = {cap})"),
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BdQsd {
    pub qsd: Qsd,
    /// Formula weights before normalization; `raw[0] = lambda/mu_0`.
    pub raw: Vec<f64>,
    /// Weights from the three-term recursion seeded by `nu(0) = lambda/mu_0`.
    pub recursion: Vec<f64>,
    /// Total variation between formula and recursion over the states where
    /// the recursion is still decaying.
    pub recursion_tv: f64,
    pub passage: PassageEstimate,
    pub lambda_cr: CriticalEstimate,
}

/// Forward recursion of the generator equation from `nu(-1) = 0`, `nu(0) = lambda/mu_0`.
pub fn bd_recursion(bd: &BirthDeath, lambda: f64, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    if n == 0 {
        return v;
    }
    v[0] = lambda / bd.mu_k(0);
    let mut prev = 0.0;
    for y in 0..n - 1 {
        let k = y as i64;
        let up = if y == 0 { 0.0 } else { bd.lambda_k(k - 1) * prev };
        let next = ((bd.lambda_k(k) + bd.mu_k(k) - lambda) * v[y] - up) / bd.mu_k(k + 1);
        prev = v[y];
        v[y + 1] = next;
    }
    v
}

/// QSD of a birth-death process at `lambda` via the post-jump renewal
/// formula, cross-checked against the forward recursion.
pub fn bd_qsd(bd: &BirthDeath, lambda: f64, window: usize, schedule: &Schedule) -> Result<BdQsd> {
    let mu0 = bd.mu_k(0);
    if !(lambda > 0.0) || lambda >= mu0 {
        return Err(QsdError::NoQsdAtLambda { lambda, reason: format!("nu(0) = lambda/mu_0 must lie in (0, 1) (mu_0 = {mu0})") });
    }
    let ctmc = ContinuousChain::new(bd.clone());
    let lambda_cr = cts_critical(&ctmc, schedule)?;
    let (_, hi) = lambda_cr.bracket;
    if lambda > hi {
        return Err(QsdError::NoQsdAtLambda { lambda, reason: format!("above the critical rate {}", lambda_cr.lambda) });
    }
    let passage = bd_passage_expectation(bd, 200)?;
    let near = (lambda - lambda_cr.lambda).abs() <= 1e-6 * lambda_cr.lambda.max(1.0);
    if passage.is_finite() && !near {
        return Err(QsdError::NoQsdAtLambda {
            lambda,
            reason: format!("E[U] is finite, so only lambda_cr = {} carries a QSD", lambda_cr.lambda),
        });
    }
    let g = truncate_generator(&ctmc, window)?;
    let (w, _, _) = cts_renewal_weights(&g, lambda, 0, false)?;
    let mass: f64 = w.iter().sum();
    let weights: Vec<f64> = w.iter().map(|v| v / mass).collect();
    let recursion = bd_recursion(bd, lambda, g.len());
    let peak = recursion.iter().copied().fold(0.0, f64::max);
    let mut recursion_tv = 0.0;
    for (i, r) in recursion.iter().enumerate() {
        if *r < 1e-12 * peak || (i > 0 && *r > recursion[i - 1] && recursion[i - 1] < 1e-3 * peak) {
            break;
        }
        recursion_tv += 0.5 * (r - w[i]).abs();
    }
    let qsd = certify_cts(&ctmc, g.states.clone(), weights, lambda, QsdMethod::BirthDeath, (1.0 - mass).abs())?;
    Ok(BdQsd { qsd, raw: w, recursion, recursion_tv, passage, lambda_cr })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gallery::Poly;
    use crate::qsd::qsd_finite_state;

    fn bd(b: [f64; 3], m: [f64; 3]) -> BirthDeath {
        BirthDeath::new(Poly(b), Poly(m)).unwrap()
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(32);
        let s: f64 = w.iter().sum();
        assert!((s - 2.0).abs() < 1e-14);
        let m: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(62)).sum();
        assert!((m - 2.0 / 63.0).abs() < 1e-14);
        let e: f64 = x.iter().zip(&w).map(|(x, w)| w * x.exp()).sum();
        assert!((e - (1f64.exp() - (-1f64).exp())).abs() < 1e-14);
    }

    #[test]
    fn pure_death_discretization() {
        let c = ContinuousChain::explicit(vec![0], vec![(0, vec![], 1.0)]).unwrap();
        let dc = discretize(&c, 1.0, 1).unwrap();
        assert!((dc.absorb[0] - (1.0 - (-1f64).exp())).abs() < 1e-13);
        assert!((dc.rows[0][0].1 - (-1f64).exp()).abs() < 1e-13);
    }

    #[test]
    fn two_state_ring_renewal_matches_transfer() {
        let c = ContinuousChain::explicit(vec![0, 1], vec![(0, vec![(1, 1.0)], 0.0), (1, vec![(0, 0.5)], 0.5)]).unwrap();
        let d = 0.1;
        let dc = discretize(&c, d, 2).unwrap();
        let qd = qsd_finite_state(&dc.chain().unwrap()).unwrap();
        let t = qsd_transfer_to_cts(&c, &qd, d, 2).unwrap();
        // -lambda is the top eigenvalue of [[-1, 1], [0.5, -1]]
        let lam = 1.0 - 0.5f64.sqrt();
        assert!((t.lambda - lam).abs() < 1e-9, "{}", t.lambda);
        let r = cts_qsd_renewal(&c, lam, None, 2).unwrap();
        assert!(r.qsd.tv(&t.pairs()) < 1e-7);
        assert!(r.form_gap < 1e-9);
        assert!(r.qsd.certificate.eigen_residual < 1e-8, "{:?}", r.qsd.certificate);
    }

    #[test]
    fn passage_expectation_examples() {
        assert!(!bd_passage_expectation(&bd([1.0, 0.0, 0.0], [2.0, 0.0, 0.0]), 200).unwrap().is_finite());
        assert!(!bd_passage_expectation(&bd([1.0, 0.0, 0.0], [1.0, 0.0, 0.0]), 200).unwrap().is_finite());
        assert!(!bd_passage_expectation(&bd([0.3, 0.0, 0.0], [1.0, 1.0, 0.0]), 200).unwrap().is_finite());
        assert!(bd_passage_expectation(&bd([0.3, 0.0, 0.0], [1.0, 2.0, 1.0]), 200).unwrap().is_finite());
    }

    #[test]
    fn bd_zero_weight_and_pole() {
        let b = bd([1.0, 0.0, 0.0], [2.0, 1.0, 0.0]);
        let sched = Schedule::new(vec![50, 100, 200]);
        let q = bd_qsd(&b, 0.5, 100, &sched).unwrap();
        assert!((q.raw[0] - 0.25).abs() < 1e-12, "{}", q.raw[0]);
        // heavy tail below the critical rate: the window misses mass
        assert!(q.qsd.certificate.tail_bound > 1e-3);
        let q = bd_qsd(&b, 1.0, 100, &sched).unwrap();
        assert!((q.qsd.weights[0] - 0.5).abs() < 1e-9, "{}", q.qsd.weights[0]);
        assert!(q.qsd.certificate.eigen_residual < 1e-8, "{:?}", q.qsd.certificate);
        assert!(q.recursion_tv < 1e-6, "{}", q.recursion_tv);
        assert!(matches!(bd_qsd(&b, 2.0, 100, &sched), Err(QsdError::NoQsdAtLambda { .. })));
    }
}
