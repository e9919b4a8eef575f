//! Exponential moments of the absorption time, stopped and return
//! transforms, the critical decay parameter, regime classification, Green and
//! Martin-type kernels and the convergence parameter `R_cr`.
//!
//! Infinite chains are handled through a schedule of growing windows. The
//! transform on a window never exceeds the transform of the full chain, so a
//! singular window system proves divergence, while convergence is judged on
//! the sequence of window values (extrapolated in `1/window` when the
//! truncation error is algebraic).

use serde::{Deserialize, Serialize};

use crate::chain::{truncate, DiscreteChain, FiniteChain, StateId};
use crate::error::{QsdError, Result};
use crate::linalg::{critical_scale, factor_discrete, settle, BandLu, Settled};

/// Default window sizes `50 * 2^k` for `k = 0..=6`.
pub fn default_windows() -> Vec<usize> {
    (0..=6).map(|k| 50usize << k).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub windows: Vec<usize>,
    pub rtol: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule { windows: default_windows(), rtol: 1e-8 }
    }
}

impl Schedule {
    pub fn new(windows: Vec<usize>) -> Self {
        Schedule { windows, rtol: 1e-8 }
    }

    /// Window sizes clamped to the size of the state space, deduplicated.
    pub fn sizes(&self, chain: &DiscreteChain) -> Vec<usize> {
        let mut out: Vec<usize> = self.windows.iter().map(|&w| chain.enumeration().clamp(w)).collect();
        out.dedup();
        out
    }

    /// Whether the last window covers the whole (finite) state space.
    pub fn exact(&self, chain: &DiscreteChain) -> bool {
        match chain.enumeration().len() {
            Some(n) => self.windows.last().is_some_and(|&w| w >= n),
            None => false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    /// `E_x[e^{lambda_cr tau}] < infinity`.
    FiniteMgf,
    /// `E_x[e^{lambda_cr tau}] = infinity`.
    InfiniteMgf,
    Undetermined,
}

pub(crate) fn anchor_index(chain: &DiscreteChain, anchor: Option<StateId>) -> Result<(StateId, usize)> {
    match anchor {
        None => Ok((chain.state_at(0).ok_or(QsdError::EmptyWindow)?, 0)),
        Some(s) => chain.index_of(s).map(|i| (s, i)).ok_or(QsdError::UnknownState(s)),
    }
}

fn window_for(chain: &DiscreteChain, w: usize, need: usize) -> Result<FiniteChain> {
    if need >= chain.enumeration().clamp(w) {
        return Err(QsdError::Precondition(format!("window {w} does not contain the requested state")));
    }
    truncate(chain, w)
}

/// Position of a state inside a window.
pub(crate) fn position(fc: &FiniteChain, s: StateId) -> Result<usize> {
    fc.index_of(s).ok_or(QsdError::UnknownState(s))
}

/// Full transform `f(x) = E_x[e^{lambda tau}]` on a window, or `None` when
/// the window system is singular. Far from the absorbing region the values
/// can overflow to infinity on large windows; [`mgf_at`] stays accurate.
pub fn window_mgf(fc: &FiniteChain, lambda: f64) -> Option<Vec<f64>> {
    let lu = factor_discrete(fc, lambda, None, false).ok()?;
    Some(field(fc, &lu, lambda.exp()))
}

fn field(fc: &FiniteChain, lu: &BandLu, c: f64) -> Vec<f64> {
    let mut f: Vec<f64> = (0..fc.len()).map(|i| c * fc.kill(i)).collect();
    lu.solve(&mut f);
    f
}

/// Green row `G(x, .)` from the factorization of `I - cP_W`.
fn green_from(lu: &BandLu, xi: usize) -> Vec<f64> {
    let mut g = vec![0.0; lu.len()];
    g[xi] = 1.0;
    lu.solve_transpose(&mut g);
    g
}

fn mgf_from_green(fc: &FiniteChain, g: &[f64], c: f64) -> f64 {
    c * g.iter().enumerate().map(|(i, v)| v * fc.kill(i)).sum::<f64>()
}

/// `E_x[e^{lambda tau}]` on a window at position `xi`, computed as
/// `e^lambda sum_y G(x, y) a(y)` so that no intermediate quantity exceeds
/// the Green mass.
pub fn mgf_at(fc: &FiniteChain, lambda: f64, xi: usize) -> Option<f64> {
    let lu = factor_discrete(fc, lambda, None, false).ok()?;
    let c = lambda.exp();
    Some(mgf_from_green(fc, &green_from(&lu, xi), c))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum MgfStatus {
    Converged,
    Diverged { reason: String },
    NotConverged,
}

#[derive(Clone, Debug)]
pub struct MgfField {
    pub lambda: f64,
    /// States of the largest window evaluated.
    pub states: Vec<StateId>,
    /// Values on that window.
    pub values: Vec<f64>,
    pub window: usize,
    pub status: MgfStatus,
    /// Limit estimates at the anchor states.
    pub anchors: Vec<(StateId, Settled)>,
}

impl MgfField {
    pub fn converged(&self) -> bool {
        self.status == MgfStatus::Converged
    }

    pub fn diverged(&self) -> bool {
        matches!(self.status, MgfStatus::Diverged { .. })
    }

    pub fn anchor(&self, s: StateId) -> Option<f64> {
        self.anchors.iter().find(|a| a.0 == s).map(|a| a.1.value)
    }

    pub fn require_converged(&self) -> Result<&Self> {
        match self.status {
            MgfStatus::Converged => Ok(self),
            _ => Err(QsdError::ScheduleExhausted {
                last_change: self.anchors.iter().map(|a| a.1.last_change).fold(0.0, f64::max),
            }),
        }
    }
}

const DIVERGENCE_CAP: f64 = 1e12;

/// `E_x[e^{lambda tau}]` on the schedule; convergence is judged at `anchors`
/// (the first enumerated state when empty).
pub fn absorption_mgf(
    chain: &DiscreteChain,
    lambda: f64,
    schedule: &Schedule,
    anchors: &[StateId],
) -> Result<MgfField> {
    let anchors: Vec<(StateId, usize)> = if anchors.is_empty() {
        vec![anchor_index(chain, None)?]
    } else {
        anchors.iter().map(|&s| anchor_index(chain, Some(s))).collect::<Result<_>>()?
    };
    let need = anchors.iter().map(|a| a.1).max().unwrap_or(0);
    let sizes: Vec<usize> = schedule.sizes(chain).into_iter().filter(|&w| w > need).collect();
    if sizes.is_empty() {
        return Err(QsdError::EmptyWindow);
    }
    let mut trail: Vec<Vec<f64>> = vec![Vec::new(); anchors.len()];
    let mut used = Vec::new();
    let mut last: Option<(Vec<f64>, FiniteChain)> = None;
    let mut growth = 0;
    for &w in &sizes {
        let fc = window_for(chain, w, need)?;
        let Ok(lu) = factor_discrete(&fc, lambda, None, false) else {
            return Ok(diverged(lambda, fc, "window system singular", &anchors));
        };
        let c = lambda.exp();
        let vals: Vec<f64> = anchors
            .iter()
            .map(|a| Ok(mgf_from_green(&fc, &green_from(&lu, position(&fc, a.0)?), c)))
            .collect::<Result<_>>()?;
        let worst = vals.iter().copied().fold(0.0, f64::max);
        if !worst.is_finite() || worst > DIVERGENCE_CAP {
            return Ok(diverged(lambda, fc, "transform exceeds cap", &anchors));
        }
        if let Some(prev) = trail[0].last() {
            if vals[0] > 10.0 * prev {
                growth += 1;
                if growth >= 3 {
                    return Ok(diverged(lambda, fc, "repeated tenfold growth", &anchors));
                }
            } else {
                growth = 0;
            }
        }
        for (k, v) in vals.into_iter().enumerate() {
            trail[k].push(v);
        }
        used.push(w);
        last = Some((field(&fc, &lu, c), fc));
    }
    let exact = schedule.exact(chain);
    let settled: Vec<(StateId, Settled)> = anchors
        .iter()
        .zip(&trail)
        .map(|(a, t)| {
            let s = if exact {
                Settled { value: *t.last().unwrap(), converged: true, extrapolated: false, last_change: 0.0 }
            } else {
                settle(&used, t, schedule.rtol)
            };
            (a.0, s)
        })
        .collect();
    let (f, fc) = last.unwrap();
    let status = if settled.iter().all(|s| s.1.converged) { MgfStatus::Converged } else { MgfStatus::NotConverged };
    Ok(MgfField { lambda, window: fc.len(), states: fc.states, values: f, status, anchors: settled })
}

fn diverged(lambda: f64, fc: FiniteChain, reason: &str, anchors: &[(StateId, usize)]) -> MgfField {
    MgfField {
        lambda,
        window: fc.len(),
        states: fc.states,
        values: Vec::new(),
        status: MgfStatus::Diverged { reason: reason.into() },
        anchors: anchors
            .iter()
            .map(|a| {
                (a.0, Settled { value: f64::INFINITY, converged: false, extrapolated: false, last_change: f64::INFINITY })
            })
            .collect(),
    }
}

/// Taboo quantities at a pinned state `x` on one window, from the
/// factorization of `I - cP` with the transitions out of `x` removed.
///
/// All of them are read off the taboo Green measure
/// `z(y) = sum_n e^{lambda n} P_x(X_{n+1} = y, n + 1 <= tau_x ^ tau) / e^lambda`
/// of excursions from `x`, which is computed by a transposed solve and is
/// bounded by the stopped transform.
#[derive(Clone, Debug)]
pub struct TabooSolve {
    lu: BandLu,
    c: f64,
    xi: usize,
    pub z: Vec<f64>,
    /// `E_x[e^{lambda tau_x}; tau_x < tau]`.
    pub return_part: f64,
    /// `E_x[e^{lambda tau}; tau < tau_x]`.
    pub absorb_part: f64,
}

impl TabooSolve {
    /// `mu_x(y) = E_x[sum_{n < tau_x} e^{lambda n} 1{X_n = y}]` on the window.
    pub fn mu(&self) -> Vec<f64> {
        let mut m: Vec<f64> = self.z.iter().map(|v| self.c * v).collect();
        m[self.xi] = 1.0;
        m
    }

    /// `E_y[e^{lambda T_x}; T_x < tau]` for the state at position `yi`.
    pub fn hit_from(&self, yi: usize) -> f64 {
        if yi == self.xi {
            return 1.0;
        }
        let mut h = vec![0.0; self.z.len()];
        h[yi] = 1.0;
        self.lu.solve_transpose(&mut h);
        h[self.xi]
    }

    /// `E_y[e^{lambda T_x}; T_x < tau]` for every window state, by a direct
    /// solve; grows geometrically away from `x` on transient chains.
    pub fn hitting(&self) -> Vec<f64> {
        let mut h = vec![0.0; self.z.len()];
        h[self.xi] = 1.0;
        self.lu.solve(&mut h);
        h
    }

    /// `E_x[tau_x e^{lambda tau_x}; tau_x < tau]`, the derivative of the
    /// return part in `lambda`.
    pub fn time_weighted_return(&self, fc: &FiniteChain) -> f64 {
        let mut rhs = vec![0.0; self.z.len()];
        for (i, row) in fc.rows.iter().enumerate() {
            if i == self.xi {
                continue;
            }
            for &(j, p) in row {
                rhs[j] += self.z[i] * p;
            }
        }
        self.lu.solve_transpose(&mut rhs);
        self.return_part + self.c * self.c * rhs[self.xi]
    }
}

/// Taboo solve at window position `xi`; `None` if the system is singular.
pub fn taboo_solve(fc: &FiniteChain, lambda: f64, xi: usize) -> Option<TabooSolve> {
    let lu = factor_discrete(fc, lambda, Some(xi), false).ok()?;
    let c = lambda.exp();
    let mut z = vec![0.0; fc.len()];
    for &(j, p) in &fc.rows[xi] {
        z[j] += p;
    }
    lu.solve_transpose(&mut z);
    let return_part = c * z[xi];
    let escape: f64 = z.iter().enumerate().filter(|&(i, _)| i != xi).map(|(i, v)| v * fc.kill(i)).sum();
    let absorb_part = c * fc.kill(xi) + c * c * escape;
    Some(TabooSolve { lu, c, xi, z, return_part, absorb_part })
}

#[derive(Clone, Debug)]
pub struct StoppedMgf {
    pub state: StateId,
    pub lambda: f64,
    pub return_part: Settled,
    pub absorb_part: Settled,
    pub windows: Vec<usize>,
}

impl StoppedMgf {
    /// `E_x[e^{lambda (tau ^ tau_x)}]`.
    pub fn total(&self) -> f64 {
        self.return_part.value + self.absorb_part.value
    }
}

/// Return and absorption parts of the transform stopped at the first return
/// to `x`.
pub fn stopped_mgf(chain: &DiscreteChain, lambda: f64, x: StateId, schedule: &Schedule) -> Result<StoppedMgf> {
    let (x, xi) = anchor_index(chain, Some(x))?;
    let sizes: Vec<usize> = schedule.sizes(chain).into_iter().filter(|&w| w > xi).collect();
    let (mut rets, mut abss) = (Vec::new(), Vec::new());
    for &w in &sizes {
        let fc = truncate(chain, w)?;
        let t = taboo_solve(&fc, lambda, position(&fc, x)?).ok_or(QsdError::NonconvergentStoppedMgf { state: x })?;
        if t.absorb_part > DIVERGENCE_CAP {
            return Err(QsdError::NonconvergentStoppedMgf { state: x });
        }
        rets.push(t.return_part);
        abss.push(t.absorb_part);
    }
    let exact = schedule.exact(chain);
    let fix = |v: &[f64]| {
        if exact {
            Settled { value: *v.last().unwrap(), converged: true, extrapolated: false, last_change: 0.0 }
        } else {
            settle(&sizes, v, schedule.rtol)
        }
    };
    Ok(StoppedMgf { state: x, lambda, return_part: fix(&rets), absorb_part: fix(&abss), windows: sizes })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum CriticalMethod {
    /// Limit of window spectral radii.
    Spectral,
    /// The spectral limit overshoots; bracketed by bisection on the
    /// convergence of the absorption transform.
    TransformBisection,
    /// Finite state space: the single window is exact.
    Exact,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CriticalEstimate {
    pub lambda: f64,
    pub bracket: (f64, f64),
    pub window_values: Vec<(usize, f64)>,
    pub method: CriticalMethod,
}

/// `lambda_cr(W) = -ln rho(P_W)` for one window.
pub fn window_lambda_cr(fc: &FiniteChain) -> f64 {
    critical_scale(fc).ln()
}

/// Estimate `lambda_cr = sup{lambda : E_x[e^{lambda tau}] < infinity}`.
pub fn critical_parameter(chain: &DiscreteChain, schedule: &Schedule) -> Result<CriticalEstimate> {
    let sizes = schedule.sizes(chain);
    if sizes.is_empty() {
        return Err(QsdError::EmptyWindow);
    }
    let mut vals = Vec::with_capacity(sizes.len());
    for &w in &sizes {
        vals.push(window_lambda_cr(&truncate(chain, w)?));
    }
    let window_values: Vec<(usize, f64)> = sizes.iter().copied().zip(vals.iter().copied()).collect();
    let last = *vals.last().unwrap();
    if !last.is_finite() {
        return Err(QsdError::Bracket("window matrix is nilpotent".into()));
    }
    if schedule.exact(chain) {
        let tol = 4.0 * f64::EPSILON * last.abs().max(1.0);
        return Ok(CriticalEstimate { lambda: last, bracket: (last - tol, last + tol), window_values, method: CriticalMethod::Exact });
    }
    let s = settle(&sizes, &vals, schedule.rtol);
    let est = s.value.min(last);
    let tol = (s.last_change * est.abs()).max(1e-13);
    let spectral = CriticalEstimate {
        lambda: est,
        bracket: (est - tol, last),
        window_values: window_values.clone(),
        method: CriticalMethod::Spectral,
    };
    // The window radii converge to ln R_cr, which may exceed lambda_cr.
    let probe = est * (1.0 - 1e-3);
    if probe <= 0.0 || !absorption_mgf(chain, probe, schedule, &[])?.diverged() {
        return Ok(spectral);
    }
    // Windows that neither settle nor blow up are ambiguous: the lower end
    // of the bracket counts them as divergent, the upper end as finite.
    let status = |l: f64| absorption_mgf(chain, l, schedule, &[]).map(|m| m.status);
    let bisect = |finite: &dyn Fn(&MgfStatus) -> bool| -> Result<f64> {
        let (mut lo, mut hi) = (0.0, probe);
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            if finite(&status(mid)?) {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-6 * hi {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    };
    let lo = bisect(&|s| *s == MgfStatus::Converged)?;
    let hi = bisect(&|s| !matches!(s, MgfStatus::Diverged { .. }))?;
    Ok(CriticalEstimate {
        lambda: 0.5 * (lo + hi),
        bracket: (lo, hi),
        window_values,
        method: CriticalMethod::TransformBisection,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RegimeReport {
    pub regime: Regime,
    pub lambda: f64,
    pub anchor: StateId,
    /// Limit of `E_x[e^{lambda tau_x}; tau_x < tau]` at the estimate.
    pub return_part: f64,
    /// Whether `E_x[e^{lambda tau}]` is finite at the estimate.
    pub mgf_finite: bool,
}

/// Tolerance on `|1 - return part|` for the infinite regime.
pub const RETURN_TOL: f64 = 1e-6;

/// Classify the regime at the critical estimate from the return transform:
/// it equals one in the infinite regime (when the stopped transform is
/// finite) and is strictly below one in the finite regime, where
/// `E_x[e^{lambda tau}] = absorb / (1 - return)`.
pub fn regime_classify(
    chain: &DiscreteChain,
    est: &CriticalEstimate,
    anchor: Option<StateId>,
    schedule: &Schedule,
) -> Result<RegimeReport> {
    let (x, _) = anchor_index(chain, anchor)?;
    let lambda = est.lambda;
    let stopped = match stopped_mgf(chain, lambda, x, schedule) {
        Ok(s) if s.absorb_part.last_change <= STOPPED_TOL => Some(s),
        Ok(_) | Err(QsdError::NonconvergentStoppedMgf { .. }) => None,
        Err(e) => return Err(e),
    };
    let ret = stopped.as_ref().map_or(f64::NAN, |s| s.return_part.value);
    let mgf_finite = stopped.is_some() && ret < 1.0 - 1e-4;
    let regime = if est.method == CriticalMethod::TransformBisection || stopped.is_none() {
        Regime::Undetermined
    } else if (1.0 - ret).abs() <= RETURN_TOL {
        Regime::InfiniteMgf
    } else if mgf_finite {
        Regime::FiniteMgf
    } else {
        Regime::Undetermined
    };
    Ok(RegimeReport { regime, lambda, anchor: x, return_part: ret, mgf_finite })
}

/// Relative settling tolerance for the stopped transform in the classifier.
const STOPPED_TOL: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GreenRow {
    pub lambda: f64,
    pub from: StateId,
    pub states: Vec<StateId>,
    /// `G(x, y)` for `y` in the window.
    pub g: Vec<f64>,
    pub mass: f64,
    /// Relative gap between `mass` and `(E_x[e^{lambda tau}] - 1)/(e^lambda - 1)`.
    pub mass_check: f64,
}

impl GreenRow {
    /// Normalized kernel `K(x, .) = G(x, .)/G(x, 1)`.
    pub fn kernel(&self) -> Vec<f64> {
        self.g.iter().map(|v| v / self.mass).collect()
    }
}

/// Green kernel row `G(x, .) = sum_n e^{lambda n} p^n(x, .)` on a window.
pub fn green_kernel(chain: &DiscreteChain, lambda: f64, x: StateId, window: usize) -> Result<GreenRow> {
    let (x, xi) = anchor_index(chain, Some(x))?;
    let fc = window_for(chain, window, xi)?;
    green_row_on(&fc, lambda, position(&fc, x)?)
}

pub(crate) fn green_row_on(fc: &FiniteChain, lambda: f64, xi: usize) -> Result<GreenRow> {
    let lu = factor_discrete(fc, lambda, None, false).map_err(|_| QsdError::DivergentGreen { lambda })?;
    let g = green_from(&lu, xi);
    let mass: f64 = g.iter().sum();
    let expected = (mgf_from_green(fc, &g, lambda.exp()) - 1.0) / lambda.exp_m1();
    Ok(GreenRow {
        lambda,
        from: fc.states[xi],
        states: fc.states.clone(),
        mass_check: (mass - expected).abs() / expected.abs(),
        g,
        mass,
    })
}

/// `C(x, y) = E_x[e^{lambda tau}; T_y < tau] / (E_x[e^{lambda tau}] - 1)`.
pub fn c_kernel(chain: &DiscreteChain, lambda: f64, x: StateId, y: StateId, window: usize) -> Result<f64> {
    let (_, xe) = anchor_index(chain, Some(x))?;
    let (_, ye) = anchor_index(chain, Some(y))?;
    let fc = window_for(chain, window, xe.max(ye))?;
    let (xi, yi) = (position(&fc, x)?, position(&fc, y)?);
    let lu = factor_discrete(&fc, lambda, None, false).map_err(|_| QsdError::DivergentGreen { lambda })?;
    let c = lambda.exp();
    let fx = mgf_from_green(&fc, &green_from(&lu, xi), c);
    let fy = mgf_from_green(&fc, &green_from(&lu, yi), c);
    let t = taboo_solve(&fc, lambda, yi).ok_or(QsdError::DivergentGreen { lambda })?;
    let hit = if xi == yi { t.return_part } else { t.hit_from(xi) };
    Ok(hit * fy / (fx - 1.0))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RCritical {
    pub value: f64,
    pub window_values: Vec<(usize, f64)>,
    pub extrapolated: bool,
}

/// `R_cr = inf{R > 1 : E_x[R^{tau_x}; tau_x < tau] >= 1}` by bisection on
/// each window, extrapolated over the schedule.
pub fn r_critical(chain: &DiscreteChain, x: StateId, schedule: &Schedule) -> Result<RCritical> {
    let (_, xe) = anchor_index(chain, Some(x))?;
    let sizes: Vec<usize> = schedule.sizes(chain).into_iter().filter(|&w| w > xe).collect();
    let mut vals = Vec::new();
    for &w in &sizes {
        let fc = truncate(chain, w)?;
        let xi = position(&fc, x)?;
        let reaches = |ln_r: f64| taboo_solve(&fc, ln_r, xi).is_none_or(|t| t.return_part >= 1.0);
        if reaches(0.0) {
            vals.push(1.0);
            continue;
        }
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        while !reaches(hi) {
            lo = hi;
            hi *= 2.0;
            if hi > 60.0 {
                return Err(QsdError::Bracket("return transform stays below 1".into()));
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if reaches(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        vals.push((0.5 * (lo + hi)).exp());
    }
    let window_values: Vec<(usize, f64)> = sizes.iter().copied().zip(vals.iter().copied()).collect();
    if schedule.exact(chain) || vals.len() == 1 {
        return Ok(RCritical { value: *vals.last().unwrap(), window_values, extrapolated: false });
    }
    let s = settle(&sizes, &vals, schedule.rtol);
    Ok(RCritical { value: s.value, window_values, extrapolated: s.extrapolated })
}

/// Total variation distance between two weight vectors aligned by state.
pub fn total_variation(a: &[(StateId, f64)], b: &[(StateId, f64)]) -> f64 {
    let mut m: std::collections::BTreeMap<StateId, f64> = a.iter().copied().collect();
    for &(s, w) in b {
        *m.entry(s).or_insert(0.0) -= w;
    }
    0.5 * m.values().map(|v| v.abs()).sum::<f64>()
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::gallery::{cyclic_transfer, hub_two_spokes, killed_drifted_walk, HubTwoSpokes, JumpLaw};

    fn one_state() -> DiscreteChain {
        DiscreteChain::explicit(vec![0], vec![(0, vec![(0, 0.5)], 0.5)]).unwrap()
    }

    fn ring() -> DiscreteChain {
        DiscreteChain::explicit(vec![0, 1], vec![(0, vec![(1, 1.0)], 0.0), (1, vec![(0, 0.5)], 0.5)]).unwrap()
    }

    #[test]
    fn one_state_transforms() {
        let f = absorption_mgf(&one_state(), 1.5f64.ln(), &Schedule::default(), &[]).unwrap();
        assert!(f.converged());
        assert!((f.values[0] - 3.0).abs() < 1e-12);
        let s = stopped_mgf(&one_state(), 2f64.ln(), StateId(0), &Schedule::default()).unwrap();
        assert!((s.return_part.value - 1.0).abs() < 1e-14);
        assert!((s.absorb_part.value - 1.0).abs() < 1e-14);
        let cp = critical_parameter(&one_state(), &Schedule::default()).unwrap();
        assert!((cp.lambda - 2f64.ln()).abs() < 1e-14);
        let r = r_critical(&one_state(), StateId(0), &Schedule::default()).unwrap();
        assert!((r.value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn ring_transforms() {
        let s = stopped_mgf(&ring(), 0.0, StateId(0), &Schedule::default()).unwrap();
        assert!((s.return_part.value - 0.5).abs() < 1e-15);
        assert!((s.absorb_part.value - 0.5).abs() < 1e-15);
        let cp = critical_parameter(&ring(), &Schedule::default()).unwrap();
        assert!((cp.lambda - 0.5 * 2f64.ln()).abs() < 1e-14);
        let reg = regime_classify(&ring(), &cp, None, &Schedule::default()).unwrap();
        assert_eq!(reg.regime, Regime::InfiniteMgf);
        let f = absorption_mgf(&ring(), cp.lambda * 1.001, &Schedule::default(), &[]).unwrap();
        assert!(f.diverged());
    }

    #[test]
    fn cyclic_mgf_matches_closed_form() {
        let m = cyclic_transfer(0.5, JumpLaw::Point(1)).unwrap();
        let c = m.discrete().unwrap();
        let lam = 0.2f64;
        let f = absorption_mgf(c, lam, &Schedule::default(), &[]).unwrap();
        let e = lam.exp();
        let want = e * 0.5 / (1.0 - e * 0.5 * e);
        assert!((f.values[0] - want).abs() < 1e-13);
    }

    #[test]
    fn hub_mgf_at_lambda0_is_two() {
        let m = hub_two_spokes(0.8, 0.0).unwrap();
        let h = HubTwoSpokes::new(0.8, 0.0).unwrap();
        let f = absorption_mgf(m.discrete().unwrap(), h.lambda0(), &Schedule::default(), &[]).unwrap();
        let v = f.anchor(StateId(0)).unwrap();
        assert!((v - 2.0).abs() < 1e-6, "{v} {:?}", f.status);
        let s = stopped_mgf(m.discrete().unwrap(), h.lambda0(), StateId(0), &Schedule::default()).unwrap();
        assert!((s.return_part.value - 0.5).abs() < 1e-6);
    }

    #[test]
    fn hub_critical_parameter_and_regime() {
        let sched = Schedule::default();
        let m = hub_two_spokes(0.95, 1.5).unwrap();
        let h = HubTwoSpokes::new(0.95, 1.5).unwrap();
        let cp = critical_parameter(m.discrete().unwrap(), &sched).unwrap();
        assert!((cp.lambda - h.e_lambda_cr().ln()).abs() < 1e-8, "{cp:?}");
        let reg = regime_classify(m.discrete().unwrap(), &cp, None, &sched).unwrap();
        assert_eq!(reg.regime, Regime::InfiniteMgf);

        let m = hub_two_spokes(0.8, 0.5).unwrap();
        let h = HubTwoSpokes::new(0.8, 0.5).unwrap();
        let cp = critical_parameter(m.discrete().unwrap(), &sched).unwrap();
        assert!((cp.lambda - h.lambda0()).abs() < 1e-7, "{cp:?}");
        let reg = regime_classify(m.discrete().unwrap(), &cp, None, &sched).unwrap();
        assert_eq!(reg.regime, Regime::FiniteMgf, "{reg:?}");
    }

    #[test]
    fn hub_green_kernel() {
        let m = hub_two_spokes(0.8, 0.0).unwrap();
        let h = HubTwoSpokes::new(0.8, 0.0).unwrap();
        let lam = 0.15;
        for y in [0i64, 1, -2, 3] {
            let row = green_kernel(m.discrete().unwrap(), lam, StateId(y), 400).unwrap();
            let i = row.states.iter().position(|s| s.0 == y).unwrap();
            assert!((row.g[i] - h.green_diag(lam, y)).abs() < 1e-10);
            assert!(row.mass_check < 1e-10);
            let k: f64 = row.kernel().iter().sum();
            assert!((k - 1.0).abs() < 1e-12);
        }
        let one = green_kernel(&one_state(), 0.3, StateId(0), 1).unwrap();
        assert!((one.g[0] - 1.0 / (1.0 - 0.3f64.exp() * 0.5)).abs() < 1e-14);
    }

    #[test]
    fn hub_c_kernel() {
        let m = hub_two_spokes(0.8, 0.0).unwrap();
        let c = m.discrete().unwrap();
        let v = c_kernel(c, 0.15, StateId(60), StateId(1), 400).unwrap();
        assert!((v - 1.0).abs() < 1e-6);
        let w = c_kernel(c, 0.15, StateId(-10), StateId(1), 400).unwrap();
        assert!(w > 0.0 && w < 1.0);
    }

    #[test]
    fn killed_walk_r_critical() {
        let m = killed_drifted_walk(0.6, 2f64.ln()).unwrap();
        let sched = Schedule::new(vec![150, 300, 600, 1200]);
        let r = r_critical(m.discrete().unwrap(), StateId(0), &sched).unwrap();
        assert!((r.value - 2.5).abs() < 1e-4, "{r:?}");
        let cp = critical_parameter(m.discrete().unwrap(), &sched).unwrap();
        assert!(r.value >= cp.lambda.exp());
        assert_eq!(cp.method, CriticalMethod::TransformBisection);
        assert!(cp.bracket.0 <= 2f64.ln() + 1e-9 && 2f64.ln() <= cp.bracket.1 + 1e-3, "{cp:?}");
    }
}
