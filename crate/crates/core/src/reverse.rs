//! Tilted time reversal `q(y, x) = nu(x) p(x, y) e^lambda / nu(y)` and the
//! identities linking its hitting behaviour to transforms of `p`.

use serde::{Deserialize, Serialize};

use crate::analytics::{mgf_at, taboo_solve, Schedule};
use crate::chain::{restrict, truncate, DiscreteChain, FiniteChain, StateId};
use crate::error::{QsdError, Result};
use crate::linalg::settle;
use crate::par_map;
use crate::qsd::Qsd;

/// Return probability within this distance of one counts as recurrence evidence.
pub const RECURRENCE_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RecurrenceHint {
    Recurrent,
    Transient,
}

#[derive(Clone, Debug)]
pub struct ReverseChain {
    pub lambda: f64,
    pub nu: Vec<f64>,
    /// Forward chain restricted to the support of `nu`.
    pub forward: FiniteChain,
    /// Reverse chain on the same window; `exit` holds the row defects.
    pub reverse: FiniteChain,
}

impl ReverseChain {
    pub fn states(&self) -> &[StateId] {
        &self.forward.states
    }

    /// `1 - sum_x q(y, x)` per window state.
    pub fn defects(&self) -> &[f64] {
        &self.reverse.exit
    }

    pub fn q(&self, y: usize, x: usize) -> f64 {
        self.reverse.rows[y].iter().filter(|e| e.0 == x).map(|e| e.1).sum()
    }

    pub fn p(&self, x: usize, y: usize) -> f64 {
        self.forward.rows[x].iter().filter(|e| e.0 == y).map(|e| e.1).sum()
    }

    /// `Q_x(tau_x < infinity)` on the window.
    pub fn return_probability(&self, xi: usize) -> f64 {
        taboo_solve(&self.reverse, 0.0, xi).map_or(1.0, |t| t.return_part)
    }

    pub fn hint(&self, xi: usize) -> RecurrenceHint {
        if 1.0 - self.return_probability(xi) <= RECURRENCE_TOL {
            RecurrenceHint::Recurrent
        } else {
            RecurrenceHint::Transient
        }
    }

    /// `I_nu(x) = e^lambda sum_z nu(z) p(z, cemetery) Q_z(tau_x^0 < infinity)`.
    pub fn i_nu(&self, xi: usize) -> f64 {
        let h = match taboo_solve(&self.reverse, 0.0, xi) {
            Some(t) => t.hitting(),
            None => vec![1.0; self.nu.len()],
        };
        let s: f64 = (0..self.nu.len()).map(|z| self.nu[z] * self.forward.absorb[z] * h[z]).sum();
        self.lambda.exp() * s
    }

    /// `I_nu` at every window state.
    pub fn i_nu_field(&self) -> Vec<f64> {
        let idx: Vec<usize> = (0..self.nu.len()).collect();
        par_map(&idx, |&i| self.i_nu(i))
    }

    /// Relative defect of `P(path) = e^{-lambda n} nu(x_n)/nu(x_0) Q(reversed path)`.
    pub fn path_residual(&self, path: &[usize]) -> f64 {
        let n = path.len().saturating_sub(1);
        let mut pp = 1.0;
        let mut qq = 1.0;
        for w in path.windows(2) {
            pp *= self.p(w[0], w[1]);
            qq *= self.q(w[1], w[0]);
        }
        let rhs = (-self.lambda * n as f64).exp() * self.nu[path[n]] / self.nu[path[0]] * qq;
        (pp - rhs).abs() / pp.abs().max(rhs.abs()).max(f64::MIN_POSITIVE)
    }
}

fn horizon(chain: &DiscreteChain, states: &[StateId]) -> Result<usize> {
    states
        .iter()
        .map(|&s| chain.index_of(s).ok_or(QsdError::UnknownState(s)))
        .try_fold(0, |m, i| i.map(|i| m.max(i + 1)))
}

pub fn build_reverse(chain: &DiscreteChain, qsd: &Qsd) -> Result<ReverseChain> {
    if qsd.lambda <= 0.0 {
        return Err(QsdError::Precondition("lambda must be positive".into()));
    }
    let forward = restrict(chain, qsd.states.clone(), horizon(chain, &qsd.states)?);
    let mut nu = vec![0.0; forward.len()];
    for (s, w) in qsd.pairs() {
        nu[forward.index_of(s).unwrap()] += w;
    }
    if let Some(i) = nu.iter().position(|w| !(*w > 0.0)) {
        return Err(QsdError::ZeroWeight(forward.states[i]));
    }
    let e = qsd.lambda.exp();
    let n = forward.len();
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (x, row) in forward.rows.iter().enumerate() {
        for &(y, p) in row {
            rows[y].push((x, nu[x] * p * e / nu[y]));
        }
    }
    for r in &mut rows {
        r.sort_by_key(|e| e.0);
    }
    let exit: Vec<f64> = rows.iter().map(|r| 1.0 - r.iter().map(|e| e.1).sum::<f64>()).collect();
    let reverse = FiniteChain::from_parts(forward.states.clone(), rows, vec![0.0; n], exit.iter().map(|d| d.max(0.0)).collect());
    Ok(ReverseChain { lambda: qsd.lambda, nu, forward, reverse })
}

/// One identity: `p_side` and `q_side` values and their relative residual.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub p_side: f64,
    pub q_side: f64,
    pub residual: f64,
    /// Both sides infinite (recurrent reverse chain, divergent transform).
    pub consistent_divergence: bool,
}

impl IdentityCheck {
    fn new(p_side: f64, q_side: f64) -> Self {
        if !p_side.is_finite() && !q_side.is_finite() {
            return IdentityCheck { p_side, q_side, residual: 0.0, consistent_divergence: true };
        }
        let residual = (p_side - q_side).abs() / p_side.abs().max(q_side.abs()).max(1.0);
        IdentityCheck { p_side, q_side, residual, consistent_divergence: false }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReversalReport {
    pub state: StateId,
    /// `E_x[e^{lambda tau_x}; tau_x < tau] = Q_x(tau_x < infinity)`.
    pub return_identity: IdentityCheck,
    /// `E_x[e^{lambda tau}; tau < tau_x] = I_nu(x)/nu(x)`.
    pub absorption_identity: IdentityCheck,
    /// `E_x[e^{lambda tau}] = (I_nu(x)/nu(x)) E^Q_x[N(x)]`.
    pub full_identity: IdentityCheck,
    /// `E_x[tau_x e^{lambda tau_x}; tau_x < tau] = E^Q_x[tau_x; tau_x < infinity]`.
    pub time_identity: IdentityCheck,
    pub i_nu: f64,
    pub hint: RecurrenceHint,
}

impl ReversalReport {
    pub fn max_residual(&self) -> f64 {
        [&self.return_identity, &self.absorption_identity, &self.full_identity, &self.time_identity]
            .iter()
            .map(|c| c.residual)
            .fold(0.0, f64::max)
    }
}

pub fn reversal_identity_check(chain: &DiscreteChain, qsd: &Qsd, x: StateId) -> Result<ReversalReport> {
    let rev = build_reverse(chain, qsd)?;
    reversal_identities(&rev, x)
}

pub fn reversal_identities(rev: &ReverseChain, x: StateId) -> Result<ReversalReport> {
    let xi = rev.forward.index_of(x).ok_or(QsdError::UnknownState(x))?;
    let lambda = rev.lambda;
    let fwd = taboo_solve(&rev.forward, lambda, xi);
    let bwd = taboo_solve(&rev.reverse, 0.0, xi);

    let (p_ret, p_abs, p_time) = match &fwd {
        Some(t) => (t.return_part, t.absorb_part, t.time_weighted_return(&rev.forward)),
        None => (1.0, f64::INFINITY, f64::INFINITY),
    };
    let p_full = mgf_at(&rev.forward, lambda, xi).unwrap_or(f64::INFINITY);
    let (q_ret, q_time) = match &bwd {
        Some(t) => (t.return_part, t.time_weighted_return(&rev.reverse)),
        None => (1.0, f64::INFINITY),
    };
    let i_nu = rev.i_nu(xi);
    let ratio = i_nu / rev.nu[xi];
    let visits = if 1.0 - q_ret <= 1e-13 { f64::INFINITY } else { 1.0 / (1.0 - q_ret) };
    let p_full = if 1.0 - p_ret <= 1e-13 { f64::INFINITY } else { p_full };
    Ok(ReversalReport {
        state: x,
        return_identity: IdentityCheck::new(p_ret, q_ret),
        absorption_identity: IdentityCheck::new(p_abs, ratio),
        full_identity: IdentityCheck::new(p_full, ratio * visits),
        time_identity: IdentityCheck::new(p_time, q_time),
        i_nu,
        hint: if 1.0 - q_ret <= RECURRENCE_TOL { RecurrenceHint::Recurrent } else { RecurrenceHint::Transient },
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StationarityCheck {
    pub states: Vec<StateId>,
    /// `pi(x) = 1/E_x[tau_x e^{lambda tau_x}; tau_x < tau]`, normalized on the window.
    pub pi: Vec<f64>,
    /// `||pi q - pi||_1`.
    pub residual: f64,
    /// Anchor time-weighted return transform on the window schedule.
    pub anchor_values: Vec<(usize, f64)>,
}

/// Checks that `pi(x) = 1/E_x[tau_x e^{lambda tau_x}; tau_x < tau]` is
/// stationary for the reverse chain. The anchor value must settle over
/// `schedule`; otherwise `NotPositiveRecurrent`.
pub fn reverse_stationarity_check(chain: &DiscreteChain, qsd: &Qsd, schedule: &Schedule) -> Result<StationarityCheck> {
    let rev = build_reverse(chain, qsd)?;
    let anchor = chain.state_at(0).ok_or(QsdError::EmptyWindow)?;
    if !chain.is_finite() {
        let sizes = schedule.sizes(chain);
        let mut vals = Vec::new();
        for &w in &sizes {
            let fc = truncate(chain, w)?;
            let xi = fc.index_of(anchor).ok_or(QsdError::UnknownState(anchor))?;
            let v = taboo_solve(&fc, qsd.lambda, xi).map_or(f64::INFINITY, |t| t.time_weighted_return(&fc));
            if !v.is_finite() {
                return Err(QsdError::NotPositiveRecurrent { value: v });
            }
            vals.push(v);
        }
        let s = settle(&sizes, &vals, schedule.rtol);
        if !s.converged {
            return Err(QsdError::NotPositiveRecurrent { value: *vals.last().unwrap() });
        }
    }
    let idx: Vec<usize> = (0..rev.nu.len()).collect();
    let inv: Vec<f64> = par_map(&idx, |&i| {
        taboo_solve(&rev.forward, rev.lambda, i)
            .map(|t| t.time_weighted_return(&rev.forward))
            .filter(|v| v.is_finite() && *v > 0.0)
            .map_or(0.0, |v| 1.0 / v)
    });
    let mass: f64 = inv.iter().sum();
    let pi: Vec<f64> = inv.iter().map(|v| v / mass).collect();
    let piq = rev.reverse.left_mul(&pi);
    let residual = piq.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
    let sizes = if chain.is_finite() { vec![] } else { schedule.sizes(chain) };
    let anchor_values = sizes
        .iter()
        .filter_map(|&w| {
            let fc = truncate(chain, w).ok()?;
            let xi = fc.index_of(anchor)?;
            Some((w, taboo_solve(&fc, qsd.lambda, xi)?.time_weighted_return(&fc)))
        })
        .collect();
    Ok(StationarityCheck { states: rev.forward.states.clone(), pi, residual, anchor_values })
}
