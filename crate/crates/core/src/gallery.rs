//! Parametric model families with closed-form oracles.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::analytics::Regime;
use crate::chain::{
    truncate, ContinuousChain, DiscreteChain, Enumeration, RateRow, RateRule, Row, StateId,
    TransitionRule,
};
use crate::error::{QsdError, Result};

/// Closed-form facts about a gallery model.
pub trait Oracle: Send + Sync + fmt::Debug {
    fn lambda_cr(&self) -> Option<f64>;
    fn regime(&self) -> Option<Regime>;
    /// Weight of the QSD with decay parameter `lambda` at `y`, when known.
    fn qsd(&self, lambda: f64, y: StateId) -> Option<f64>;
    /// Lower end of the interval of decay parameters admitting a QSD, when known.
    fn lambda_min(&self) -> Option<f64> {
        None
    }
}

#[derive(Clone, Debug)]
pub enum ModelChain {
    Discrete(DiscreteChain),
    Continuous(ContinuousChain),
}

#[derive(Clone, Debug)]
pub struct GalleryModel {
    pub name: String,
    pub params: BTreeMap<String, f64>,
    pub chain: ModelChain,
    pub oracle: Arc<dyn Oracle>,
}

impl GalleryModel {
    pub fn discrete(&self) -> Option<&DiscreteChain> {
        match &self.chain {
            ModelChain::Discrete(c) => Some(c),
            ModelChain::Continuous(_) => None,
        }
    }

    pub fn continuous(&self) -> Option<&ContinuousChain> {
        match &self.chain {
            ModelChain::Continuous(c) => Some(c),
            ModelChain::Discrete(_) => None,
        }
    }
}

fn param(params: &BTreeMap<String, f64>, key: &str) -> Result<f64> {
    params
        .get(key)
        .copied()
        .ok_or_else(|| QsdError::ParamRange(format!("missing parameter `{key}`")))
}

fn param_or(params: &BTreeMap<String, f64>, key: &str, default: f64) -> f64 {
    params.get(key).copied().unwrap_or(default)
}

/// Build a gallery model from its name and a flat parameter map.
///
/// Names: `hub` (q, alpha), `cyclic` (q and one of point, geometric),
/// `killed-walk` (eps, rho), `killed-ring` (rho), `branching` (p0, p1, ...),
/// `discrete-bd` (up), `bd` (birth0, birth1, birth2, death0, death1, death2).
pub fn from_name(name: &str, params: &BTreeMap<String, f64>) -> Result<GalleryModel> {
    match name {
        "hub" => hub_two_spokes(param(params, "q")?, param(params, "alpha")?),
        "cyclic" => {
            let law = if let Some(&k) = params.get("point") {
                JumpLaw::Point(k as usize)
            } else if let Some(&b) = params.get("geometric") {
                JumpLaw::Geometric(b)
            } else {
                return Err(QsdError::ParamRange("cyclic needs `point` or `geometric`".into()));
            };
            cyclic_transfer(param(params, "q")?, law)
        }
        "killed-walk" => {
            killed_drifted_walk(param(params, "eps")?, param_or(params, "rho", std::f64::consts::LN_2))
        }
        "killed-ring" => killed_ring(param_or(params, "rho", std::f64::consts::LN_2)),
        "branching" => {
            let mut pmf = Vec::new();
            while let Some(&p) = params.get(&format!("p{}", pmf.len())) {
                pmf.push(p);
            }
            subcritical_branching(pmf)
        }
        "discrete-bd" => discrete_birth_death(param(params, "up")?),
        "bd" => birth_death(
            Poly([param_or(params, "birth0", 0.0), param_or(params, "birth1", 0.0), param_or(params, "birth2", 0.0)]),
            Poly([param_or(params, "death0", 0.0), param_or(params, "death1", 0.0), param_or(params, "death2", 0.0)]),
        ),
        other => Err(QsdError::ParamRange(format!("unknown gallery model `{other}`"))),
    }
}

// ---------------------------------------------------------------------------
// Hub with two spokes on the integers.

#[derive(Clone, Debug)]
pub struct HubTwoSpokes {
    pub q: f64,
    pub alpha: f64,
    pub rho: f64,
    pub r: f64,
    pub delta: f64,
    enumeration: Enumeration,
}

pub fn hub_two_spokes(q: f64, alpha: f64) -> Result<GalleryModel> {
    let hub = HubTwoSpokes::new(q, alpha)?;
    let mut params = BTreeMap::new();
    params.insert("q".into(), q);
    params.insert("alpha".into(), alpha);
    Ok(GalleryModel {
        name: "hub".into(),
        params,
        chain: ModelChain::Discrete(DiscreteChain::new(hub.clone())),
        oracle: Arc::new(hub),
    })
}

impl HubTwoSpokes {
    pub fn new(q: f64, alpha: f64) -> Result<Self> {
        if !(q > 0.5 && q < 1.0) {
            return Err(QsdError::ParamRange(format!("q = {q} must lie in (1/2, 1)")));
        }
        let rho = ((1.0 - q) / q).sqrt();
        let r = alpha * (q * (1.0 - q)).sqrt();
        if !(alpha >= 0.0 && q - r > 1e-12) {
            return Err(QsdError::ParamRange(format!("alpha = {alpha} must lie in [0, {})", 1.0 / rho)));
        }
        Ok(HubTwoSpokes { q, alpha, rho, r, delta: q - r, enumeration: Enumeration::Integers })
    }

    pub fn e_lambda0(&self) -> f64 {
        1.0 / (2.0 * (self.q * (1.0 - self.q)).sqrt())
    }

    pub fn lambda0(&self) -> f64 {
        self.e_lambda0().ln()
    }

    pub fn e_lambda_cr(&self) -> f64 {
        let a = self.alpha;
        let f = if a > 1.0 { 2.0 / (a + 1.0 / a) } else { 1.0 };
        self.e_lambda0() * f
    }

    pub fn kappa(&self, lambda: f64) -> f64 {
        (-(2.0 * (lambda - self.lambda0())).exp_m1()).max(0.0).sqrt()
    }

    /// `E_1[e^{lambda tau_0}]` on one spoke.
    pub fn a(&self, lambda: f64) -> f64 {
        2.0 * lambda.exp() * self.q / (1.0 + self.kappa(lambda))
    }

    pub fn c(&self, lambda: f64) -> f64 {
        let k = self.kappa(lambda);
        let er = lambda.exp() * self.r;
        (1.0 - 2.0 * er) / (1.0 + k - 2.0 * er)
    }

    /// `r_ell` for `ell >= -1`.
    pub fn r_ell(&self, lambda: f64, ell: i64) -> f64 {
        let k = self.kappa(lambda);
        1.0 - ((1.0 - k) / (1.0 + k)).powi((ell + 1) as i32) * self.c(lambda)
    }

    /// `E_x[e^{lambda tau_cemetery}]`.
    pub fn mgf(&self, lambda: f64, x: i64) -> f64 {
        let k = self.kappa(lambda);
        let e = lambda.exp();
        2.0 * e * self.delta / (1.0 + k - 2.0 * e * self.r) * self.a(lambda).powi(x.abs() as i32)
    }

    /// `E_x[e^{lambda tau_x}; tau_x < tau_cemetery]`.
    pub fn return_mgf(&self, lambda: f64, x: i64) -> f64 {
        let k = self.kappa(lambda);
        if x == 0 {
            (1.0 - k) / 2.0 + lambda.exp() * self.r
        } else {
            1.0 - k / self.r_ell(lambda, x.abs() - 1)
        }
    }

    /// Diagonal of the Green kernel.
    pub fn green_diag(&self, lambda: f64, y: i64) -> f64 {
        let k = self.kappa(lambda);
        if y == 0 {
            2.0 / (1.0 + k - 2.0 * lambda.exp() * self.r)
        } else {
            self.r_ell(lambda, y.abs() - 1) / k
        }
    }

    /// Minimal QSD in the infinite regime (`alpha >= 1`).
    pub fn qsd_cr(&self, y: i64) -> f64 {
        let s = self.rho / self.alpha;
        if y == 0 {
            1.0 - s
        } else {
            (1.0 - s) * 0.5 * s.powi(y.abs() as i32)
        }
    }

    /// QSD obtained as the kernel limit along `sign * n` at the critical
    /// value in the finite regime (`alpha < 1`).
    pub fn qsd_edge(&self, sign: i64, y: i64) -> f64 {
        let rho = self.rho;
        let base = (1.0 - rho).powi(2) / (1.0 - rho * self.alpha) * rho.powi(y.abs() as i32);
        if y == 0 {
            base
        } else {
            let along = (y * sign).max(0) as f64;
            base * (0.5 + (1.0 - self.alpha) * along)
        }
    }

    /// QSD along `sign * n` for `0 < lambda < lambda_cr`.
    pub fn qsd_below(&self, lambda: f64, sign: i64, y: i64) -> f64 {
        let e = lambda.exp();
        let k = self.kappa(lambda);
        let c = self.c(lambda);
        let pre = (e - 1.0) / (2.0 * e * self.delta);
        let up = (1.0 + k) / (2.0 * e * self.q);
        let down = 2.0 * e * (1.0 - self.q) / (1.0 + k);
        let n = y.abs() as i32;
        if y == 0 {
            2.0 * pre
        } else if y * sign > 0 {
            pre * (up.powi(n) - c * down.powi(n)) / (1.0 - c)
        } else {
            pre * down.powi(n)
        }
    }
}

impl TransitionRule for HubTwoSpokes {
    fn enumeration(&self) -> &Enumeration {
        &self.enumeration
    }

    fn row(&self, x: StateId, _horizon: usize) -> Row {
        let y = x.0;
        if y == 0 {
            let side = (1.0 - self.q) / 2.0;
            let mut entries = vec![(StateId(1), side), (StateId(-1), side)];
            if self.r > 0.0 {
                entries.push((StateId(0), self.r));
            }
            Row { entries, absorb: self.delta, beyond: 0.0 }
        } else {
            let s = y.signum();
            Row {
                entries: vec![(StateId(y - s), self.q), (StateId(y + s), 1.0 - self.q)],
                absorb: 0.0,
                beyond: 0.0,
            }
        }
    }
}

impl Oracle for HubTwoSpokes {
    fn lambda_cr(&self) -> Option<f64> {
        Some(self.e_lambda_cr().ln())
    }

    fn regime(&self) -> Option<Regime> {
        Some(if self.alpha < 1.0 { Regime::FiniteMgf } else { Regime::InfiniteMgf })
    }

    /// Minimal QSD at `lambda_cr` for `alpha >= 1`; the `+n` kernel limit otherwise.
    fn qsd(&self, lambda: f64, y: StateId) -> Option<f64> {
        let lcr = self.e_lambda_cr().ln();
        if (lambda - lcr).abs() <= 1e-12 * lcr.max(1.0) {
            Some(if self.alpha >= 1.0 { self.qsd_cr(y.0) } else { self.qsd_edge(1, y.0) })
        } else if lambda > 0.0 && lambda < lcr {
            Some(self.qsd_below(lambda, 1, y.0))
        } else {
            None
        }
    }

    fn lambda_min(&self) -> Option<f64> {
        Some(0.0)
    }
}

// ---------------------------------------------------------------------------
// Cyclic transfer: deterministic descent, renewal jumps from 0.

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum JumpLaw {
    Point(usize),
    /// `mu(j) = (1 - beta) beta^j`.
    Geometric(f64),
    Finite(Vec<f64>),
    /// `mu(j)` proportional to `(j + 1)^{-s}`; its transform has zero radius.
    Zeta(f64),
}

impl JumpLaw {
    pub fn pmf(&self, j: usize) -> f64 {
        match self {
            JumpLaw::Point(k) => (j == *k) as u8 as f64,
            JumpLaw::Geometric(b) => (1.0 - b) * b.powi(j as i32),
            JumpLaw::Finite(v) => v.get(j).copied().unwrap_or(0.0),
            JumpLaw::Zeta(_) => f64::NAN,
        }
    }

    /// `mu([j, infinity))`.
    pub fn tail(&self, j: usize) -> f64 {
        match self {
            JumpLaw::Point(k) => (j <= *k) as u8 as f64,
            JumpLaw::Geometric(b) => b.powi(j as i32),
            JumpLaw::Finite(v) => v.iter().skip(j).sum(),
            JumpLaw::Zeta(_) => f64::NAN,
        }
    }

    pub fn max_support(&self) -> Option<usize> {
        match self {
            JumpLaw::Point(k) => Some(*k),
            JumpLaw::Finite(v) => v.iter().rposition(|&p| p > 0.0),
            _ => None,
        }
    }

    /// Supremum of the abscissa of convergence of `sum mu(j) e^{lambda j}`.
    pub fn radius(&self) -> f64 {
        match self {
            JumpLaw::Geometric(b) => -b.ln(),
            JumpLaw::Zeta(_) => 0.0,
            _ => f64::INFINITY,
        }
    }

    /// `phi(lambda) = sum_j mu(j) e^{lambda j}`.
    pub fn transform(&self, lambda: f64) -> f64 {
        match self {
            JumpLaw::Point(k) => (lambda * *k as f64).exp(),
            JumpLaw::Geometric(b) => {
                let t = b * lambda.exp();
                if t >= 1.0 {
                    f64::INFINITY
                } else {
                    (1.0 - b) / (1.0 - t)
                }
            }
            JumpLaw::Finite(v) => v.iter().enumerate().map(|(j, p)| p * (lambda * j as f64).exp()).sum(),
            JumpLaw::Zeta(_) => {
                if lambda > 0.0 {
                    f64::INFINITY
                } else {
                    1.0
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct CyclicTransfer {
    pub q: f64,
    pub law: JumpLaw,
    enumeration: Enumeration,
}

pub fn cyclic_transfer(q: f64, law: JumpLaw) -> Result<GalleryModel> {
    let model = CyclicTransfer::new(q, law)?;
    let mut params = BTreeMap::new();
    params.insert("q".into(), q);
    match &model.law {
        JumpLaw::Point(k) => {
            params.insert("point".into(), *k as f64);
        }
        JumpLaw::Geometric(b) => {
            params.insert("geometric".into(), *b);
        }
        _ => {}
    }
    Ok(GalleryModel {
        name: "cyclic".into(),
        params,
        chain: ModelChain::Discrete(DiscreteChain::new(model.clone())),
        oracle: Arc::new(model),
    })
}

impl CyclicTransfer {
    pub fn new(q: f64, law: JumpLaw) -> Result<Self> {
        if !(q > 0.0 && q < 1.0) {
            return Err(QsdError::ParamRange(format!("q = {q} must lie in (0, 1)")));
        }
        match &law {
            JumpLaw::Geometric(b) if !(*b > 0.0 && *b < 1.0) => {
                return Err(QsdError::ParamRange(format!("beta = {b} must lie in (0, 1)")))
            }
            JumpLaw::Finite(v) if (v.iter().sum::<f64>() - 1.0).abs() > 1e-12 || v.iter().any(|p| *p < 0.0) => {
                return Err(QsdError::ParamRange("jump law must be a probability vector".into()))
            }
            JumpLaw::Zeta(_) => return Err(QsdError::Moment),
            _ => {}
        }
        let enumeration = match law.max_support() {
            Some(k) => {
                let list = crate::chain::StateList::new((0..=k as i64).map(StateId).collect())?;
                Enumeration::Finite(Arc::new(list))
            }
            None => Enumeration::naturals(),
        };
        Ok(CyclicTransfer { q, law, enumeration })
    }

    pub fn renewal_equation(&self, lambda: f64) -> f64 {
        (1.0 - self.q) * lambda.exp() * self.law.transform(lambda)
    }

    /// Root of `(1 - q) e^lambda phi(lambda) = 1` by bisection.
    pub fn lambda_cr_root(&self) -> f64 {
        let mut hi = self.law.radius().min(50.0);
        let mut lo = 0.0;
        if self.renewal_equation(hi) < 1.0 {
            return hi;
        }
        for _ in 0..300 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.renewal_equation(mid) < 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    pub fn mgf0(&self, lambda: f64) -> f64 {
        let e = lambda.exp();
        e * self.q / (1.0 - self.renewal_equation(lambda))
    }

    /// QSD with decay parameter `lambda` in `(0, lambda_cr]`.
    pub fn qsd_at(&self, lambda: f64, y: i64) -> f64 {
        let e = lambda.exp();
        let mut acc = 0.0;
        for j in 0..y.max(0) as usize {
            acc += self.law.pmf(j) * (lambda * (j + 1) as f64).exp();
        }
        (1.0 / self.q) * (-lambda * (y + 1) as f64).exp() * (e - 1.0) * (1.0 - (1.0 - self.q) * acc)
    }
}

impl TransitionRule for CyclicTransfer {
    fn enumeration(&self) -> &Enumeration {
        &self.enumeration
    }

    fn row(&self, x: StateId, horizon: usize) -> Row {
        if x.0 > 0 {
            return Row { entries: vec![(StateId(x.0 - 1), 1.0)], absorb: 0.0, beyond: 0.0 };
        }
        let jump = 1.0 - self.q;
        let top = match self.law.max_support() {
            Some(k) => k + 1,
            None => horizon.max(1),
        };
        let entries: Vec<(StateId, f64)> = (0..top)
            .map(|j| (StateId(j as i64), jump * self.law.pmf(j)))
            .filter(|e| e.1 > 0.0)
            .collect();
        let beyond = if self.law.max_support().is_some() { 0.0 } else { jump * self.law.tail(top) };
        Row { entries, absorb: self.q, beyond }
    }
}

impl Oracle for CyclicTransfer {
    fn lambda_cr(&self) -> Option<f64> {
        Some(self.lambda_cr_root())
    }

    fn regime(&self) -> Option<Regime> {
        Some(Regime::InfiniteMgf)
    }

    fn qsd(&self, lambda: f64, y: StateId) -> Option<f64> {
        (lambda > 0.0 && lambda <= self.lambda_cr_root() * (1.0 + 1e-12)).then(|| self.qsd_at(lambda, y.0))
    }

    fn lambda_min(&self) -> Option<f64> {
        Some(0.0)
    }
}

// ---------------------------------------------------------------------------
// Independent killing at rate rho on top of a base chain.

#[derive(Clone, Debug)]
pub struct Killed {
    pub base: DiscreteChain,
    pub rho: f64,
}

impl TransitionRule for Killed {
    fn enumeration(&self) -> &Enumeration {
        self.base.enumeration()
    }

    fn row(&self, x: StateId, horizon: usize) -> Row {
        let s = (-self.rho).exp();
        let b = self.base.row(x, horizon);
        Row {
            entries: b.entries.into_iter().map(|(y, p)| (y, p * s)).collect(),
            absorb: b.absorb * s + (1.0 - s),
            beyond: b.beyond * s,
        }
    }

    fn irreducible(&self) -> bool {
        self.base.asserted_irreducible()
    }
}

/// Wrap a base chain with independent geometric killing.
pub fn killed_chain(base: DiscreteChain, rho: f64) -> Result<DiscreteChain> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(QsdError::ParamRange(format!("rho = {rho} must be positive")));
    }
    Ok(DiscreteChain::new(Killed { base, rho }))
}

/// Nearest-neighbour walk on the integers with `p(x, x +- 1) = (1 +- eps)/2`.
#[derive(Clone, Debug)]
pub struct DriftedWalk {
    pub eps: f64,
    enumeration: Enumeration,
}

impl TransitionRule for DriftedWalk {
    fn enumeration(&self) -> &Enumeration {
        &self.enumeration
    }

    fn row(&self, x: StateId, _horizon: usize) -> Row {
        Row {
            entries: vec![(StateId(x.0 + 1), 0.5 * (1.0 + self.eps)), (StateId(x.0 - 1), 0.5 * (1.0 - self.eps))],
            absorb: 0.0,
            beyond: 0.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct KilledOracle {
    pub rho: f64,
    pub base_lambda_cr: f64,
    /// Stationary law of a positive recurrent base, when there is one.
    pub base_stationary: Option<Vec<(StateId, f64)>>,
    pub eps: Option<f64>,
}

impl KilledOracle {
    /// Convergence parameter of the killed drifted walk.
    pub fn r_cr(&self) -> Option<f64> {
        self.eps.map(|e| (self.base_lambda_cr + self.rho).exp() / (1.0 - e * e).sqrt())
    }

    /// `E_x[e^{lambda tau}]` for `lambda < rho` and a stochastic base.
    pub fn mgf(&self, lambda: f64) -> f64 {
        let s = (-self.rho).exp();
        (1.0 - s) * lambda.exp() / (1.0 - (lambda - self.rho).exp())
    }
}

impl Oracle for KilledOracle {
    fn lambda_cr(&self) -> Option<f64> {
        Some(self.base_lambda_cr + self.rho)
    }

    fn regime(&self) -> Option<Regime> {
        Some(Regime::InfiniteMgf)
    }

    fn qsd(&self, lambda: f64, y: StateId) -> Option<f64> {
        if (lambda - self.rho).abs() > 1e-12 {
            return None;
        }
        let st = self.base_stationary.as_ref()?;
        Some(st.iter().find(|e| e.0 == y).map_or(0.0, |e| e.1))
    }

    fn lambda_min(&self) -> Option<f64> {
        Some(self.rho)
    }
}

pub fn killed_drifted_walk(eps: f64, rho: f64) -> Result<GalleryModel> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(QsdError::ParamRange(format!("eps = {eps} must lie in (0, 1)")));
    }
    let base = DiscreteChain::new(DriftedWalk { eps, enumeration: Enumeration::Integers });
    let mut params = BTreeMap::new();
    params.insert("eps".into(), eps);
    params.insert("rho".into(), rho);
    Ok(GalleryModel {
        name: "killed-walk".into(),
        params,
        chain: ModelChain::Discrete(killed_chain(base, rho)?),
        oracle: Arc::new(KilledOracle { rho, base_lambda_cr: 0.0, base_stationary: None, eps: Some(eps) }),
    })
}

/// Deterministic two-cycle `0 <-> 1` with independent killing.
pub fn killed_ring(rho: f64) -> Result<GalleryModel> {
    let base = DiscreteChain::explicit(vec![0, 1], vec![(0, vec![(1, 1.0)], 0.0), (1, vec![(0, 1.0)], 0.0)])?;
    let mut params = BTreeMap::new();
    params.insert("rho".into(), rho);
    Ok(GalleryModel {
        name: "killed-ring".into(),
        params,
        chain: ModelChain::Discrete(killed_chain(base, rho)?),
        oracle: Arc::new(KilledOracle {
            rho,
            base_lambda_cr: 0.0,
            base_stationary: Some(vec![(StateId(0), 0.5), (StateId(1), 0.5)]),
            eps: None,
        }),
    })
}

// ---------------------------------------------------------------------------
// Subcritical Galton-Watson process.

#[derive(Debug)]
pub struct Branching {
    pub pmf: Vec<f64>,
    pub mean: f64,
    pub lattice: i64,
    enumeration: Enumeration,
    cache: Mutex<(usize, Vec<f64>)>,
}

impl Clone for Branching {
    fn clone(&self) -> Self {
        Branching {
            pmf: self.pmf.clone(),
            mean: self.mean,
            lattice: self.lattice,
            enumeration: self.enumeration.clone(),
            cache: Mutex::new((0, vec![1.0])),
        }
    }
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

impl Branching {
    pub fn new(pmf: Vec<f64>) -> Result<Self> {
        if pmf.is_empty() || pmf.iter().any(|p| *p < 0.0) || (pmf.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(QsdError::ParamRange("offspring law must be a probability vector".into()));
        }
        let mean: f64 = pmf.iter().enumerate().map(|(k, p)| k as f64 * p).sum();
        if mean >= 1.0 {
            return Err(QsdError::Supercritical { mean });
        }
        if pmf[0] <= 0.0 {
            return Err(QsdError::ParamRange("offspring law needs an atom at 0".into()));
        }
        let lattice = pmf
            .iter()
            .enumerate()
            .skip(1)
            .filter(|e| *e.1 > 0.0)
            .fold(0i64, |g, (k, _)| gcd(g, k as i64))
            .max(1);
        Ok(Branching {
            pmf,
            mean,
            lattice,
            enumeration: Enumeration::Arithmetic { start: lattice, step: lattice },
            cache: Mutex::new((0, vec![1.0])),
        })
    }

    /// Offspring probability generating function.
    pub fn pgf(&self, s: f64) -> f64 {
        self.pmf.iter().rev().fold(0.0, |acc, p| acc * s + p)
    }

    fn convolution_power(&self, k: usize) -> Vec<f64> {
        let mut guard = self.cache.lock().unwrap();
        if guard.0 > k {
            *guard = (0, vec![1.0]);
        }
        while guard.0 < k {
            let prev = &guard.1;
            let mut next = vec![0.0; prev.len() + self.pmf.len() - 1];
            for (i, a) in prev.iter().enumerate() {
                if *a == 0.0 {
                    continue;
                }
                for (j, b) in self.pmf.iter().enumerate() {
                    next[i + j] += a * b;
                }
            }
            let keep = next.iter().rposition(|&v| v > 1e-300).map_or(1, |p| p + 1);
            next.truncate(keep);
            guard.1 = next;
            guard.0 += 1;
        }
        guard.1.clone()
    }

    pub fn functional_residual(&self, nu: &[(StateId, f64)], s: f64) -> f64 {
        let b = |t: f64| nu.iter().map(|(y, w)| w * t.powi(y.0 as i32)).sum::<f64>();
        b(self.pgf(s)) - self.mean * b(s) - (1.0 - self.mean)
    }
}

impl TransitionRule for Branching {
    fn enumeration(&self) -> &Enumeration {
        &self.enumeration
    }

    fn row(&self, x: StateId, horizon: usize) -> Row {
        let dist = self.convolution_power(x.0.max(0) as usize);
        let mut entries = Vec::new();
        let mut beyond = 0.0;
        for (j, p) in dist.iter().enumerate().skip(1) {
            if *p == 0.0 {
                continue;
            }
            let idx = j as i64 / self.lattice - 1;
            if (idx as usize) < horizon {
                entries.push((StateId(j as i64), *p));
            } else {
                beyond += p;
            }
        }
        Row { entries, absorb: dist[0], beyond }
    }
}

impl Oracle for Branching {
    fn lambda_cr(&self) -> Option<f64> {
        Some(-self.mean.ln())
    }

    fn regime(&self) -> Option<Regime> {
        Some(Regime::InfiniteMgf)
    }

    fn qsd(&self, _lambda: f64, _y: StateId) -> Option<f64> {
        None
    }
}

pub fn subcritical_branching(pmf: Vec<f64>) -> Result<GalleryModel> {
    let b = Branching::new(pmf)?;
    let params = b.pmf.iter().enumerate().map(|(k, p)| (format!("p{k}"), *p)).collect();
    Ok(GalleryModel {
        name: "branching".into(),
        params,
        chain: ModelChain::Discrete(DiscreteChain::new(b.clone())),
        oracle: Arc::new(b),
    })
}

// ---------------------------------------------------------------------------
// Skip-free chains.

/// Nearest-neighbour walk on the naturals: up with `up`, down otherwise,
/// absorbed from 0.
#[derive(Clone, Debug)]
pub struct DiscreteBirthDeath {
    pub up: f64,
    enumeration: Enumeration,
}

impl TransitionRule for DiscreteBirthDeath {
    fn enumeration(&self) -> &Enumeration {
        &self.enumeration
    }

    fn row(&self, x: StateId, _horizon: usize) -> Row {
        let down = 1.0 - self.up;
        if x.0 == 0 {
            Row { entries: vec![(StateId(1), self.up)], absorb: down, beyond: 0.0 }
        } else {
            Row { entries: vec![(StateId(x.0 + 1), self.up), (StateId(x.0 - 1), down)], absorb: 0.0, beyond: 0.0 }
        }
    }
}

#[derive(Clone, Debug)]
pub struct SkipFreeOracle {
    pub unique_per_lambda: bool,
}

impl Oracle for SkipFreeOracle {
    fn lambda_cr(&self) -> Option<f64> {
        None
    }

    fn regime(&self) -> Option<Regime> {
        None
    }

    fn qsd(&self, _lambda: f64, _y: StateId) -> Option<f64> {
        None
    }
}

pub fn discrete_birth_death(up: f64) -> Result<GalleryModel> {
    if !(up > 0.0 && up < 1.0) {
        return Err(QsdError::ParamRange(format!("up = {up} must lie in (0, 1)")));
    }
    let chain = DiscreteChain::new(DiscreteBirthDeath { up, enumeration: Enumeration::naturals() });
    skip_free(&chain, 64)?;
    let mut params = BTreeMap::new();
    params.insert("up".into(), up);
    Ok(GalleryModel {
        name: "discrete-bd".into(),
        params,
        chain: ModelChain::Discrete(chain),
        oracle: Arc::new(SkipFreeOracle { unique_per_lambda: true }),
    })
}

/// Check downward skip-freeness in increasing state order on a window: from index
/// `i >= 1` the only lower target is `i - 1` (and it has positive weight),
/// while index 0 is the only state feeding the cemetery.
pub fn skip_free(chain: &DiscreteChain, n: usize) -> Result<()> {
    let fc = truncate(chain, n)?;
    for i in 0..fc.len() {
        if i == 0 {
            if fc.absorb[0] <= 0.0 {
                return Err(QsdError::NotSkipFree("first state does not feed the cemetery".into()));
            }
            continue;
        }
        if fc.absorb[i] > 0.0 {
            return Err(QsdError::NotSkipFree(format!("state {} jumps to the cemetery", fc.states[i])));
        }
        let mut down = 0.0;
        for &(j, p) in &fc.rows[i] {
            if j + 1 < i && p > 0.0 {
                return Err(QsdError::NotSkipFree(format!(
                    "state {} jumps down to {}",
                    fc.states[i], fc.states[j]
                )));
            }
            if j + 1 == i {
                down += p;
            }
        }
        if down <= 0.0 {
            return Err(QsdError::NotSkipFree(format!("state {} cannot step down", fc.states[i])));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Continuous-time birth-death processes on the naturals, killed below 0.

/// Quadratic rate law `c0 + c1 k + c2 k^2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Poly(pub [f64; 3]);

impl Poly {
    pub fn at(&self, k: i64) -> f64 {
        let k = k as f64;
        self.0[0] + self.0[1] * k + self.0[2] * k * k
    }
}

#[derive(Clone, Debug)]
pub struct BirthDeath {
    pub birth: Poly,
    pub death: Poly,
    enumeration: Enumeration,
}

impl BirthDeath {
    pub fn new(birth: Poly, death: Poly) -> Result<Self> {
        for k in 0..64 {
            if birth.at(k) <= 0.0 || death.at(k) <= 0.0 {
                return Err(QsdError::ParamRange(format!("rates must be positive (state {k})")));
            }
        }
        Ok(BirthDeath { birth, death, enumeration: Enumeration::naturals() })
    }

    pub fn lambda_k(&self, k: i64) -> f64 {
        self.birth.at(k)
    }

    pub fn mu_k(&self, k: i64) -> f64 {
        self.death.at(k)
    }
}

impl RateRule for BirthDeath {
    fn enumeration(&self) -> &Enumeration {
        &self.enumeration
    }

    fn rates(&self, x: StateId, _horizon: usize) -> RateRow {
        let k = x.0;
        let mut entries = vec![(StateId(k + 1), self.lambda_k(k))];
        let mut kill = 0.0;
        if k == 0 {
            kill = self.mu_k(0);
        } else {
            entries.push((StateId(k - 1), self.mu_k(k)));
        }
        RateRow { entries, kill, beyond: 0.0 }
    }
}

#[derive(Clone, Debug)]
pub struct BirthDeathOracle {
    pub mu0: f64,
}

impl Oracle for BirthDeathOracle {
    fn lambda_cr(&self) -> Option<f64> {
        None
    }

    fn regime(&self) -> Option<Regime> {
        None
    }

    /// Only the weight at 0 is explicit.
    fn qsd(&self, lambda: f64, y: StateId) -> Option<f64> {
        (y.0 == 0 && lambda < self.mu0).then(|| lambda / self.mu0)
    }
}

pub fn birth_death(birth: Poly, death: Poly) -> Result<GalleryModel> {
    let bd = BirthDeath::new(birth, death)?;
    let mut params = BTreeMap::new();
    for i in 0..3 {
        params.insert(format!("birth{i}"), birth.0[i]);
        params.insert(format!("death{i}"), death.0[i]);
    }
    Ok(GalleryModel {
        name: "bd".into(),
        params,
        oracle: Arc::new(BirthDeathOracle { mu0: bd.mu_k(0) }),
        chain: ModelChain::Continuous(ContinuousChain::new(bd)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::validate;

    #[test]
    fn hub_parameters_and_window() {
        let h = HubTwoSpokes::new(0.8, 0.0).unwrap();
        assert!((h.rho - 0.5).abs() < 1e-15);
        assert!((h.e_lambda0() - 1.25).abs() < 1e-15);
        let h95 = HubTwoSpokes::new(0.95, 1.0).unwrap();
        assert!((h95.e_lambda0() - 2.294157338705618).abs() < 1e-12);
        let m = hub_two_spokes(0.8, 0.0).unwrap();
        let fc = truncate(m.discrete().unwrap(), 5).unwrap();
        assert_eq!(fc.len(), 5);
        for s in [StateId(2), StateId(-2)] {
            let i = fc.index_of(s).unwrap();
            assert!((fc.exit[i] - 0.2).abs() < 1e-15);
        }
        validate(m.discrete().unwrap(), 101).unwrap();
        assert!(matches!(HubTwoSpokes::new(0.8, 2.0), Err(QsdError::ParamRange(_))));
        assert!(matches!(HubTwoSpokes::new(0.4, 0.5), Err(QsdError::ParamRange(_))));
    }

    #[test]
    fn hub_closed_forms_are_consistent() {
        let h = HubTwoSpokes::new(0.8, 1.25).unwrap();
        let s: f64 = (-200..=200).map(|y| h.qsd_cr(y)).sum();
        assert!((s - 1.0).abs() < 1e-14);
        assert!((h.qsd_cr(0) - 0.6).abs() < 1e-15);
        assert!((h.qsd_cr(2) - 0.3 * 0.16).abs() < 1e-15);
        let h0 = HubTwoSpokes::new(0.8, 0.0).unwrap();
        let s: f64 = (-200..=200).map(|y| h0.qsd_edge(1, y)).sum();
        assert!((s - 1.0).abs() < 1e-14);
        assert!((h0.qsd_edge(1, 1) - 0.1875).abs() < 1e-15);
        assert!((h0.qsd_edge(1, -1) - 0.0625).abs() < 1e-15);
        assert!((h0.qsd_edge(1, 2) - 0.15625).abs() < 1e-15);
        assert!((h0.mgf(h0.lambda0(), 0) - 2.0).abs() < 1e-14);
        // the below-critical family sums to one as well
        for lam in [0.05, 0.15, 0.2] {
            let s: f64 = (-3000..=3000).map(|y| h0.qsd_below(lam, 1, y)).sum();
            assert!((s - 1.0).abs() < 1e-9, "lambda {lam}: {s}");
        }
        // Green diagonal against the return transform
        let lam = 0.15;
        for y in -3..=3 {
            let g = 1.0 / (1.0 - h0.return_mgf(lam, y));
            assert!((g - h0.green_diag(lam, y)).abs() < 1e-12 * g);
        }
    }

    #[test]
    fn cyclic_transfer_roots() {
        let c = CyclicTransfer::new(0.5, JumpLaw::Geometric(0.3)).unwrap();
        let root = c.lambda_cr_root();
        assert!((root - (1.0f64 / 0.65).ln()).abs() < 1e-13);
        let c1 = CyclicTransfer::new(0.5, JumpLaw::Point(1)).unwrap();
        let l = c1.lambda_cr_root();
        assert!((l - 0.5 * 2f64.ln()).abs() < 1e-13);
        assert!((c1.qsd_at(l, 0) - (2.0 - 2f64.sqrt())).abs() < 1e-13);
        assert!((c1.qsd_at(l, 1) - (2f64.sqrt() - 1.0)).abs() < 1e-13);
        assert!(matches!(CyclicTransfer::new(0.5, JumpLaw::Zeta(2.0)), Err(QsdError::Moment)));
        let s: f64 = (0..400).map(|y| c.qsd_at(root, y)).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn branching_rows_and_errors() {
        let b = Branching::new(vec![0.75, 0.0, 0.25]).unwrap();
        assert_eq!(b.lattice, 2);
        assert!((b.mean - 0.5).abs() < 1e-15);
        let r = b.row(StateId(4), 100);
        assert!((r.absorb - 0.75f64.powi(4)).abs() < 1e-15);
        assert!((r.total() - 1.0).abs() < 1e-14);
        assert!(matches!(Branching::new(vec![0.2, 0.0, 0.8]), Err(QsdError::Supercritical { .. })));
        let m = subcritical_branching(vec![0.75, 0.0, 0.25]).unwrap();
        validate(m.discrete().unwrap(), 40).unwrap();
    }

    #[test]
    fn skip_free_detection() {
        let bd = discrete_birth_death(0.3).unwrap();
        skip_free(bd.discrete().unwrap(), 50).unwrap();
        let hub = hub_two_spokes(0.8, 0.5).unwrap();
        assert!(matches!(skip_free(hub.discrete().unwrap(), 50), Err(QsdError::NotSkipFree(_))));
        let cyc = cyclic_transfer(0.4, JumpLaw::Geometric(0.3)).unwrap();
        skip_free(cyc.discrete().unwrap(), 50).unwrap();
    }

    #[test]
    fn killed_models() {
        let m = killed_ring(std::f64::consts::LN_2).unwrap();
        let fc = truncate(m.discrete().unwrap(), 2).unwrap();
        assert!((fc.absorb[0] - 0.5).abs() < 1e-15);
        let w = killed_drifted_walk(0.6, std::f64::consts::LN_2).unwrap();
        let o = KilledOracle { rho: std::f64::consts::LN_2, base_lambda_cr: 0.0, base_stationary: None, eps: Some(0.6) };
        assert!((o.r_cr().unwrap() - 2.5).abs() < 1e-14);
        assert_eq!(w.name, "killed-walk");
    }
}
