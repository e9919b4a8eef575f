//! Banded LU without pivoting for M-matrix systems, spectral radius by
//! bisection, Perron vectors and sequence extrapolation.
//!
//! Every system solved in this crate has the form `D - W` with `W >= 0`
//! entrywise. Such a Z-matrix is a nonsingular M-matrix exactly when
//! elimination without pivoting produces strictly positive pivots, and the
//! factors stay inside the band. A non-positive pivot is therefore a proof
//! that the underlying generating function has diverged.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::chain::{FiniteChain, FiniteGenerator};
use crate::error::{QsdError, Result};

#[derive(Clone, Debug)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let kl = kl.min(n.saturating_sub(1));
        let ku = ku.min(n.saturating_sub(1));
        BandMatrix { n, kl, ku, data: vec![0.0; n * (kl + ku + 1)] }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> usize {
        i * (self.kl + self.ku + 1) + j + self.kl - i
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j + self.kl < i || j > i + self.ku {
            0.0
        } else {
            self.data[self.at(i, j)]
        }
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.at(i, j);
        self.data[k] += v;
    }

    /// Diagonal similarity `D^{-1} A D`, `D = diag(e^phi)`, that makes each
    /// pair of neighbouring off-diagonal entries equal in magnitude. Returns
    /// `phi`. Similarity leaves the pivots unchanged, while solutions of
    /// nearest-neighbour systems stop growing or decaying geometrically.
    fn balance(&mut self) -> Vec<f64> {
        let n = self.n;
        let mut phi = vec![0.0; n];
        for i in 1..n {
            let mut step = 0.0;
            if self.kl >= 1 && self.ku >= 1 {
                let (lo, up) = (self.data[self.at(i, i - 1)], self.data[self.at(i - 1, i)]);
                if lo != 0.0 && up != 0.0 {
                    step = 0.5 * (lo / up).abs().ln();
                }
            }
            phi[i] = phi[i - 1] + step;
        }
        if phi.iter().all(|&p| p == 0.0) {
            return phi;
        }
        for i in 0..n {
            let lo = i.saturating_sub(self.kl);
            let hi = (i + self.ku).min(n - 1);
            for j in lo..=hi {
                let k = self.at(i, j);
                if self.data[k] != 0.0 {
                    self.data[k] *= (phi[j] - phi[i]).exp();
                }
            }
        }
        phi
    }

    /// Factor without pivoting; fails on the first non-positive pivot.
    pub fn factor(mut self) -> std::result::Result<BandLu, usize> {
        let phi = self.balance();
        let n = self.n;
        for k in 0..n {
            let piv = self.data[self.at(k, k)];
            if piv.is_nan() || piv <= 0.0 {
                return Err(k);
            }
            let ihi = (k + self.kl).min(n - 1);
            let jhi = (k + self.ku).min(n - 1);
            for i in k + 1..=ihi {
                let ik = self.at(i, k);
                let l = self.data[ik] / piv;
                self.data[ik] = l;
                if l != 0.0 {
                    let (bi, bk) = (self.at(i, 0), self.at(k, 0));
                    for j in k + 1..=jhi {
                        self.data[bi + j] -= l * self.data[bk + j];
                    }
                }
            }
        }
        Ok(BandLu { m: self, phi })
    }
}

/// `v e^t`, without overflow in the factor when `v` is small.
fn rescale(v: f64, t: f64) -> f64 {
    if v == 0.0 || t == 0.0 {
        v
    } else {
        v.signum() * (v.abs().ln() + t).exp()
    }
}

fn pivot_shift(phi: &[f64], b: &[f64]) -> f64 {
    let mut best = (0.0, 0.0);
    for (i, v) in b.iter().enumerate() {
        if v.abs() > best.0 {
            best = (v.abs(), phi[i]);
        }
    }
    best.1
}

/// LU factors of a balanced band matrix together with the balancing
/// exponents; solves undo the balancing.
#[derive(Clone, Debug)]
pub struct BandLu {
    m: BandMatrix,
    phi: Vec<f64>,
}

impl BandLu {
    pub fn len(&self) -> usize {
        self.m.n
    }

    pub fn is_empty(&self) -> bool {
        self.m.n == 0
    }

    /// Smallest pivot of the factorization.
    pub fn min_pivot(&self) -> f64 {
        (0..self.m.n).map(|k| self.m.data[self.m.at(k, k)]).fold(f64::INFINITY, f64::min)
    }

    pub fn solve(&self, b: &mut [f64]) {
        let s = pivot_shift(&self.phi, b);
        for (v, p) in b.iter_mut().zip(&self.phi) {
            *v = rescale(*v, s - p);
        }
        self.solve_balanced(b);
        for (v, p) in b.iter_mut().zip(&self.phi) {
            *v = rescale(*v, p - s);
        }
    }

    /// Solve with the transposed matrix.
    pub fn solve_transpose(&self, b: &mut [f64]) {
        let s = pivot_shift(&self.phi, b);
        for (v, p) in b.iter_mut().zip(&self.phi) {
            *v = rescale(*v, p - s);
        }
        self.solve_transpose_balanced(b);
        for (v, p) in b.iter_mut().zip(&self.phi) {
            *v = rescale(*v, s - p);
        }
    }

    fn solve_balanced(&self, b: &mut [f64]) {
        let m = &self.m;
        let n = m.n;
        for i in 0..n {
            let lo = i.saturating_sub(m.kl);
            let mut s = b[i];
            for k in lo..i {
                let a = m.data[m.at(i, k)];
                if a != 0.0 {
                    s -= a * b[k];
                }
            }
            b[i] = s;
        }
        for i in (0..n).rev() {
            let hi = (i + m.ku).min(n - 1);
            let mut s = b[i];
            for j in i + 1..=hi {
                let a = m.data[m.at(i, j)];
                if a != 0.0 {
                    s -= a * b[j];
                }
            }
            b[i] = s / m.data[m.at(i, i)];
        }
    }

    fn solve_transpose_balanced(&self, b: &mut [f64]) {
        let m = &self.m;
        let n = m.n;
        for i in 0..n {
            let lo = i.saturating_sub(m.ku);
            let mut s = b[i];
            for k in lo..i {
                let a = m.data[m.at(k, i)];
                if a != 0.0 {
                    s -= a * b[k];
                }
            }
            b[i] = s / m.data[m.at(i, i)];
        }
        for i in (0..n).rev() {
            let hi = (i + m.kl).min(n - 1);
            let mut s = b[i];
            for j in i + 1..=hi {
                let a = m.data[m.at(j, i)];
                if a != 0.0 {
                    s -= a * b[j];
                }
            }
            b[i] = s;
        }
    }
}

/// `I - c P_W`, optionally transposed. With `pin = Some(x)` the transitions
/// out of `x` are dropped, so row `x` of the untransposed system is the
/// identity row.
pub fn discrete_system(fc: &FiniteChain, c: f64, pin: Option<usize>, transpose: bool) -> BandMatrix {
    let n = fc.len();
    let (kl, ku) = fc.bandwidth();
    let (kl, ku) = if transpose { (ku, kl) } else { (kl, ku) };
    let mut m = BandMatrix::zeros(n, kl, ku);
    for i in 0..n {
        m.add(i, i, 1.0);
    }
    for (i, row) in fc.rows.iter().enumerate() {
        if pin == Some(i) {
            continue;
        }
        for &(j, p) in row {
            if transpose {
                m.add(j, i, -c * p);
            } else {
                m.add(i, j, -c * p);
            }
        }
    }
    m
}

/// `diag(q) - lambda I - R_W` for a truncated generator, optionally
/// transposed, with an optional pinned row.
pub fn generator_system(
    g: &FiniteGenerator,
    lambda: f64,
    pin: Option<usize>,
    transpose: bool,
) -> BandMatrix {
    let n = g.len();
    let (kl, ku) = g.bandwidth();
    let (kl, ku) = if transpose { (ku, kl) } else { (kl, ku) };
    let mut m = BandMatrix::zeros(n, kl, ku);
    for i in 0..n {
        let d = if pin == Some(i) { 1.0 } else { g.total_rate(i) - lambda };
        m.add(i, i, d);
    }
    for (i, row) in g.rows.iter().enumerate() {
        if pin == Some(i) {
            continue;
        }
        for &(j, r) in row {
            if transpose {
                m.add(j, i, -r);
            } else {
                m.add(i, j, -r);
            }
        }
    }
    m
}

pub fn factor_discrete(
    fc: &FiniteChain,
    lambda: f64,
    pin: Option<usize>,
    transpose: bool,
) -> Result<BandLu> {
    discrete_system(fc, lambda.exp(), pin, transpose)
        .factor()
        .map_err(|_| QsdError::SingularSystem { lambda })
}

pub fn factor_generator(
    g: &FiniteGenerator,
    lambda: f64,
    pin: Option<usize>,
    transpose: bool,
) -> Result<BandLu> {
    generator_system(g, lambda, pin, transpose)
        .factor()
        .map_err(|_| QsdError::SingularSystem { lambda })
}

const MAX_SCALE: f64 = 1e15;

/// Largest `c` with `I - cP_W` a nonsingular M-matrix, i.e. `1/rho(P_W)`.
/// Returns infinity when `P_W` is nilpotent.
pub fn critical_scale(fc: &FiniteChain) -> f64 {
    let ok = |c: f64| discrete_system(fc, c, None, false).factor().is_ok();
    bisect_scale(ok, 1.0)
}

/// Critical parameter of a truncated generator: the largest `lambda` with
/// `diag(q) - lambda - R_W` a nonsingular M-matrix.
pub fn generator_critical(g: &FiniteGenerator) -> f64 {
    let ok = |lam: f64| generator_system(g, lam, None, false).factor().is_ok();
    let qmin = (0..g.len()).map(|i| g.total_rate(i)).fold(f64::INFINITY, f64::min);
    // the decay rate never exceeds the smallest total rate
    let (mut lo, mut hi) = (0.0, qmin * (1.0 + 1e-12) + 1e-300);
    if !ok(lo) {
        return 0.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

fn bisect_scale(ok: impl Fn(f64) -> bool, start: f64) -> f64 {
    if !ok(start) {
        // rho >= 1/start; search downwards
        let (mut lo, mut hi) = (start, start);
        while !ok(lo) {
            hi = lo;
            lo *= 0.5;
            if lo < 1e-300 {
                return 0.0;
            }
        }
        return refine(ok, lo, hi);
    }
    let (mut lo, mut hi) = (start, start * 2.0);
    while ok(hi) {
        lo = hi;
        hi *= 2.0;
        if hi > MAX_SCALE {
            return f64::INFINITY;
        }
    }
    refine(ok, lo, hi)
}

fn refine(ok: impl Fn(f64) -> bool, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if mid <= lo || mid >= hi {
            break;
        }
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo - 1.0 <= 2e-16 {
            break;
        }
    }
    (lo * hi).sqrt()
}

fn random_positive(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..n).map(|_| 0.5 + rng.random::<f64>()).collect();
    normalize(&mut v);
    v
}

pub fn normalize(v: &mut [f64]) -> f64 {
    let s: f64 = v.iter().sum();
    if s != 0.0 {
        v.iter_mut().for_each(|x| *x /= s);
    }
    s
}

pub fn l1_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

pub const PERRON_SEED: u64 = 0x51ed_5eed;
pub const PERRON_MAX_ITER: usize = 10_000;
pub const PERRON_TOL: f64 = 1e-12;

/// Left (or right) Perron vector of a nonsingular-M-matrix pencil by inverse
/// iteration at a scale just below the critical one.
pub fn inverse_iteration(lu: &BandLu, left: bool, seed: u64) -> Result<Vec<f64>> {
    let n = lu.len();
    let mut v = random_positive(n, seed);
    for it in 0..PERRON_MAX_ITER {
        let mut w = v.clone();
        if left {
            lu.solve_transpose(&mut w);
        } else {
            lu.solve(&mut w);
        }
        normalize(&mut w);
        let d = l1_diff(&w, &v);
        v = w;
        if d < PERRON_TOL && it > 0 {
            return Ok(v);
        }
    }
    Err(QsdError::PowerIterationStall { iterations: PERRON_MAX_ITER })
}

/// Plain power iteration on the lazy matrix `(I + P)/2` for the left Perron
/// pair of `P_W`.
pub fn power_iteration_left(fc: &FiniteChain, seed: u64) -> Result<(f64, Vec<f64>)> {
    let mut v = random_positive(fc.len(), seed);
    let mut rho = 0.0;
    for _ in 0..PERRON_MAX_ITER {
        let vp = fc.left_mul(&v);
        let mut w: Vec<f64> = v.iter().zip(&vp).map(|(a, b)| 0.5 * (a + b)).collect();
        let s = normalize(&mut w);
        rho = 2.0 * s - 1.0;
        let d = l1_diff(&w, &v);
        v = w;
        if d < PERRON_TOL {
            return Ok((rho, v));
        }
    }
    let _ = rho;
    Err(QsdError::PowerIterationStall { iterations: PERRON_MAX_ITER })
}

/// Aitken's delta-squared limit of three consecutive terms.
pub fn aitken(a0: f64, a1: f64, a2: f64) -> f64 {
    let d1 = a1 - a0;
    let d2 = a2 - a1;
    let den = d2 - d1;
    if den == 0.0 || !den.is_finite() || (d2 / d1).abs() >= 1.0 {
        return a2;
    }
    a2 - d2 * d2 / den
}

/// Polynomial (Neville) extrapolation of `vals(h)` to `h = 0`.
pub fn richardson(hs: &[f64], vals: &[f64]) -> f64 {
    let mut p = vals.to_vec();
    let m = p.len();
    for k in 1..m {
        for i in (k..m).rev() {
            p[i] = (hs[i - k] * p[i] - hs[i] * p[i - 1]) / (hs[i - k] - hs[i]);
        }
    }
    p[m - 1]
}

/// Outcome of pushing a window-indexed sequence to its limit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Settled {
    pub value: f64,
    pub converged: bool,
    pub extrapolated: bool,
    pub last_change: f64,
}

/// Settle the values of one quantity computed on growing windows.
///
/// The last two raw values agreeing within `rtol` counts as convergence.
/// Otherwise the values are extrapolated polynomially in `1/window`, which
/// handles the algebraic truncation error seen at critical parameters.
pub fn settle(windows: &[usize], vals: &[f64], rtol: f64) -> Settled {
    let m = vals.len();
    let last = vals[m - 1];
    if m == 1 {
        return Settled { value: last, converged: false, extrapolated: false, last_change: f64::INFINITY };
    }
    let scale = last.abs().max(1e-300);
    let change = (last - vals[m - 2]).abs() / scale;
    if change <= rtol {
        return Settled { value: last, converged: true, extrapolated: false, last_change: change };
    }
    if m >= 3 {
        let k = m.min(5);
        let hs: Vec<f64> = windows[m - k..].iter().map(|&w| 1.0 / w as f64).collect();
        let hi = richardson(&hs, &vals[m - k..]);
        let lo = richardson(&hs[1..], &vals[m - k + 1..]);
        let lo2 = richardson(&hs[..k - 1], &vals[m - k..m - 1]);
        let err = (hi - lo).abs().max((hi - lo2).abs()) / hi.abs().max(1e-300);
        if err <= rtol && hi.is_finite() {
            return Settled { value: hi, converged: true, extrapolated: true, last_change: err };
        }
        return Settled { value: hi, converged: false, extrapolated: true, last_change: err.min(change) };
    }
    Settled { value: last, converged: false, extrapolated: false, last_change: change }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{truncate, DiscreteChain};

    fn dense_matrix(n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            let mut s = 0.0;
            for j in 0..n {
                if i != j {
                    a[i][j] = -rng.random::<f64>();
                    s -= a[i][j];
                }
            }
            a[i][i] = s + 0.5;
        }
        a
    }

    #[test]
    fn band_lu_matches_dense_solution() {
        let n = 7;
        let a = dense_matrix(n, 3);
        let mut m = BandMatrix::zeros(n, n, n);
        for i in 0..n {
            for j in 0..n {
                m.add(i, j, a[i][j]);
            }
        }
        let lu = m.factor().unwrap();
        let x_true: Vec<f64> = (0..n).map(|i| i as f64 - 2.5).collect();
        let mut b: Vec<f64> = (0..n).map(|i| (0..n).map(|j| a[i][j] * x_true[j]).sum()).collect();
        lu.solve(&mut b);
        assert!(l1_diff(&b, &x_true) < 1e-12);
        let mut bt: Vec<f64> = (0..n).map(|j| (0..n).map(|i| a[i][j] * x_true[i]).sum()).collect();
        lu.solve_transpose(&mut bt);
        assert!(l1_diff(&bt, &x_true) < 1e-12);
    }

    #[test]
    fn tridiagonal_band() {
        let n = 50;
        let mut m = BandMatrix::zeros(n, 1, 1);
        for i in 0..n {
            m.add(i, i, 2.5);
            if i > 0 {
                m.add(i, i - 1, -1.0);
            }
            if i + 1 < n {
                m.add(i, i + 1, -1.0);
            }
        }
        let lu = m.clone().factor().unwrap();
        let mut x = vec![1.0; n];
        lu.solve(&mut x);
        let r: f64 = (0..n)
            .map(|i| {
                let mut s = 2.5 * x[i];
                if i > 0 {
                    s -= x[i - 1];
                }
                if i + 1 < n {
                    s -= x[i + 1];
                }
                (s - 1.0).abs()
            })
            .sum();
        assert!(r < 1e-12);
    }

    #[test]
    fn non_m_matrix_is_detected() {
        let mut m = BandMatrix::zeros(2, 1, 1);
        m.add(0, 0, 1.0);
        m.add(0, 1, -2.0);
        m.add(1, 0, -1.0);
        m.add(1, 1, 1.0);
        assert!(m.factor().is_err());
    }

    #[test]
    fn ring_critical_scale() {
        let c = DiscreteChain::explicit(vec![0, 1], vec![(0, vec![(1, 1.0)], 0.0), (1, vec![(0, 0.5)], 0.5)])
            .unwrap();
        let fc = truncate(&c, 2).unwrap();
        let s = critical_scale(&fc);
        assert!((s - 2f64.sqrt()).abs() < 1e-14);
        let (rho, v) = power_iteration_left(&fc, 1).unwrap();
        assert!((rho - 0.5f64.sqrt()).abs() < 1e-11);
        assert!((v[0] - (2f64.sqrt() - 1.0)).abs() < 1e-11);
    }

    #[test]
    fn nilpotent_window_has_infinite_scale() {
        let c = DiscreteChain::explicit(vec![0, 1], vec![(0, vec![(1, 1.0)], 0.0), (1, vec![(0, 0.5)], 0.5)])
            .unwrap();
        let fc = truncate(&c, 1).unwrap();
        assert!(critical_scale(&fc).is_infinite());
    }

    #[test]
    fn richardson_removes_algebraic_error() {
        let ws = [100usize, 200, 400, 800];
        let vals: Vec<f64> = ws.iter().map(|&w| 2.0 + 3.0 / w as f64 - 7.0 / (w * w) as f64).collect();
        let s = settle(&ws, &vals, 1e-10);
        assert!(s.converged && s.extrapolated);
        assert!((s.value - 2.0).abs() < 1e-12);
        assert!((aitken(1.5, 1.25, 1.125) - 1.0).abs() < 1e-15);
    }
}
