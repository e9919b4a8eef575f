//! Seeded trajectory simulation and survival-conditioned estimators.
//!
//! Paths are generated in fixed-size batches; batch `k` draws from
//! `ChaCha8Rng::seed_from_u64(seed)` on stream `k`, so results do not
//! depend on how batches are scheduled across threads. Batch results are
//! reduced in batch order, and standard errors come from a delete-one-group
//! jackknife over [`JACKKNIFE_GROUPS`] contiguous groups of batches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chain::{truncate, truncate_generator, ContinuousChain, DiscreteChain, FiniteChain, FiniteGenerator, StateId};
use crate::error::{QsdError, Result};
use crate::par_map;
use crate::qsd::Qsd;

pub const JACKKNIFE_GROUPS: usize = 20;
pub const MIN_SURVIVORS: u64 = 1000;
pub const KURTOSIS_LIMIT: f64 = 50.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    pub paths: usize,
    /// Step cap (discrete) or time cap (continuous).
    pub horizon: f64,
    pub batch: usize,
}

impl SimConfig {
    pub fn new(seed: u64, paths: usize, horizon: f64) -> Self {
        SimConfig { seed, paths, horizon, batch: 10_000 }
    }

    fn batches(&self) -> Vec<(usize, usize)> {
        let b = self.batch.max(1);
        (0..self.paths.div_ceil(b)).map(|k| (k, b.min(self.paths - k * b))).collect()
    }

    fn rng(&self, stream: usize) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(stream as u64);
        r
    }
}

/// Where a path went at a step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Move {
    To(usize),
    Absorbed,
    Escaped,
}

/// Cumulative transition tables of a window.
#[derive(Clone, Debug)]
pub struct Sampler {
    pub fc: FiniteChain,
    cum: Vec<Vec<(f64, Move)>>,
}

impl Sampler {
    pub fn new(fc: FiniteChain) -> Self {
        let cum = (0..fc.len())
            .map(|i| {
                let mut acc = 0.0;
                let mut out: Vec<(f64, Move)> = fc.rows[i]
                    .iter()
                    .map(|&(j, p)| {
                        acc += p;
                        (acc, Move::To(j))
                    })
                    .collect();
                acc += fc.absorb[i];
                out.push((acc, Move::Absorbed));
                acc += fc.exit[i];
                out.push((acc, Move::Escaped));
                out
            })
            .collect();
        Sampler { fc, cum }
    }

    fn step(&self, i: usize, rng: &mut ChaCha8Rng) -> Move {
        let row = &self.cum[i];
        let u = rng.random::<f64>() * row.last().unwrap().0;
        let k = row.partition_point(|e| e.0 <= u);
        row[k.min(row.len() - 1)].1
    }

    fn draw(&self, cdf: &[(f64, usize)], rng: &mut ChaCha8Rng) -> usize {
        let u = rng.random::<f64>() * cdf.last().unwrap().0;
        let k = cdf.partition_point(|e| e.0 <= u);
        cdf[k.min(cdf.len() - 1)].1
    }
}

/// Window large enough that a nearest-neighbour path from `x` cannot leave
/// it before `steps`.
pub fn default_window(chain: &DiscreteChain, x: StateId, steps: usize) -> Result<usize> {
    let i = chain.index_of(x).ok_or(QsdError::UnknownState(x))?;
    Ok(chain.enumeration().clamp(2 * i + 2 * steps + 3))
}

fn sampler_for(chain: &DiscreteChain, x: StateId, steps: usize) -> Result<(Sampler, usize)> {
    let fc = truncate(chain, default_window(chain, x, steps)?)?;
    let xi = fc.index_of(x).ok_or(QsdError::UnknownState(x))?;
    Ok((Sampler::new(fc), xi))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PathBatch {
    /// Absorption step of each path; `None` if the horizon ran out first.
    pub tau: Vec<Option<u64>>,
    pub horizon_exhausted: f64,
    /// Fraction of paths that left the simulation window.
    pub escaped: f64,
}

impl PathBatch {
    pub fn mean_tau(&self) -> (f64, f64) {
        let v: Vec<f64> = self.tau.iter().flatten().map(|&t| t as f64).collect();
        mean_se(&v)
    }
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, (var / n).sqrt())
}

/// Independent paths from `x` until absorption or `config.horizon` steps.
pub fn simulate(chain: &DiscreteChain, x: StateId, config: &SimConfig) -> Result<PathBatch> {
    let steps = config.horizon as usize;
    let (s, xi) = sampler_for(chain, x, steps)?;
    let parts = par_map(&config.batches(), |&(k, m)| {
        let mut rng = config.rng(k);
        let mut out = Vec::with_capacity(m);
        let mut escaped = 0usize;
        for _ in 0..m {
            let mut i = xi;
            let mut tau = None;
            for t in 1..=steps {
                match s.step(i, &mut rng) {
                    Move::To(j) => i = j,
                    Move::Absorbed => {
                        tau = Some(t as u64);
                        break;
                    }
                    Move::Escaped => {
                        escaped += 1;
                        break;
                    }
                }
            }
            out.push(tau);
        }
        (out, escaped)
    });
    let mut tau = Vec::with_capacity(config.paths);
    let mut esc = 0;
    for (t, e) in parts {
        tau.extend(t);
        esc += e;
    }
    let n = tau.len() as f64;
    let none = tau.iter().filter(|t| t.is_none()).count() as f64;
    Ok(PathBatch { tau, horizon_exhausted: (none - esc as f64) / n, escaped: esc as f64 / n })
}

/// Per-batch survivor histograms at the requested steps.
struct Snapshots {
    /// `counts[k][s][i]`: batch k, snapshot s, window position i.
    counts: Vec<Vec<Vec<u64>>>,
    escaped: u64,
}

fn snapshots(s: &Sampler, start: usize, at: &[usize], config: &SimConfig) -> Snapshots {
    let last = *at.iter().max().unwrap_or(&0);
    let n = s.fc.len();
    let parts = par_map(&config.batches(), |&(k, m)| {
        let mut rng = config.rng(k);
        let mut counts = vec![vec![0u64; n]; at.len()];
        let mut escaped = 0u64;
        for _ in 0..m {
            let mut i = start;
            let mut alive = true;
            for t in 0..=last {
                if t > 0 {
                    match s.step(i, &mut rng) {
                        Move::To(j) => i = j,
                        Move::Absorbed => alive = false,
                        Move::Escaped => {
                            escaped += 1;
                            alive = false;
                        }
                    }
                }
                if !alive {
                    break;
                }
                for (si, &a) in at.iter().enumerate() {
                    if a == t {
                        counts[si][i] += 1;
                    }
                }
            }
        }
        (counts, escaped)
    });
    let escaped = parts.iter().map(|p| p.1).sum();
    Snapshots { counts: parts.into_iter().map(|p| p.0).collect(), escaped }
}

fn groups(nbatch: usize) -> Vec<std::ops::Range<usize>> {
    let g = JACKKNIFE_GROUPS.min(nbatch).max(1);
    (0..g).map(|k| (k * nbatch / g)..((k + 1) * nbatch / g)).collect()
}

/// Delete-one-group jackknife of a vector statistic of pooled counts.
fn jackknife(counts: &[Vec<Vec<u64>>], stat: &dyn Fn(&[Vec<u64>]) -> Vec<f64>) -> (Vec<f64>, Vec<f64>) {
    let pool = |skip: Option<usize>, gs: &[std::ops::Range<usize>]| {
        let ns = counts[0].len();
        let n = counts[0][0].len();
        let mut acc = vec![vec![0u64; n]; ns];
        for (gi, r) in gs.iter().enumerate() {
            if Some(gi) == skip {
                continue;
            }
            for k in r.clone() {
                for s in 0..ns {
                    for i in 0..n {
                        acc[s][i] += counts[k][s][i];
                    }
                }
            }
        }
        acc
    };
    let gs = groups(counts.len());
    let full = stat(&pool(None, &gs));
    let g = gs.len();
    if g < 2 {
        return (full.clone(), vec![f64::NAN; full.len()]);
    }
    let reps: Vec<Vec<f64>> = (0..g).map(|k| stat(&pool(Some(k), &gs))).collect();
    let se = (0..full.len())
        .map(|j| {
            let m = reps.iter().map(|r| r[j]).sum::<f64>() / g as f64;
            ((g - 1) as f64 / g as f64 * reps.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>()).sqrt()
        })
        .collect();
    (full, se)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EstimateReport {
    pub states: Vec<StateId>,
    pub estimates: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// Survivors at the conditioning time.
    pub survivors: u64,
    pub paths: usize,
    /// Paths that left the simulation window (counted as non-survivors).
    pub escaped: u64,
    /// Fewer than [`MIN_SURVIVORS`] survivors; standard errors are doubled.
    pub widened: bool,
}

impl EstimateReport {
    pub fn tv(&self, other: &[(StateId, f64)]) -> f64 {
        let mine: Vec<(StateId, f64)> = self.states.iter().copied().zip(self.estimates.iter().copied()).collect();
        crate::analytics::total_variation(&mine, other)
    }

    /// Largest `|estimate - oracle| / se` over states with positive se.
    pub fn max_z(&self, oracle: &dyn Fn(StateId) -> f64) -> f64 {
        self.states
            .iter()
            .zip(self.estimates.iter().zip(&self.std_errors))
            .filter(|(_, (_, se))| **se > 0.0)
            .map(|(s, (e, se))| (e - oracle(*s)).abs() / se)
            .fold(0.0, f64::max)
    }

    fn finish(mut self) -> Self {
        if self.survivors < MIN_SURVIVORS {
            self.widened = true;
            self.std_errors.iter_mut().for_each(|s| *s *= 2.0);
        }
        self
    }
}

/// Empirical law of `X_n` given survival past `n`, started at `x`.
pub fn yaglom_estimate(chain: &DiscreteChain, x: StateId, n: usize, config: &SimConfig) -> Result<EstimateReport> {
    if n as f64 > config.horizon {
        return Err(QsdError::Precondition("n exceeds the horizon".into()));
    }
    let (s, xi) = sampler_for(chain, x, n)?;
    let snap = snapshots(&s, xi, &[n], config);
    let stat = |c: &[Vec<u64>]| {
        let tot: u64 = c[0].iter().sum();
        c[0].iter().map(|&v| v as f64 / tot.max(1) as f64).collect()
    };
    let (est, _) = jackknife(&snap.counts, &stat);
    let survivors: u64 = snap.counts.iter().map(|b| b[0].iter().sum::<u64>()).sum();
    let se = est.iter().map(|p| (p * (1.0 - p) / survivors.max(1) as f64).sqrt()).collect();
    Ok(EstimateReport {
        states: s.fc.states.clone(),
        estimates: est,
        std_errors: se,
        survivors,
        paths: config.paths,
        escaped: snap.escaped,
        widened: false,
    }
    .finish())
}

/// Period-2 Yaglom estimate: `nu ~ P(X_n = ., tau > n) + e^{lambda^} P(X_{n+1} = ., tau > n+1)`
/// with `e^{-2 lambda^} = P(tau > n+2)/P(tau > n)`; jackknife standard errors.
pub fn yaglom_parity_average(chain: &DiscreteChain, x: StateId, n: usize, config: &SimConfig) -> Result<EstimateReport> {
    let (s, xi) = sampler_for(chain, x, n + 2)?;
    let snap = snapshots(&s, xi, &[n, n + 1, n + 2], config);
    let stat = |c: &[Vec<u64>]| {
        let tot = |k: usize| c[k].iter().sum::<u64>() as f64;
        let e_lam = (tot(0) / tot(2)).sqrt();
        let w: Vec<f64> = (0..c[0].len()).map(|i| c[0][i] as f64 + e_lam * c[1][i] as f64).collect();
        let m: f64 = w.iter().sum();
        w.iter().map(|v| v / m).collect()
    };
    let (est, se) = jackknife(&snap.counts, &stat);
    let survivors: u64 = snap.counts.iter().map(|b| b[0].iter().sum::<u64>() + b[1].iter().sum::<u64>()).sum();
    Ok(EstimateReport {
        states: s.fc.states.clone(),
        estimates: est,
        std_errors: se,
        survivors,
        paths: config.paths,
        escaped: snap.escaped,
        widened: false,
    }
        .finish())
}

/// Mean enumeration index of survivors at each `n`; keeps growing when no
/// Yaglom limit exists.
pub fn survivor_drift(chain: &DiscreteChain, x: StateId, ns: &[usize], config: &SimConfig) -> Result<Vec<(usize, f64, f64)>> {
    let last = *ns.iter().max().ok_or_else(|| QsdError::Precondition("no steps given".into()))?;
    let (s, xi) = sampler_for(chain, x, last)?;
    let snap = snapshots(&s, xi, ns, config);
    let pos: Vec<f64> = s.fc.states.iter().map(|&st| chain.index_of(st).unwrap() as f64).collect();
    let stat = |c: &[Vec<u64>]| {
        c.iter()
            .map(|h| {
                let tot: u64 = h.iter().sum();
                h.iter().zip(&pos).map(|(&k, p)| k as f64 * p).sum::<f64>() / tot.max(1) as f64
            })
            .collect()
    };
    let (est, se) = jackknife(&snap.counts, &stat);
    Ok(ns.iter().enumerate().map(|(k, &n)| (n, est[k], se[k])).collect())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TailReport {
    pub lambda: f64,
    /// `P_nu(tau > n t)` for `n = 1..=N` (`t` = grid step).
    pub survival: Vec<f64>,
    pub grid: f64,
    /// Least-squares slope of `ln P(tau > t)` against `t`.
    pub slope: f64,
    pub se: f64,
    /// `slope +- 3 se`.
    pub ci: (f64, f64),
    pub covers: bool,
    pub paths: usize,
}

fn slope(ts: &[f64], ys: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = ts.iter().zip(ys).filter(|e| e.1.is_finite()).map(|(a, b)| (*a, *b)).collect();
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    sxy / sxx
}

fn tail_report(lambda: f64, grid: f64, paths: usize, per_batch: Vec<Vec<u64>>) -> TailReport {
    let n = per_batch[0].len() - 1;
    let ts: Vec<f64> = (1..=n).map(|k| k as f64 * grid).collect();
    let wrapped: Vec<Vec<Vec<u64>>> = per_batch.into_iter().map(|b| vec![b]).collect();
    let stat = |c: &[Vec<u64>]| -> Vec<f64> {
        // c[0][k] = survivors past step k+1; c[0][n] = paths in the pool
        let m = c[0][n] as f64;
        let ys: Vec<f64> = c[0][..n].iter().map(|&s| (s as f64 / m).ln()).collect();
        let mut out: Vec<f64> = c[0][..n].iter().map(|&s| s as f64 / m).collect();
        out.push(slope(&ts, &ys));
        out
    };
    let (est, se) = jackknife(&wrapped, &stat);
    let sl = est[n];
    let s = se[n];
    let ci = (sl - 3.0 * s, sl + 3.0 * s);
    TailReport {
        lambda,
        survival: est[..n].to_vec(),
        grid,
        slope: sl,
        se: s,
        ci,
        covers: ci.0 <= -lambda && -lambda <= ci.1,
        paths,
    }
}

fn start_cdf(nu: &[(StateId, f64)], index: impl Fn(StateId) -> Option<usize>) -> Result<Vec<(f64, usize)>> {
    let mut acc = 0.0;
    nu.iter()
        .filter(|e| e.1 > 0.0)
        .map(|&(s, w)| {
            acc += w;
            index(s).map(|i| (acc, i)).ok_or(QsdError::UnknownState(s))
        })
        .collect()
}

/// Survival of paths started from `qsd`, regressed on `n = 1..=horizon`.
pub fn tail_check(chain: &DiscreteChain, qsd: &Qsd, config: &SimConfig, horizon: usize) -> Result<TailReport> {
    let reach = qsd.states.iter().filter_map(|&s| chain.index_of(s)).max().unwrap_or(0);
    let w = chain.enumeration().clamp(reach + 2 * horizon + 3);
    let s = Sampler::new(truncate(chain, w)?);
    let cdf = start_cdf(&qsd.pairs(), |st| s.fc.index_of(st))?;
    let per_batch = par_map(&config.batches(), |&(k, m)| {
        let mut rng = config.rng(k);
        let mut surv = vec![0u64; horizon + 1];
        surv[horizon] = m as u64;
        for _ in 0..m {
            let mut i = s.draw(&cdf, &mut rng);
            for t in 1..=horizon {
                match s.step(i, &mut rng) {
                    Move::To(j) => {
                        i = j;
                        surv[t - 1] += 1;
                    }
                    _ => break,
                }
            }
        }
        surv
    });
    Ok(tail_report(qsd.lambda, 1.0, config.paths, per_batch))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MgfEstimate {
    pub lambda: f64,
    pub mean: f64,
    pub se: f64,
    pub horizon_exhausted: f64,
    pub kurtosis: f64,
    pub heavy_tail: bool,
}

/// Path average of `e^{lambda tau} 1{tau < tau_x}` from `x`.
pub fn weighted_mgf_estimate(chain: &DiscreteChain, x: StateId, lambda: f64, config: &SimConfig) -> Result<MgfEstimate> {
    let steps = config.horizon as usize;
    let (s, xi) = sampler_for(chain, x, steps)?;
    let parts = par_map(&config.batches(), |&(k, m)| {
        let mut rng = config.rng(k);
        let mut vals = Vec::with_capacity(m);
        let mut cut = 0usize;
        for _ in 0..m {
            let mut i = xi;
            let mut v = 0.0;
            let mut done = false;
            for t in 1..=steps {
                match s.step(i, &mut rng) {
                    Move::To(j) if j == xi => {
                        done = true;
                        break;
                    }
                    Move::To(j) => i = j,
                    Move::Absorbed => {
                        v = (lambda * t as f64).exp();
                        done = true;
                        break;
                    }
                    Move::Escaped => {
                        break;
                    }
                }
            }
            if !done {
                cut += 1;
            }
            vals.push(v);
        }
        (vals, cut)
    });
    let mut vals = Vec::with_capacity(config.paths);
    let mut cut = 0;
    for (v, c) in parts {
        vals.extend(v);
        cut += c;
    }
    let (mean, se) = mean_se(&vals);
    let n = vals.len() as f64;
    let m2 = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m4 = vals.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
    let kurtosis = if m2 > 0.0 { m4 / (m2 * m2) } else { 0.0 };
    Ok(MgfEstimate { lambda, mean, se, horizon_exhausted: cut as f64 / n, kurtosis, heavy_tail: kurtosis > KURTOSIS_LIMIT })
}

// ---------------------------------------------------------------------------
// Continuous time: exact exponential-clock paths.

#[derive(Clone, Debug)]
struct CtsSampler {
    g: FiniteGenerator,
    cum: Vec<Vec<(f64, Move)>>,
}

impl CtsSampler {
    fn new(g: FiniteGenerator) -> Self {
        let cum = (0..g.len())
            .map(|i| {
                let mut acc = 0.0;
                let mut out: Vec<(f64, Move)> = g.rows[i]
                    .iter()
                    .map(|&(j, r)| {
                        acc += r;
                        (acc, Move::To(j))
                    })
                    .collect();
                acc += g.kill[i];
                out.push((acc, Move::Absorbed));
                acc += g.exit[i];
                out.push((acc, Move::Escaped));
                out
            })
            .collect();
        CtsSampler { g, cum }
    }

    /// Holding time and destination.
    fn jump(&self, i: usize, rng: &mut ChaCha8Rng) -> (f64, Move) {
        let row = &self.cum[i];
        let q = row.last().unwrap().0;
        let hold = -(1.0 - rng.random::<f64>()).ln() / q;
        let u = rng.random::<f64>() * q;
        let k = row.partition_point(|e| e.0 <= u);
        (hold, row[k.min(row.len() - 1)].1)
    }

    /// Jump times and states (`None` = cemetery) up to absorption or `t_max`.
    fn path(&self, start: usize, t_max: f64, rng: &mut ChaCha8Rng) -> (Vec<(f64, Option<usize>)>, Option<f64>, bool) {
        let mut t = 0.0;
        let mut i = start;
        let mut jumps = vec![(0.0, Some(start))];
        loop {
            let (h, mv) = self.jump(i, rng);
            t += h;
            if t > t_max {
                return (jumps, None, false);
            }
            match mv {
                Move::To(j) => {
                    i = j;
                    jumps.push((t, Some(j)));
                }
                Move::Absorbed => {
                    jumps.push((t, None));
                    return (jumps, Some(t), false);
                }
                Move::Escaped => return (jumps, None, true),
            }
        }
    }
}

fn cts_sampler(ctmc: &ContinuousChain, reach: usize) -> Result<CtsSampler> {
    Ok(CtsSampler::new(truncate_generator(ctmc, ctmc.enumeration().clamp(reach))?))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SandwichReport {
    pub d: f64,
    pub paths: usize,
    pub absorbed: usize,
    /// Paths with `tau > d tau^d` or `d tau^d >= tau + d`.
    pub violations: usize,
}

/// Pathwise check of `tau <= d tau^d < tau + d`, where `tau^d` is read off
/// the path's own snapshots at times `d, 2d, ...`.
pub fn sandwich_check(ctmc: &ContinuousChain, x: StateId, ds: &[f64], config: &SimConfig, window: usize) -> Result<Vec<SandwichReport>> {
    let s = cts_sampler(ctmc, window)?;
    let xi = s.g.index_of(x).ok_or(QsdError::UnknownState(x))?;
    let parts = par_map(&config.batches(), |&(k, m)| {
        let mut rng = config.rng(k);
        let mut absorbed = 0usize;
        let mut bad = vec![0usize; ds.len()];
        for _ in 0..m {
            let (jumps, tau, _) = s.path(xi, config.horizon, &mut rng);
            let Some(tau) = tau else { continue };
            absorbed += 1;
            for (di, &d) in ds.iter().enumerate() {
                // first grid index whose snapshot is the cemetery
                let mut n = 1u64;
                let mut j = 0usize;
                let td = loop {
                    let t = n as f64 * d;
                    while j + 1 < jumps.len() && jumps[j + 1].0 <= t {
                        j += 1;
                    }
                    if jumps[j].1.is_none() {
                        break t;
                    }
                    n += 1;
                };
                if !(tau <= td && td < tau + d) {
                    bad[di] += 1;
                }
            }
        }
        (absorbed, bad)
    });
    let absorbed: usize = parts.iter().map(|p| p.0).sum();
    Ok(ds
        .iter()
        .enumerate()
        .map(|(di, &d)| SandwichReport {
            d,
            paths: config.paths,
            absorbed,
            violations: parts.iter().map(|p| p.1[di]).sum(),
        })
        .collect())
}

/// Continuous survival from `qsd` on the grid `t = k h`, `k <= horizon`.
pub fn tail_check_cts(ctmc: &ContinuousChain, qsd: &Qsd, config: &SimConfig, h: f64, horizon: usize) -> Result<TailReport> {
    let reach = qsd.states.iter().filter_map(|&s| ctmc.index_of(s)).max().unwrap_or(0) + 1;
    let s = cts_sampler(ctmc, reach)?;
    let cdf = start_cdf(&qsd.pairs(), |st| s.g.index_of(st))?;
    let t_max = h * horizon as f64;
    let per_batch = par_map(&config.batches(), |&(k, m)| {
        let mut rng = config.rng(k);
        let mut surv = vec![0u64; horizon + 1];
        surv[horizon] = m as u64;
        for _ in 0..m {
            let u = rng.random::<f64>() * cdf.last().unwrap().0;
            let i = cdf[cdf.partition_point(|e| e.0 <= u).min(cdf.len() - 1)].1;
            let (jumps, tau, escaped) = s.path(i, t_max, &mut rng);
            let end = match (tau, escaped) {
                (Some(t), _) => t,
                (None, true) => jumps.last().unwrap().0,
                (None, false) => f64::INFINITY,
            };
            for (k, c) in surv[..horizon].iter_mut().enumerate() {
                if end > (k + 1) as f64 * h {
                    *c += 1;
                }
            }
        }
        surv
    });
    Ok(tail_report(qsd.lambda, h, config.paths, per_batch))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gallery::hub_two_spokes;
    use crate::qsd::qsd_finite_state;

    fn one_state() -> DiscreteChain {
        DiscreteChain::explicit(vec![0], vec![(0, vec![(0, 0.5)], 0.5)]).unwrap()
    }

    fn ring() -> DiscreteChain {
        DiscreteChain::explicit(vec![0, 1], vec![(0, vec![(1, 1.0)], 0.0), (1, vec![(0, 0.5)], 0.5)]).unwrap()
    }

    #[test]
    fn geometric_mean_and_determinism() {
        let cfg = SimConfig::new(11, 100_000, 200.0);
        let b = simulate(&one_state(), StateId(0), &cfg).unwrap();
        let (m, se) = b.mean_tau();
        assert!((m - 2.0).abs() < 3.0 * se, "{m} {se}");
        let again = simulate(&one_state(), StateId(0), &cfg).unwrap();
        assert_eq!(b.tau, again.tau);
    }

    #[test]
    fn ring_parity_and_hub_first_step() {
        let cfg = SimConfig::new(3, 20_000, 200.0);
        let b = simulate(&ring(), StateId(0), &cfg).unwrap();
        assert!(b.tau.iter().flatten().all(|t| t % 2 == 0));
        let m = hub_two_spokes(0.8, 0.0).unwrap();
        let cfg = SimConfig::new(5, 100_000, 1.0);
        let b = simulate(m.discrete().unwrap(), StateId(0), &cfg).unwrap();
        let p = b.tau.iter().filter(|t| **t == Some(1)).count() as f64 / 1e5;
        let se = (0.8f64 * 0.2 / 1e5).sqrt();
        assert!((p - 0.8).abs() < 3.0 * se, "{p}");
    }

    #[test]
    fn ring_parity_yaglom() {
        let cfg = SimConfig::new(9, 200_000, 100.0);
        let r = yaglom_parity_average(&ring(), StateId(0), 20, &cfg).unwrap();
        let q = qsd_finite_state(&ring()).unwrap();
        let z = r.max_z(&|s| q.weight(s));
        assert!(z < 3.0, "{r:?}");
    }

    #[test]
    fn weighted_mgf_one_state() {
        let cfg = SimConfig::new(1, 50_000, 100.0);
        let e = weighted_mgf_estimate(&one_state(), StateId(0), 0.3, &cfg).unwrap();
        let exact = 0.3f64.exp() * 0.5;
        assert!((e.mean - exact).abs() < 3.0 * e.se);
        let z = weighted_mgf_estimate(&one_state(), StateId(0), 0.0, &cfg).unwrap();
        assert!((z.mean - 0.5).abs() < 3.0 * z.se);
    }

    #[test]
    fn ring_tail_slope() {
        let cfg = SimConfig::new(2, 200_000, 30.0);
        let q = qsd_finite_state(&ring()).unwrap();
        let t = tail_check(&ring(), &q, &cfg, 25).unwrap();
        assert!(t.covers, "{t:?}");
        assert!((t.survival[0] - (-q.lambda).exp()).abs() < 0.01);
    }
}
