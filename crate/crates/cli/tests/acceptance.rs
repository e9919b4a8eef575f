//! End-to-end acceptance run: one pass/fail line per criterion.

use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qsd_core::analytics::{
    critical_parameter, green_kernel, r_critical, taboo_solve, total_variation, window_lambda_cr, window_mgf, Schedule,
};
use qsd_core::chain::{truncate, DiscreteChain};
use qsd_core::cts::{bd_qsd, discretize, qsd_transfer_to_cts};
use qsd_core::gallery::{cyclic_transfer, hub_two_spokes, BirthDeath, CyclicTransfer, HubTwoSpokes, JumpLaw, Poly};
use qsd_core::monte_carlo::{sandwich_check, tail_check_cts, yaglom_parity_average, SimConfig};
use qsd_core::qsd::{
    domination_gap, escaping_sequence, qsd_finite_state, qsd_martin_limit, qsd_mu, qsd_renewal, qsd_skip_free,
    qsd_window_perron, survival_curve, MartinOutcome, Qsd, DEFAULT_MARTIN_NS,
};
use qsd_core::reverse::build_reverse;
use qsd_core::{ContinuousChain, StateId};

type Outcome = Result<String, String>;

fn qsdlab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_qsdlab"))
}

fn ensure(ok: bool, msg: String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg)
    }
}

fn within(t: Instant, limit: Duration) -> Result<(), String> {
    ensure(t.elapsed() < limit, format!("runtime {:?} over {:?}", t.elapsed(), limit))
}

fn lift<T, E: std::fmt::Debug>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| format!("{e:?}"))
}

/// Largest `|P_nu(tau > n) - e^{-lambda n}|` for `n <= 30`.
fn tail_gap(chain: &DiscreteChain, q: &Qsd) -> f64 {
    survival_curve(chain, &q.pairs(), 30)
        .iter()
        .enumerate()
        .map(|(n, s)| (s - (-q.lambda * n as f64).exp()).abs())
        .fold(0.0, f64::max)
}

/// Random irreducible chain on `0..n` with at least one absorbing exit.
fn random_chain(rng: &mut ChaCha8Rng, n: usize) -> DiscreteChain {
    let killer = rng.random_range(0..n);
    let rows = (0..n)
        .map(|i| {
            let mut w: Vec<(i64, f64)> = Vec::new();
            w.push((((i + 1) % n) as i64, rng.random_range(0.2..1.0)));
            for j in 0..n {
                if j != (i + 1) % n && rng.random_bool(0.3) {
                    w.push((j as i64, rng.random_range(0.0..1.0)));
                }
            }
            let kill = if i == killer || rng.random_bool(0.2) { rng.random_range(0.05..0.6) } else { 0.0 };
            let tot: f64 = w.iter().map(|e| e.1).sum::<f64>() + kill;
            let mut entries: Vec<(i64, f64)> = w.iter().map(|&(j, p)| (j, p / tot)).collect();
            let absorb = 1.0 - entries.iter().map(|e| e.1).sum::<f64>();
            entries.sort_by_key(|e| e.0);
            (i as i64, entries, absorb.max(0.0))
        })
        .collect();
    DiscreteChain::explicit((0..n as i64).collect(), rows).expect("valid random chain")
}

fn c1_sweep() -> Outcome {
    let t = Instant::now();
    let out = lift(qsdlab().args(["sweep", "--q", "0.95", "--grid", "0:3:20"]).output())?;
    ensure(out.status.success(), format!("sweep failed: {}", String::from_utf8_lossy(&out.stderr)))?;
    let text = String::from_utf8_lossy(&out.stdout).to_string();
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let mut worst = 0.0f64;
    let mut rows = 0;
    for rec in r.records() {
        let rec = lift(rec)?;
        let d: f64 = lift(rec[3].parse::<f64>())?;
        worst = worst.max(d);
        rows += 1;
    }
    within(t, Duration::from_secs(30))?;
    let q: f64 = 0.95;
    let e0 = 1.0 / (2.0 * (q * (1.0 - q)).sqrt());
    ensure(rows == 20, format!("{rows} grid rows"))?;
    ensure((e0 - 2.29416).abs() <= 1e-4, format!("e^lambda0 = {e0}"))?;
    ensure(worst <= 1e-6, format!("worst |numeric - closed form| = {worst:e}"))?;
    Ok(format!("e^lambda0 = {e0:.6}, worst grid gap {worst:.1e}, {:?}", t.elapsed()))
}

fn hub125() -> (qsd_core::gallery::GalleryModel, HubTwoSpokes) {
    (hub_two_spokes(0.8, 1.25).unwrap(), HubTwoSpokes::new(0.8, 1.25).unwrap())
}

fn c2_qsds() -> Result<Vec<Qsd>, String> {
    let (m, _) = hub125();
    let c = m.discrete().unwrap();
    let lam = lift(critical_parameter(c, &Schedule::default()))?.lambda;
    let r = lift(qsd_renewal(c, lam, None, 400))?;
    let u = lift(qsd_mu(c, lam, StateId(0), 400))?;
    let p = lift(qsd_window_perron(c, 400))?;
    Ok(vec![r, u, p])
}

fn c2_uniqueness() -> Outcome {
    let t = Instant::now();
    let (_, h) = hub125();
    let qs = c2_qsds()?;
    let mut worst_tv = 0.0f64;
    for i in 0..3 {
        for j in i + 1..3 {
            worst_tv = worst_tv.max(qs[i].tv(&qs[j].pairs()));
        }
    }
    let mut worst = 0.0f64;
    for q in &qs {
        for y in -30i64..=30 {
            let exact = if y == 0 { 0.6 } else { 0.3 * 0.4f64.powi(y.abs() as i32) };
            worst = worst.max((q.weight(StateId(y)) - exact).abs());
            worst = worst.max((h.qsd_cr(y) - exact).abs());
        }
    }
    within(t, Duration::from_secs(10))?;
    ensure(worst_tv <= 1e-6, format!("pairwise TV {worst_tv:e}"))?;
    ensure(worst <= 1e-6, format!("pointwise gap {worst:e}"))?;
    Ok(format!("pairwise TV {worst_tv:.1e}, pointwise {worst:.1e}, {:?}", t.elapsed()))
}

fn c3_martin() -> Result<Vec<Qsd>, String> {
    let m = hub_two_spokes(0.8, 0.0).unwrap();
    let h = HubTwoSpokes::new(0.8, 0.0).unwrap();
    let sched = Schedule::new(vec![400, 800, 1600, 3200]);
    let mut out = Vec::new();
    for sign in [1, -1] {
        let seq = escaping_sequence(sign, &DEFAULT_MARTIN_NS);
        match lift(qsd_martin_limit(m.discrete().unwrap(), h.lambda0(), &seq, &sched))? {
            MartinOutcome::Qsd(q) => out.push(q),
            MartinOutcome::Subprobability { mass, .. } => return Err(format!("sign {sign}: mass {mass}")),
        }
    }
    Ok(out)
}

fn c3_martin_limits() -> Outcome {
    let t = Instant::now();
    let h = HubTwoSpokes::new(0.8, 0.0).unwrap();
    ensure((h.rho - 0.5).abs() < 1e-15, format!("rho = {}", h.rho))?;
    let qs = c3_martin()?;
    let spots = [(0, 0.25), (1, 0.1875), (-1, 0.0625), (2, 0.15625)];
    let mut worst = 0.0f64;
    for (y, v) in spots {
        worst = worst.max((qs[0].weight(StateId(y)) - v).abs());
        worst = worst.max((qs[1].weight(StateId(-y)) - v).abs());
    }
    for (k, q) in qs.iter().enumerate() {
        let sign = if k == 0 { 1 } else { -1 };
        for y in -20..=20 {
            worst = worst.max((q.weight(StateId(y)) - h.qsd_edge(sign, y)).abs());
        }
        ensure(q.certificate.pass, format!("certificate {:?}", q.certificate))?;
    }
    within(t, Duration::from_secs(10))?;
    ensure(worst <= 1e-6, format!("gap {worst:e}"))?;
    Ok(format!("spot/closed-form gap {worst:.1e}, certificates pass, {:?}", t.elapsed()))
}

/// `(q, beta, lambda)` with `lambda` drawn from `[0.3, 1] lambda_cr`.
fn cyclic_triples() -> Vec<(f64, f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    (0..20)
        .map(|_| {
            let q = rng.random_range(0.2..0.8);
            let b = rng.random_range(0.1..0.6);
            let lcr = CyclicTransfer::new(q, JumpLaw::Geometric(b)).unwrap().lambda_cr_root();
            let lam = if rng.random_bool(0.25) { lcr } else { lcr * rng.random_range(0.3..1.0) };
            (q, b, lam)
        })
        .collect()
}

fn c4_qsds() -> Result<Vec<(DiscreteChain, Qsd, f64, f64)>, String> {
    let mut out = Vec::new();
    for (q, b, lam) in cyclic_triples() {
        let ct = CyclicTransfer::new(q, JumpLaw::Geometric(b)).unwrap();
        let m = lift(cyclic_transfer(q, JumpLaw::Geometric(b)))?;
        let c = m.discrete().unwrap().clone();
        let window = ((30.0 / lam).ceil() as usize).clamp(200, 1200);
        let qsd = lift(qsd_skip_free(&c, lam, window))?;
        let oracle: Vec<(StateId, f64)> = qsd.states.iter().map(|&s| (s, ct.qsd_at(lam, s.0))).collect();
        let tv = total_variation(&qsd.pairs(), &oracle);
        let est = lift(critical_parameter(&c, &Schedule::default()))?;
        out.push((c, qsd, tv, (est.lambda - ct.lambda_cr_root()).abs()));
    }
    Ok(out)
}

fn c4_cyclic(runs: &[(DiscreteChain, Qsd, f64, f64)]) -> Outcome {
    let tv = runs.iter().map(|r| r.2).fold(0.0, f64::max);
    let gap = runs.iter().map(|r| r.3).fold(0.0, f64::max);
    ensure(tv <= 1e-8, format!("worst TV {tv:e}"))?;
    ensure(gap <= 1e-8, format!("worst lambda_cr gap {gap:e}"))?;
    Ok(format!("20 triples: worst TV {tv:.1e}, worst lambda_cr gap {gap:.1e}"))
}

fn c5_reversal() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let (mut worst, mut worst_path, mut worst_inu) = (0.0f64, 0.0f64, f64::NEG_INFINITY);
    for _ in 0..50 {
        let n = rng.random_range(1..=15);
        let c = random_chain(&mut rng, n);
        let q = lift(qsd_finite_state(&c))?;
        let rev = lift(build_reverse(&c, &q))?;
        let bound = q.lambda.exp_m1();
        for x in 0..n {
            let r = lift(qsd_core::reverse::reversal_identities(&rev, StateId(x as i64)))?;
            worst = worst.max(r.max_residual());
            worst_inu = worst_inu.max(r.i_nu - bound);
        }
        for _ in 0..20 {
            let len = rng.random_range(1..=6);
            let mut path = vec![rng.random_range(0..n)];
            while path.len() <= len {
                let i = *path.last().unwrap();
                let next: Vec<usize> = (0..n).filter(|&j| rev.p(i, j) > 0.0).collect();
                path.push(next[rng.random_range(0..next.len())]);
            }
            worst_path = worst_path.max(rev.path_residual(&path));
        }
    }
    ensure(worst <= 1e-8, format!("identity residual {worst:e}"))?;
    ensure(worst_inu <= 1e-12, format!("I_nu exceeds e^lambda - 1 by {worst_inu:e}"))?;
    ensure(worst_path <= 1e-12, format!("path residual {worst_path:e}"))?;
    Ok(format!("50 chains: identities {worst:.1e}, path {worst_path:.1e}, max I_nu - (e^l - 1) = {worst_inu:.1e}"))
}

fn bd() -> BirthDeath {
    BirthDeath::new(Poly([1.0, 0.0, 0.0]), Poly([2.0, 1.0, 0.0])).unwrap()
}

fn c6_bridge() -> Result<(String, Qsd), String> {
    let b = bd();
    let ctmc = ContinuousChain::new(b.clone());
    let cfg = SimConfig::new(6, 100_000, 1e4);
    let reps = lift(sandwich_check(&ctmc, StateId(0), &[0.5, 0.1], &cfg, 200))?;
    for r in &reps {
        ensure(r.violations == 0 && r.absorbed > 0, format!("d = {}: {} violations of {}", r.d, r.violations, r.absorbed))?;
    }
    let window = 100;
    let mut transferred = Vec::new();
    for d in [0.5, 0.1] {
        let dc = lift(discretize(&ctmc, d, window))?;
        let qd = lift(qsd_finite_state(&lift(dc.chain())?))?;
        transferred.push(lift(qsd_transfer_to_cts(&ctmc, &qd, d, window))?);
    }
    let tv = transferred[0].tv(&transferred[1].pairs());
    ensure(tv <= 1e-7, format!("transfer TV {tv:e}"))?;
    let sol = lift(bd_qsd(&b, 1.0, window, &Schedule::new(vec![50, 100, 200])))?;
    let lam = sol.qsd.lambda;
    let gap = (sol.qsd.weights[0] - lam / b.mu_k(0)).abs();
    ensure(gap <= 1e-6, format!("nu(0) - lambda/mu_0 = {gap:e}"))?;
    Ok((format!("0 violations on 1e5 paths (d = 0.5, 0.1), transfer TV {tv:.1e}, nu(0) gap {gap:.1e}"), sol.qsd))
}

fn c7_tails(discrete: &[(&DiscreteChain, &Qsd)], bd_qsd: &Qsd) -> Outcome {
    let mut worst = 0.0f64;
    for (c, q) in discrete {
        worst = worst.max(tail_gap(c, q));
    }
    ensure(worst <= 1e-8, format!("discrete survival gap {worst:e}"))?;
    let ctmc = ContinuousChain::new(bd());
    let cfg = SimConfig::new(77, 200_000, 0.0);
    let t = lift(tail_check_cts(&ctmc, bd_qsd, &cfg, 0.1, 20))?;
    ensure(t.covers, format!("slope CI {:?} misses {}", t.ci, -t.lambda))?;
    Ok(format!(
        "{} discrete QSDs: survival gap {worst:.1e}; continuous slope {:.4} CI [{:.4}, {:.4}] covers {:.4}",
        discrete.len(),
        t.slope,
        t.ci.0,
        t.ci.1,
        -t.lambda
    ))
}

fn c8_negative() -> Outcome {
    for lam in ["0.2", "0.5"] {
        let out = lift(qsdlab().args(["qsd", "--gallery", "killed-walk", "--eps", "0.6", "--lambda", lam]).output())?;
        ensure(out.status.code() == Some(4), format!("lambda {lam}: exit {:?}", out.status.code()))?;
        ensure(String::from_utf8_lossy(&out.stderr).contains("no QSD"), "missing `no QSD` diagnostic".into())?;
    }
    let m = lift(qsd_core::gallery::killed_drifted_walk(0.6, std::f64::consts::LN_2))?;
    let r = lift(r_critical(m.discrete().unwrap(), StateId(0), &Schedule::new(vec![150, 300, 600, 1200])))?;
    ensure((r.value - 2.5).abs() <= 1e-4, format!("R_cr = {}", r.value))?;
    Ok(format!("exit 4 at lambda 0.2 and 0.5; R_cr = {:.6}", r.value))
}

fn ring() -> DiscreteChain {
    DiscreteChain::explicit(vec![0, 1], vec![(0, vec![(1, 1.0)], 0.0), (1, vec![(0, 0.5)], 0.5)]).unwrap()
}

fn c9_yaglom() -> Outcome {
    let cfg = SimConfig::new(9, 1_000_000, 100.0);
    let a = lift(yaglom_parity_average(&ring(), StateId(0), 20, &cfg))?;
    let b = lift(yaglom_parity_average(&ring(), StateId(0), 20, &cfg))?;
    ensure(a.estimates == b.estimates && a.std_errors == b.std_errors, "rerun differs".into())?;
    let exact = |s: StateId| if s.0 == 0 { 2f64.sqrt() - 1.0 } else { 2.0 - 2f64.sqrt() };
    let z = a.max_z(&exact);
    ensure(z <= 3.0, format!("max |z| = {z}"))?;
    Ok(format!("estimate ({:.5}, {:.5}), max |z| {z:.2}, deterministic", a.estimates[0], a.estimates[1]))
}

fn c10_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut violations = Vec::new();
    for k in 0..60 {
        let n = rng.random_range(2..=12);
        let c = random_chain(&mut rng, n);
        let full = lift(truncate(&c, n))?;
        let lcr = window_lambda_cr(&full);
        let mut prev = f64::INFINITY;
        for w in 1..=n {
            let l = window_lambda_cr(&lift(truncate(&c, w))?);
            if l > prev * (1.0 + 1e-12) + 1e-14 {
                violations.push(format!("chain {k}: lambda_cr({w}) = {l} > {prev}"));
            }
            prev = l;
        }
        let lam = lcr * rng.random_range(0.1..0.95);
        let mut prev: Option<Vec<f64>> = None;
        for w in 1..=n {
            let v = window_mgf(&lift(truncate(&c, w))?, lam).ok_or("singular window")?;
            if let Some(p) = &prev {
                if p.iter().zip(&v).any(|(a, b)| *b < a * (1.0 - 1e-12)) {
                    violations.push(format!("chain {k}: MGF decreased at window {w}"));
                }
            }
            prev = Some(v);
        }
        for x in 0..n {
            let t = taboo_solve(&full, lcr, x).ok_or("singular taboo system")?;
            if t.return_part > 1.0 + 1e-9 {
                violations.push(format!("chain {k}: return transform {} at {x}", t.return_part));
            }
            let g = lift(green_kernel(&c, lam, StateId(x as i64), n))?;
            if g.mass_check > 1e-10 {
                violations.push(format!("chain {k}: Green mass gap {}", g.mass_check));
            }
        }
        let q = lift(qsd_finite_state(&c))?;
        let d = lift(domination_gap(&c, &q, n))?;
        if d > 1e-10 {
            violations.push(format!("chain {k}: domination gap {d}"));
        }
    }
    ensure(violations.is_empty(), violations.join("; "))?;
    Ok("60 random chains: truncation monotonicity, return <= 1, Green mass, domination: 0 violations".into())
}

fn report(results: &[(&str, Outcome)]) -> bool {
    let mut all = true;
    for (name, r) in results {
        match r {
            Ok(msg) => println!("PASS  {name}: {msg}"),
            Err(msg) => {
                all = false;
                println!("FAIL  {name}: {msg}");
            }
        }
    }
    all
}

#[test]
fn acceptance() {
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    results.push(("1 figure sweep", c1_sweep()));
    results.push(("2 infinite-regime uniqueness", c2_uniqueness()));
    results.push(("3 finite-regime Martin limits", c3_martin_limits()));
    let cyc = c4_qsds();
    results.push(("4 cyclic transfer", cyc.as_ref().map_err(Clone::clone).and_then(|r| c4_cyclic(r))));
    results.push(("5 reversal identities", c5_reversal()));
    let bridge = c6_bridge();
    results.push(("6 continuous bridge", bridge.as_ref().map(|b| b.0.clone()).map_err(Clone::clone)));

    let tails = (|| -> Outcome {
        let hub = hub125().0;
        let edge = hub_two_spokes(0.8, 0.0).unwrap();
        let c2 = c2_qsds()?;
        let c3 = c3_martin()?;
        let cyc = cyc.as_ref().map_err(Clone::clone)?;
        let bdq = &bridge.as_ref().map_err(Clone::clone)?.1;
        let mut list: Vec<(&DiscreteChain, &Qsd)> = Vec::new();
        for q in &c2 {
            list.push((hub.discrete().unwrap(), q));
        }
        for q in &c3 {
            list.push((edge.discrete().unwrap(), q));
        }
        for (c, q, _, _) in cyc {
            list.push((c, q));
        }
        c7_tails(&list, bdq)
    })();
    results.push(("7 geometric/exponential tails", tails));
    results.push(("8 non-existence controls", c8_negative()));
    results.push(("9 Monte Carlo Yaglom", c9_yaglom()));
    results.push(("10 property suites", c10_properties()));
    assert!(report(&results), "acceptance criteria failed");
}
