//! Chain representations, state enumeration and window truncation.
//!
//! A chain lives on a countable set `S` plus a cemetery state. States carry
//! integer labels; the cemetery is never a member of `S` and is handled through
//! the `absorb` (or `kill`) field of each row.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{QsdError, Result};

/// Tolerance on row sums of a transition function.
pub const ROW_SUM_TOL: f64 = 1e-12;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateId(pub i64);

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<i64> for StateId {
    fn from(v: i64) -> Self {
        StateId(v)
    }
}

/// A finite list of states with a reverse index.
#[derive(Clone, Debug, PartialEq)]
pub struct StateList {
    states: Vec<StateId>,
    index: HashMap<StateId, usize>,
}

impl StateList {
    pub fn new(states: Vec<StateId>) -> Result<Self> {
        let mut index = HashMap::with_capacity(states.len());
        for (i, s) in states.iter().enumerate() {
            if index.insert(*s, i).is_some() {
                return Err(QsdError::Spec(format!("duplicate state {s}")));
            }
        }
        Ok(StateList { states, index })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[StateId] {
        &self.states
    }

    pub fn index_of(&self, s: StateId) -> Option<usize> {
        self.index.get(&s).copied()
    }
}

/// Order in which states are listed; windows are prefixes of this order.
#[derive(Clone, Debug, PartialEq)]
pub enum Enumeration {
    /// `start, start + step, start + 2 step, ...` with `step > 0`.
    Arithmetic { start: i64, step: i64 },
    /// `0, 1, -1, 2, -2, ...`
    Integers,
    Finite(Arc<StateList>),
}

impl Enumeration {
    pub fn naturals() -> Self {
        Enumeration::Arithmetic { start: 0, step: 1 }
    }

    pub fn state_at(&self, i: usize) -> Option<StateId> {
        match self {
            Enumeration::Arithmetic { start, step } => Some(StateId(start + step * i as i64)),
            Enumeration::Integers => {
                let k = i.div_ceil(2) as i64;
                Some(StateId(if i % 2 == 1 { k } else { -k }))
            }
            Enumeration::Finite(list) => list.states.get(i).copied(),
        }
    }

    pub fn index_of(&self, s: StateId) -> Option<usize> {
        match self {
            Enumeration::Arithmetic { start, step } => {
                let d = s.0 - start;
                (d >= 0 && d % step == 0).then(|| (d / step) as usize)
            }
            Enumeration::Integers => Some(if s.0 > 0 {
                (2 * s.0 - 1) as usize
            } else {
                (-2 * s.0) as usize
            }),
            Enumeration::Finite(list) => list.index_of(s),
        }
    }

    /// Number of states, `None` for an infinite enumeration.
    pub fn len(&self) -> Option<usize> {
        match self {
            Enumeration::Finite(list) => Some(list.len()),
            _ => None,
        }
    }

    /// Clamp a requested window size to the size of `S`.
    pub fn clamp(&self, n: usize) -> usize {
        self.len().map_or(n, |m| n.min(m))
    }
}

/// One row of a discrete transition function.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Row {
    pub entries: Vec<(StateId, f64)>,
    pub absorb: f64,
    /// Mass sent to states that the rule did not list individually; only
    /// allowed for targets whose enumeration index is at least the horizon.
    pub beyond: f64,
}

impl Row {
    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.1).sum::<f64>() + self.absorb + self.beyond
    }
}

/// Transition rule of a discrete chain.
pub trait TransitionRule: Send + Sync + fmt::Debug {
    fn enumeration(&self) -> &Enumeration;
    /// Row of `p(x, .)`. Targets with enumeration index `>= horizon` may be
    /// lumped into `Row::beyond`.
    fn row(&self, x: StateId, horizon: usize) -> Row;
    /// Whether the restriction to `S` is asserted irreducible.
    fn irreducible(&self) -> bool {
        true
    }
}

#[derive(Clone, Debug)]
pub struct DiscreteChain {
    rule: Arc<dyn TransitionRule>,
}

impl DiscreteChain {
    pub fn new(rule: impl TransitionRule + 'static) -> Self {
        DiscreteChain { rule: Arc::new(rule) }
    }

    pub fn enumeration(&self) -> &Enumeration {
        self.rule.enumeration()
    }

    pub fn row(&self, x: StateId, horizon: usize) -> Row {
        self.rule.row(x, horizon)
    }

    pub fn asserted_irreducible(&self) -> bool {
        self.rule.irreducible()
    }

    pub fn state_at(&self, i: usize) -> Option<StateId> {
        self.enumeration().state_at(i)
    }

    pub fn index_of(&self, s: StateId) -> Option<usize> {
        self.enumeration().index_of(s)
    }

    pub fn is_finite(&self) -> bool {
        self.enumeration().len().is_some()
    }

    /// Build an explicit finite chain from `(from, [(to, p)], absorb)` rows.
    pub fn explicit(states: Vec<i64>, rows: Vec<(i64, Vec<(i64, f64)>, f64)>) -> Result<Self> {
        let list = StateList::new(states.into_iter().map(StateId).collect())?;
        let mut table = vec![Row::default(); list.len()];
        for (from, entries, absorb) in rows {
            let i = list
                .index_of(StateId(from))
                .ok_or(QsdError::UnknownState(StateId(from)))?;
            for (to, _) in &entries {
                if list.index_of(StateId(*to)).is_none() {
                    return Err(QsdError::UnknownState(StateId(*to)));
                }
            }
            table[i] = Row {
                entries: entries.into_iter().map(|(t, p)| (StateId(t), p)).collect(),
                absorb,
                beyond: 0.0,
            };
        }
        Ok(DiscreteChain::new(ExplicitChain {
            enumeration: Enumeration::Finite(Arc::new(list)),
            rows: table,
        }))
    }
}

/// A chain given by an explicit table of rows.
#[derive(Clone, Debug)]
pub struct ExplicitChain {
    enumeration: Enumeration,
    rows: Vec<Row>,
}

impl ExplicitChain {
    pub fn from_rows(list: StateList, rows: Vec<Row>) -> Self {
        ExplicitChain { enumeration: Enumeration::Finite(Arc::new(list)), rows }
    }
}

impl TransitionRule for ExplicitChain {
    fn enumeration(&self) -> &Enumeration {
        &self.enumeration
    }

    fn row(&self, x: StateId, _horizon: usize) -> Row {
        self.enumeration
            .index_of(x)
            .map(|i| self.rows[i].clone())
            .unwrap_or_default()
    }
}

/// Rates out of a state of a continuous-time chain (off-diagonal only).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RateRow {
    pub entries: Vec<(StateId, f64)>,
    pub kill: f64,
    pub beyond: f64,
}

impl RateRow {
    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.1).sum::<f64>() + self.kill + self.beyond
    }
}

pub trait RateRule: Send + Sync + fmt::Debug {
    fn enumeration(&self) -> &Enumeration;
    fn rates(&self, x: StateId, horizon: usize) -> RateRow;
}

#[derive(Clone, Debug)]
pub struct ContinuousChain {
    rule: Arc<dyn RateRule>,
}

impl ContinuousChain {
    pub fn new(rule: impl RateRule + 'static) -> Self {
        ContinuousChain { rule: Arc::new(rule) }
    }

    pub fn enumeration(&self) -> &Enumeration {
        self.rule.enumeration()
    }

    pub fn rates(&self, x: StateId, horizon: usize) -> RateRow {
        self.rule.rates(x, horizon)
    }

    pub fn state_at(&self, i: usize) -> Option<StateId> {
        self.enumeration().state_at(i)
    }

    pub fn index_of(&self, s: StateId) -> Option<usize> {
        self.enumeration().index_of(s)
    }

    pub fn explicit(states: Vec<i64>, rows: Vec<(i64, Vec<(i64, f64)>, f64)>) -> Result<Self> {
        let list = StateList::new(states.into_iter().map(StateId).collect())?;
        let mut table = vec![RateRow::default(); list.len()];
        for (from, entries, kill) in rows {
            let i = list
                .index_of(StateId(from))
                .ok_or(QsdError::UnknownState(StateId(from)))?;
            for (to, _) in &entries {
                if list.index_of(StateId(*to)).is_none() {
                    return Err(QsdError::UnknownState(StateId(*to)));
                }
            }
            table[i] = RateRow {
                entries: entries
                    .into_iter()
                    .filter(|(t, _)| *t != from)
                    .map(|(t, r)| (StateId(t), r))
                    .collect(),
                kill,
                beyond: 0.0,
            };
        }
        Ok(ContinuousChain::new(ExplicitGenerator {
            enumeration: Enumeration::Finite(Arc::new(list)),
            rows: table,
        }))
    }
}

#[derive(Clone, Debug)]
pub struct ExplicitGenerator {
    enumeration: Enumeration,
    rows: Vec<RateRow>,
}

impl ExplicitGenerator {
    pub fn from_rows(list: StateList, rows: Vec<RateRow>) -> Self {
        ExplicitGenerator { enumeration: Enumeration::Finite(Arc::new(list)), rows }
    }
}

impl RateRule for ExplicitGenerator {
    fn enumeration(&self) -> &Enumeration {
        &self.enumeration
    }

    fn rates(&self, x: StateId, _horizon: usize) -> RateRow {
        self.enumeration
            .index_of(x)
            .map(|i| self.rows[i].clone())
            .unwrap_or_default()
    }
}

/// Restriction of a discrete chain to the first `n` enumerated states.
/// Mass leaving the window is redirected to the cemetery and recorded in
/// `exit`, separately from genuine absorption.
#[derive(Clone, Debug)]
pub struct FiniteChain {
    pub states: Vec<StateId>,
    pub rows: Vec<Vec<(usize, f64)>>,
    pub absorb: Vec<f64>,
    pub exit: Vec<f64>,
    index: HashMap<StateId, usize>,
}

impl FiniteChain {
    /// Assemble from sorted states and position-indexed rows.
    pub fn from_parts(states: Vec<StateId>, rows: Vec<Vec<(usize, f64)>>, absorb: Vec<f64>, exit: Vec<f64>) -> Self {
        let index = states.iter().enumerate().map(|(i, s)| (*s, i)).collect();
        FiniteChain { states, rows, absorb, exit, index }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn index_of(&self, s: StateId) -> Option<usize> {
        self.index.get(&s).copied()
    }

    /// Killing vector `a_W = p(., cemetery) + exit mass`.
    pub fn kill(&self, i: usize) -> f64 {
        self.absorb[i] + self.exit[i]
    }

    /// Lower and upper bandwidth of the sub-stochastic matrix.
    pub fn bandwidth(&self) -> (usize, usize) {
        let (mut kl, mut ku) = (0, 0);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, _) in row {
                if j < i {
                    kl = kl.max(i - j);
                } else {
                    ku = ku.max(j - i);
                }
            }
        }
        (kl, ku)
    }

    pub fn dense(&self) -> Vec<Vec<f64>> {
        let n = self.len();
        let mut m = vec![vec![0.0; n]; n];
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, p) in row {
                m[i][j] += p;
            }
        }
        m
    }

    /// `v P` for a row vector `v` indexed by window position.
    pub fn left_mul(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        for (i, row) in self.rows.iter().enumerate() {
            let vi = v[i];
            if vi != 0.0 {
                for &(j, p) in row {
                    out[j] += vi * p;
                }
            }
        }
        out
    }

    /// `P v` for a column vector `v`.
    pub fn right_mul(&self, v: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(j, p)| p * v[j]).sum())
            .collect()
    }
}

/// Truncate a discrete chain to the window of its first `n` states, listed
/// in increasing order so nearest-neighbour chains give tridiagonal systems.
pub fn truncate(chain: &DiscreteChain, n: usize) -> Result<FiniteChain> {
    let n = chain.enumeration().clamp(n);
    if n == 0 {
        return Err(QsdError::EmptyWindow);
    }
    let states: Vec<StateId> = (0..n).map(|i| chain.state_at(i).unwrap()).collect();
    Ok(restrict(chain, states, n))
}

/// Restriction to an arbitrary finite state set (sorted internally);
/// `horizon` is passed to the transition rule.
pub fn restrict(chain: &DiscreteChain, mut states: Vec<StateId>, horizon: usize) -> FiniteChain {
    states.sort_unstable();
    states.dedup();
    let n = states.len();
    let index: HashMap<StateId, usize> = states.iter().enumerate().map(|(i, s)| (*s, i)).collect();
    let mut rows = Vec::with_capacity(n);
    let mut absorb = Vec::with_capacity(n);
    let mut exit = Vec::with_capacity(n);
    for &x in &states {
        let row = chain.row(x, horizon);
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(row.entries.len());
        let mut leak = row.beyond;
        for (y, p) in row.entries {
            match index.get(&y) {
                Some(&j) => out.push((j, p)),
                None => leak += p,
            }
        }
        out.sort_by_key(|e| e.0);
        out.dedup_by(|b, a| {
            if a.0 == b.0 {
                a.1 += b.1;
                true
            } else {
                false
            }
        });
        rows.push(out);
        absorb.push(row.absorb);
        exit.push(leak);
    }
    FiniteChain { states, rows, absorb, exit, index }
}

/// Restriction of a continuous-time chain to a window.
#[derive(Clone, Debug)]
pub struct FiniteGenerator {
    pub states: Vec<StateId>,
    /// Off-diagonal rates inside the window.
    pub rows: Vec<Vec<(usize, f64)>>,
    pub kill: Vec<f64>,
    pub exit: Vec<f64>,
    index: HashMap<StateId, usize>,
}

impl FiniteGenerator {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn index_of(&self, s: StateId) -> Option<usize> {
        self.index.get(&s).copied()
    }

    /// Total jump rate `q_x` (including killing and exit).
    pub fn total_rate(&self, i: usize) -> f64 {
        self.rows[i].iter().map(|e| e.1).sum::<f64>() + self.kill[i] + self.exit[i]
    }

    pub fn out_rate(&self, i: usize) -> f64 {
        self.kill[i] + self.exit[i]
    }

    pub fn bandwidth(&self) -> (usize, usize) {
        let (mut kl, mut ku) = (0, 0);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, _) in row {
                if j < i {
                    kl = kl.max(i - j);
                } else {
                    ku = ku.max(j - i);
                }
            }
        }
        (kl, ku)
    }
}

pub fn truncate_generator(chain: &ContinuousChain, n: usize) -> Result<FiniteGenerator> {
    let n = chain.enumeration().clamp(n);
    if n == 0 {
        return Err(QsdError::EmptyWindow);
    }
    let mut states: Vec<StateId> = (0..n).map(|i| chain.state_at(i).unwrap()).collect();
    states.sort_unstable();
    let index: HashMap<StateId, usize> = states.iter().enumerate().map(|(i, s)| (*s, i)).collect();
    let mut rows = Vec::with_capacity(n);
    let mut kill = Vec::with_capacity(n);
    let mut exit = Vec::with_capacity(n);
    for (i, &x) in states.iter().enumerate() {
        let r = chain.rates(x, n);
        let mut out: Vec<(usize, f64)> = Vec::new();
        let mut leak = r.beyond;
        for (y, rate) in r.entries {
            match index.get(&y) {
                Some(&j) if j != i => out.push((j, rate)),
                Some(_) => {}
                None => leak += rate,
            }
        }
        out.sort_by_key(|e| e.0);
        rows.push(out);
        kill.push(r.kill);
        exit.push(leak);
    }
    Ok(FiniteGenerator { states, rows, kill, exit, index })
}

/// A discrete chain that passed validation on a window.
#[derive(Clone, Debug)]
pub struct ValidatedChain {
    pub chain: DiscreteChain,
    pub window: usize,
    /// Period of the restricted chain on the window (1 when aperiodic).
    pub period: u64,
}

impl std::ops::Deref for ValidatedChain {
    type Target = DiscreteChain;
    fn deref(&self) -> &DiscreteChain {
        &self.chain
    }
}

fn check_row(x: StateId, entries: &[(StateId, f64)], extra: &[f64]) -> Result<f64> {
    let mut sum = 0.0;
    for &v in entries.iter().map(|e| &e.1).chain(extra) {
        if !v.is_finite() || v < 0.0 {
            return Err(QsdError::BadEntry { state: x, value: v });
        }
        sum += v;
    }
    Ok(sum)
}

/// Validate row sums, reachability of the cemetery and irreducibility of the
/// restriction to the window of the first `n` states.
pub fn validate(chain: &DiscreteChain, n: usize) -> Result<ValidatedChain> {
    let n = chain.enumeration().clamp(n);
    if n == 0 {
        return Err(QsdError::EmptyWindow);
    }
    for i in 0..n {
        let x = chain.state_at(i).unwrap();
        let row = chain.row(x, n);
        let sum = check_row(x, &row.entries, &[row.absorb, row.beyond])?;
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(QsdError::RowSum { state: x, sum });
        }
    }
    let fc = truncate(chain, n)?;
    if fc.absorb.iter().all(|&a| a <= 0.0) {
        return Err(QsdError::NoAbsorption);
    }
    let adj: Vec<Vec<usize>> = fc
        .rows
        .iter()
        .map(|r| r.iter().filter(|e| e.1 > 0.0).map(|e| e.0).collect())
        .collect();
    let classes = strongly_connected_components(&adj);
    if classes > 1 && chain.asserted_irreducible() {
        return Err(QsdError::Reducible { classes });
    }
    Ok(ValidatedChain { chain: chain.clone(), window: n, period: period(&adj) })
}

/// Validate a continuous-time chain on a window.
pub fn validate_continuous(chain: &ContinuousChain, n: usize) -> Result<FiniteGenerator> {
    let n = chain.enumeration().clamp(n);
    if n == 0 {
        return Err(QsdError::EmptyWindow);
    }
    for i in 0..n {
        let x = chain.state_at(i).unwrap();
        let r = chain.rates(x, n);
        check_row(x, &r.entries, &[r.kill, r.beyond])?;
    }
    let g = truncate_generator(chain, n)?;
    if g.kill.iter().all(|&k| k <= 0.0) {
        return Err(QsdError::NoAbsorption);
    }
    let adj: Vec<Vec<usize>> = g
        .rows
        .iter()
        .map(|r| r.iter().filter(|e| e.1 > 0.0).map(|e| e.0).collect())
        .collect();
    let classes = strongly_connected_components(&adj);
    if classes > 1 {
        return Err(QsdError::Reducible { classes });
    }
    Ok(g)
}

/// Number of strongly connected components (iterative Kosaraju).
pub(crate) fn strongly_connected_components(adj: &[Vec<usize>]) -> usize {
    let n = adj.len();
    let mut order = Vec::with_capacity(n);
    let mut seen = vec![false; n];
    for s in 0..n {
        if seen[s] {
            continue;
        }
        let mut stack = vec![(s, 0usize)];
        seen[s] = true;
        while let Some(&mut (v, ref mut k)) = stack.last_mut() {
            if *k < adj[v].len() {
                let w = adj[v][*k];
                *k += 1;
                if !seen[w] {
                    seen[w] = true;
                    stack.push((w, 0));
                }
            } else {
                order.push(v);
                stack.pop();
            }
        }
    }
    let mut radj = vec![Vec::new(); n];
    for (v, out) in adj.iter().enumerate() {
        for &w in out {
            radj[w].push(v);
        }
    }
    let mut comp = vec![usize::MAX; n];
    let mut count = 0;
    for &s in order.iter().rev() {
        if comp[s] != usize::MAX {
            continue;
        }
        let mut stack = vec![s];
        comp[s] = count;
        while let Some(v) = stack.pop() {
            for &w in &radj[v] {
                if comp[w] == usize::MAX {
                    comp[w] = count;
                    stack.push(w);
                }
            }
        }
        count += 1;
    }
    count
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Period of the digraph component containing vertex 0.
pub(crate) fn period(adj: &[Vec<usize>]) -> u64 {
    let n = adj.len();
    let mut level = vec![i64::MIN; n];
    level[0] = 0;
    let mut queue = std::collections::VecDeque::from([0usize]);
    let mut g = 0u64;
    while let Some(v) = queue.pop_front() {
        for &w in &adj[v] {
            if level[w] == i64::MIN {
                level[w] = level[v] + 1;
                queue.push_back(w);
            } else {
                g = gcd(g, (level[v] + 1 - level[w]).unsigned_abs());
            }
        }
    }
    g.max(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_state() -> DiscreteChain {
        DiscreteChain::explicit(vec![0], vec![(0, vec![(0, 0.5)], 0.5)]).unwrap()
    }

    fn ring() -> DiscreteChain {
        DiscreteChain::explicit(vec![0, 1], vec![(0, vec![(1, 1.0)], 0.0), (1, vec![(0, 0.5)], 0.5)])
            .unwrap()
    }

    #[test]
    fn integer_enumeration_round_trips() {
        let e = Enumeration::Integers;
        let first: Vec<i64> = (0..5).map(|i| e.state_at(i).unwrap().0).collect();
        assert_eq!(first, vec![0, 1, -1, 2, -2]);
        for i in 0..100 {
            assert_eq!(e.index_of(e.state_at(i).unwrap()), Some(i));
        }
        let ev = Enumeration::Arithmetic { start: 2, step: 2 };
        assert_eq!(ev.state_at(3), Some(StateId(8)));
        assert_eq!(ev.index_of(StateId(8)), Some(3));
        assert_eq!(ev.index_of(StateId(7)), None);
    }

    #[test]
    fn small_chains_validate() {
        assert_eq!(validate(&one_state(), 10).unwrap().window, 1);
        let v = validate(&ring(), 10).unwrap();
        assert_eq!(v.period, 2);
    }

    #[test]
    fn isolated_closed_state_is_reducible() {
        let c = DiscreteChain::explicit(vec![0, 1], vec![(0, vec![(0, 1.0)], 0.0), (1, vec![], 1.0)])
            .unwrap();
        assert!(matches!(validate(&c, 2), Err(QsdError::Reducible { .. })));
    }

    #[test]
    fn bad_row_sum_is_rejected() {
        let c = DiscreteChain::explicit(vec![0], vec![(0, vec![(0, 0.5)], 0.4)]).unwrap();
        assert!(matches!(validate(&c, 1), Err(QsdError::RowSum { .. })));
        let c = DiscreteChain::explicit(vec![0], vec![(0, vec![(0, 1.0)], 0.0)]).unwrap();
        assert!(matches!(validate(&c, 1), Err(QsdError::NoAbsorption)));
    }

    #[test]
    fn ring_window_of_one_leaks_everything() {
        let fc = truncate(&ring(), 1).unwrap();
        assert!(fc.rows[0].is_empty());
        assert_eq!(fc.kill(0), 1.0);
        assert_eq!(fc.absorb[0], 0.0);
        assert!(matches!(truncate(&ring(), 0), Err(QsdError::EmptyWindow)));
    }

    #[test]
    fn scc_and_period() {
        let adj = vec![vec![1], vec![2], vec![0]];
        assert_eq!(strongly_connected_components(&adj), 1);
        assert_eq!(period(&adj), 3);
        let adj = vec![vec![1], vec![]];
        assert_eq!(strongly_connected_components(&adj), 2);
        let adj = vec![vec![0, 1], vec![0]];
        assert_eq!(period(&adj), 1);
    }
}
