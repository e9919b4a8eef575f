//! Quasi-stationary distributions of Markov chains absorbed at a cemetery
//! state: transform analytics, QSD solvers with residual certificates,
//! time reversal, continuous-time bridges, a model gallery and Monte Carlo
//! validation.

pub mod analytics;
pub mod chain;
pub mod cts;
pub mod error;
pub mod gallery;
pub mod linalg;
pub mod monte_carlo;
pub mod qsd;
pub mod reverse;
pub mod spec;

pub use chain::{ContinuousChain, DiscreteChain, StateId};
pub use error::{QsdError, Result};

#[cfg(feature = "parallel")]
pub(crate) fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    items.iter().map(f).collect()
}
