use thiserror::Error;

use crate::chain::StateId;

pub type Result<T> = std::result::Result<T, QsdError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QsdError {
    #[error("row of state {state} sums to {sum} (expected 1)")]
    RowSum { state: StateId, sum: f64 },
    #[error("negative or non-finite entry {value} in row of state {state}")]
    BadEntry { state: StateId, value: f64 },
    #[error("no state in the checked window can reach absorption")]
    NoAbsorption,
    #[error("transitions restricted to the window are not irreducible ({classes} communicating classes)")]
    Reducible { classes: usize },
    #[error("window contains no states")]
    EmptyWindow,
    #[error("state {0} is not in the chain's state space")]
    UnknownState(StateId),
    #[error("linear system is singular at lambda = {lambda}")]
    SingularSystem { lambda: f64 },
    #[error("window schedule exhausted without convergence (last relative change {last_change:e})")]
    ScheduleExhausted { last_change: f64 },
    #[error("power iteration did not converge within {iterations} iterations")]
    PowerIterationStall { iterations: usize },
    #[error("could not bracket the critical parameter: {0}")]
    Bracket(String),
    #[error("Green kernel diverges at lambda = {lambda}")]
    DivergentGreen { lambda: f64 },
    #[error("regime mismatch: {0}")]
    RegimeMismatch(String),
    #[error("stopped moment generating function does not converge at state {state}")]
    NonconvergentStoppedMgf { state: StateId },
    #[error("Martin kernel sequence does not converge (last change {last_change:e})")]
    NonconvergentKernel { last_change: f64 },
    #[error("candidate measure has zero weight at state {0}")]
    ZeroWeight(StateId),
    #[error("reverse chain is not positive recurrent (time-weighted return transform grows to {value:e})")]
    NotPositiveRecurrent { value: f64 },
    #[error("uniformization needs {terms} terms at rate {rate}, over the limit")]
    RateOverflow { rate: f64, terms: usize },
    #[error("quadrature did not reach tolerance after {panels} panels")]
    Quadrature { panels: usize },
    #[error("lambda = {lambda} is not below the total rate {rate} at state {state}")]
    RatePole { state: StateId, lambda: f64, rate: f64 },
    #[error("no quasi-stationary distribution at lambda = {lambda}: {reason}")]
    NoQsdAtLambda { lambda: f64, reason: String },
    #[error("moment generating function of the jump law has zero radius of convergence")]
    Moment,
    #[error("parameter out of range: {0}")]
    ParamRange(String),
    #[error("offspring mean {mean} is not below 1")]
    Supercritical { mean: f64 },
    #[error("chain is not skip-free: {0}")]
    NotSkipFree(String),
    #[error("invalid chain specification: {0}")]
    Spec(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
}
