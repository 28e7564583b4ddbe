use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("transition row ({state}, {action}) sums to {sum}, expected 1")]
    NonStochasticRow { state: usize, action: usize, sum: f64 },

    #[error("policy row for state {state} sums to {sum}, expected 1")]
    NonStochasticPolicy { state: usize, sum: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("reward mismatch between the two MDPs at ({state}, {action})")]
    RewardMismatch { state: usize, action: usize },

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("unstable closed loop: gamma * c^2 = {0} >= 1")]
    UnstableClosedLoop(f64),

    #[error("{what} did not converge within {iterations} iterations")]
    NoConvergence { what: &'static str, iterations: usize },

    #[error("analytic expectation unsupported: {0}")]
    UnsupportedExpectation(String),

    #[error("gradient ascent diverged after {steps} steps (loss norm {norm})")]
    Divergence { steps: usize, norm: f64 },

    #[error("malformed document: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
