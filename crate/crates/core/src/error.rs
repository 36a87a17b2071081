use alloc::string::String;

/// Errors raised by the reduction, its problems, and its solvers.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("context coordinate {coord} = {value} lies outside [{lower}, {upper}]")]
    DomainViolation {
        coord: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("empty sample set: {0}")]
    EmptySamples(&'static str),

    #[error("rank deficient: {samples} samples cannot determine {features} features")]
    RankDeficient { samples: usize, features: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("{stage} diverged at step {step}: norm {norm:e} exceeds guard (step size {step_size})")]
    Diverged {
        stage: &'static str,
        step: usize,
        step_size: f64,
        norm: f64,
    },

    #[error("no convergence after {iterations} iterations (gradient norm {grad_norm:e})")]
    NotConverged { iterations: usize, grad_norm: f64 },

    #[error("ill-conditioned system: smallest eigenvalue {lambda_min:e}")]
    IllConditioned { lambda_min: f64 },

    #[error("dense oracle refused: size {size} exceeds limit {limit}")]
    TooLarge { size: usize, limit: usize },
}

pub type Result<T> = core::result::Result<T, Error>;
