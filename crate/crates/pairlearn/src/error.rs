use thiserror::Error;

/// Errors reported by the pairwise-learning library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("input must contain at least one {0}")]
    Empty(&'static str),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },

    #[error("weights must be nonnegative and sum to 1 (deviation {deviation:e})")]
    BadWeights { deviation: f64 },

    #[error("invalid parameter {name} = {value}")]
    InvalidParameter { name: &'static str, value: f64 },

    #[error("models use different kernels")]
    KernelMismatch,

    #[error("loss {loss} does not support {operation}")]
    UnsupportedLoss { loss: String, operation: &'static str },

    #[error("numeric overflow evaluating loss at pair ({i}, {j})")]
    NumericOverflow { i: usize, j: usize },

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error(
        "no convergence: gradient residual {residual:e} above tolerance {tol:e} \
         after {iters} iterations"
    )]
    NoConvergence { tol: f64, iters: usize, residual: f64 },

    #[error("dataset size {n} exceeds the supported cap of {cap} points")]
    SizeCap { n: usize, cap: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
