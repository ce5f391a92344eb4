use thiserror::Error;

/// Errors raised by the simulation library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FgleError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("ratio {ratio} does not divide {n}")]
    NonDivisibleRatio { ratio: usize, n: usize },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("quadrature did not converge: relative change {rel_change:.3e} exceeds {tol:.1e}")]
    QuadratureNonConvergence { rel_change: f64, tol: f64 },

    #[error("Cholesky factorization failed even with jitter {jitter:.1e} x max diagonal")]
    CholeskyFailure { jitter: f64 },

    #[error("too many invalid paths: {invalid} of {total}")]
    InvalidPathQuota { invalid: usize, total: usize },

    #[error("degenerate samples: {0}")]
    DegenerateSamples(String),

    #[error("invalid fit input: {0}")]
    InvalidFit(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for FgleError {
    fn from(e: std::io::Error) -> Self {
        FgleError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, FgleError>;
