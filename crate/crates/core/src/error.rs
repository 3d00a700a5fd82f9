use thiserror::Error;

#[derive(Debug, Error)]
pub enum QarError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("negative frequency {0} passed to a spectral function")]
    NegativeFrequency(f64),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("eigensolver failure: {0}")]
    Eigen(String),

    #[error("steady state is not unique ({nullity} null directions)")]
    NonUniqueSteadyState { nullity: usize },

    #[error("steady-state solver failed: {0}")]
    SolverFailure(String),

    #[error("RC truncation too small: lowest levels shift by {shift:.3e} between M={m} and M={}", m + 1)]
    TruncationTooSmall { m: usize, shift: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, QarError>;
