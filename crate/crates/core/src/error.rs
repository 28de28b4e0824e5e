use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum WrhtError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("insufficient data: need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("singular covariance matrix; retry with a positive ridge")]
    SingularCovariance,

    #[error("parse error: {0}")]
    Parse(String),

    #[error("instance too large for brute force: {0}")]
    TooLarge(String),
}

pub type Result<T> = std::result::Result<T, WrhtError>;
