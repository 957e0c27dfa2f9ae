use thiserror::Error;

/// Errors raised by the forecasting core.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Input data is malformed, empty or inconsistent.
    #[error("data error: {0}")]
    Data(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    /// A numerical routine failed (non-finite value, failed factorization).
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("non-finite training score at stage {stage}")]
    NonFiniteScore { stage: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
