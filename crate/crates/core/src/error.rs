use thiserror::Error;

/// Failures reported by a [`crate::oracle::ValueOracle`].
#[derive(Debug, Error)]
pub enum OracleError {
    #[error("oracle process failed: {0}")]
    Process(String),
    #[error("oracle protocol violation: {0}")]
    Protocol(String),
    #[error("oracle returned non-finite value {value} for mask {mask}")]
    NonFinite { mask: String, value: f64 },
    #[error("oracle returned {got} values for a batch of {expected}")]
    BatchSize { expected: usize, got: usize },
    #[error("oracle dimension is {oracle}, caller expected {expected}")]
    Dimension { oracle: usize, expected: usize },
    #[error("oracle i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("dimension {dim} exceeds the supported maximum {max}")]
    DimensionTooLarge { dim: usize, max: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("infeasible request: {0}")]
    Infeasible(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidConfig(msg.into()))
}
