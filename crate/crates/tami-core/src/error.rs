use thiserror::Error;

/// Crate-wide error type.
///
/// The variants follow the failure domains of the pipeline: configuration
/// problems are caught before any work starts, data problems while reading
/// or validating a dataset, and the remaining variants during computation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("parse error at row {row}: {msg}")]
    Parse { row: usize, msg: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("out-of-order update: {0}")]
    OutOfOrder(String),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
