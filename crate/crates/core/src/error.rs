use thiserror::Error;

/// Errors raised by the library layer.
#[derive(Debug, Error)]
pub enum UqError {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: String,
        got: String,
    },
    #[error("non-finite value {value} in {context}")]
    NonFinite { context: &'static str, value: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-positive variance {value} at index {index}")]
    NonPositiveVariance { index: usize, value: f64 },
    #[error("cholesky factorization failed (largest jitter tried: {jitter:e})")]
    Cholesky { jitter: f64 },
    #[error("divergence at step {step}: {reason}")]
    Divergence { step: usize, reason: String },
    #[error("solver did not converge: {0}")]
    Solver(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, UqError>;

pub(crate) fn shape_err(context: &'static str, expected: impl ToString, got: impl ToString) -> UqError {
    UqError::Shape {
        context,
        expected: expected.to_string(),
        got: got.to_string(),
    }
}
