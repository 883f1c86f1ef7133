use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("truncation error: |D| = {value} exceeds K - 1 = {limit}")]
    Truncation { value: f64, limit: i64 },

    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("solver did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("input refused: {0}")]
    Refused(String),

    #[error("bracket [{lo}, {hi}] does not straddle the root (values {value_lo:e}, {value_hi:e})")]
    Bracket {
        lo: f64,
        hi: f64,
        value_lo: f64,
        value_hi: f64,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
