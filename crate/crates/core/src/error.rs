//! Error type shared by every module of the crate.

use thiserror::Error;

/// Errors raised by simulation, learning, allocation and backtesting routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("numerical degeneracy: {0}")]
    Degenerate(String),

    #[error("degenerate action: portfolio sums to {sum:e}, normalization undefined")]
    DegenerateAction { sum: f64 },

    #[error("numerical overflow at iteration {iteration}: {detail}")]
    Overflow { iteration: usize, detail: String },

    #[error("solver did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("infeasible problem: {0}")]
    Infeasible(String),

    #[error("insufficient data: need {required}, got {actual}")]
    InsufficientData { required: usize, actual: usize },

    #[error("undefined metric: {0}")]
    UndefinedMetric(&'static str),

    #[error("unknown strategy `{0}`")]
    UnknownStrategy(String),

    #[error("missing side data for `{strategy}`: {what}")]
    MissingSideData { strategy: String, what: String },

    #[error("panel error at row {row}, column {column}: {detail}")]
    Panel {
        row: usize,
        column: usize,
        detail: String,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn ensure_finite(value: f64, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::InvalidState(format!("{what} is not finite ({value})")))
    }
}
