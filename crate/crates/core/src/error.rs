use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid time series: {0}")]
    InvalidSeries(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("matrix is not anti-Hermitian (max |A + A*| = {0:e})")]
    NotAntiHermitian(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("development states were not kept; call develop with keep_states = true")]
    MissingStates,

    #[error("tape has already been consumed by a backward pass")]
    TapeConsumed,

    #[error("csv error at row {row}, column {column}: {message}")]
    Csv {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerics (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
