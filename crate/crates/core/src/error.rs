use thiserror::Error;

/// Library-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value in interval {interval}")]
    NumericOverflow { interval: usize },

    #[error("firing-phase domain error: 1 - beta*v = {value} is not positive")]
    FiringDomain { value: f64 },

    #[error("tape domain error in node {node} ({op}): {detail}")]
    TapeDomain { node: usize, op: &'static str, detail: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures caused by numerics rather than bad input or I/O.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NumericOverflow { .. } | Error::FiringDomain { .. } | Error::TapeDomain { .. })
    }

    /// True for failures caused by data files or checkpoints.
    pub fn is_data(&self) -> bool {
        matches!(self, Error::Data(_) | Error::Checkpoint(_) | Error::Io(_) | Error::Json(_) | Error::Csv(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
