use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: String,
        expected: String,
        got: String,
    },

    #[error("degenerate vector: {0}")]
    Degenerate(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("validation failed at record {index}: {reason}")]
    Validation { index: usize, reason: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("metric undefined: {0}")]
    MetricUndefined(String),

    #[error("evaluation produced a non-finite value: {0}")]
    Evaluation(String),

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn dim(what: impl Into<String>, expected: impl ToString, got: impl ToString) -> Self {
        Error::Dimension {
            what: what.into(),
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
