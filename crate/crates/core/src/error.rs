use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("need at least {need} samples, got {got}")]
    Capacity { need: usize, got: usize },

    #[error("configuration error at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite value for sample `{sample}`: {what}")]
    Numeric { sample: String, what: String },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("test sample `{0}` leaked into a training structure")]
    Leakage(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("replay error: {0}")]
    Replay(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by user input rather than a runtime failure.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
