//! Crate wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or parameter vector shapes do not line up.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A precondition on an argument value was violated.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An operation that requires at least one element received none.
    #[error("empty input: {0}")]
    EmptyInput(String),

    /// Config field failed validation; `field` is the dotted path.
    #[error("config error at `{field}`: {message}")]
    Config { field: String, message: String },

    /// Malformed IDX payload (bad magic, truncated body, label overflow).
    #[error("idx format error: {0}")]
    Idx(String),

    /// Malformed or inconsistent checkpoint file.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
