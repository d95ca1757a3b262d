use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Bad magic bytes, unsupported version or malformed header fields.
    #[error("format error: {0}")]
    Format(String),

    /// Declared dimensions disagree with the payload that follows them.
    #[error("corrupt data: {0}")]
    Corrupt(String),

    /// A non-finite value in a tensor payload.
    #[error("validation error: non-finite value in layer {layer} at flat index {index}")]
    NonFinite { layer: usize, index: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("embedding bank is empty")]
    EmptyBank,

    /// The metric has no meaning for the given data (e.g. a single class).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("image error for {path}: {message}")]
    Image { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
