//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Bad configuration value (dimensions, rates, ratios, unknown fields).
    #[error("config error: {0}")]
    Config(String),

    /// Dataset-level problem: missing files, malformed reports, empty corpora.
    #[error("data error: {0}")]
    Data(String),

    /// An image file exists but cannot be decoded.
    #[error("unreadable image {path}: {reason}")]
    UnreadableImage { path: PathBuf, reason: String },

    /// Tensor/model shape disagreement.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An operation was called before its stated precondition was met,
    /// e.g. cycle training on models that were never pretrained.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Checkpoint container is corrupt or from an unknown version.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
