use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by every fallible operation in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes disagree on one or more axes.
    #[error("{op}: dimension mismatch: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// A structural setting cannot be realized (bad groups, stride, widths...).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Input data violates a value-level contract (non-binary mask, mismatched pair...).
    #[error("validation failed: {0}")]
    Validation(String),

    /// The API was called in a way its contract forbids.
    #[error("usage error: {0}")]
    Usage(String),

    /// A dataset directory is inconsistent.
    #[error("manifest error: {0}")]
    Manifest(String),

    /// A file could not be decoded.
    #[error("format error: {0}")]
    Format(String),

    /// A checkpoint does not fit the model it is being loaded into.
    #[error("checkpoint incompatible: {0}")]
    Compatibility(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension { op, detail: detail.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
