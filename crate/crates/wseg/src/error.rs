use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the segmentation toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A tensor or map had a different shape than the operation requires.
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: String,
        expected: String,
        got: String,
    },

    /// A non-finite value crossed a layer or optimizer boundary.
    #[error("non-finite value in {context} at index {index}")]
    NonFinite { context: String, index: usize },

    /// `backward` was called without a recorded forward pass.
    #[error("backward called before forward on this workspace")]
    BackwardBeforeForward,

    /// Invalid user-facing configuration (bad parameter range, impossible split, ...).
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A required file or stage output is absent.
    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
}

impl Error {
    pub(crate) fn shape(context: impl Into<String>, expected: impl ToString, got: impl ToString) -> Self {
        Error::ShapeMismatch {
            context: context.into(),
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
