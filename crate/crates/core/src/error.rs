use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point is behind the camera (z = {0})")]
    BehindCamera(f64),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("format error in {field}: {message}")]
    Format { field: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("scene generation error: {0}")]
    Generation(String),

    #[error("degenerate problem: {0}")]
    Degenerate(String),

    #[error("non-finite cost: {0}")]
    NonFinite(String),

    #[error("completion error: {0}")]
    Completion(String),

    #[error("tracking lost: {0}")]
    TrackingLost(String),

    #[error("keyframe rejected: {0}")]
    KeyframeRejected(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("precondition violated: {0}")]
    Precondition(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn format(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
