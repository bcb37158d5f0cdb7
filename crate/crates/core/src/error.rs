use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An input violated an operation's precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {message}")]
    Image { path: PathBuf, message: String },

    /// Dataset annotation or image problems, tagged with the offending frame.
    #[error("dataset error (frame {frame}): {message}")]
    Dataset { frame: String, message: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("scene generation failed: {0}")]
    Synth(String),

    #[error("JSON error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dataset(frame: impl ToString, message: impl Into<String>) -> Self {
        Error::Dataset {
            frame: frame.to_string(),
            message: message.into(),
        }
    }
}
