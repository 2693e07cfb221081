use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or window shape disagrees with what the model expects.
    #[error("dimension mismatch on {axis}: expected {expected}, got {actual}")]
    Dimension {
        axis: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    /// Violated calling contract, e.g. backward from a non-scalar node.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numeric divergence at step {step}: {detail}")]
    Divergence { step: usize, detail: String },

    #[error("malformed file {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("ingestion error at {path}:{row}: {detail}")]
    Ingestion {
        path: PathBuf,
        row: usize,
        detail: String,
    },

    #[error("config error in `{field}`: {detail}")]
    Config { field: String, detail: String },

    #[error("data set already normalized")]
    AlreadyNormalized,

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(field: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            detail: detail.into(),
        }
    }

    pub fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Argument(_) | Error::Contract(_) => 2,
            Error::Divergence { .. } => 4,
            _ => 3,
        }
    }
}
