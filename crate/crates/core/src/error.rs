use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("state error: {0}")]
    State(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// Division by a vanishing rotation component; the caller should resample the slope angle.
    #[error("singular normal vector: {0}")]
    Singularity(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("weight file format error: {0}")]
    Format(String),

    #[error("ingestion error at {path}: {reason}")]
    Ingest { path: PathBuf, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFinite(_) => 2,
            _ => 1,
        }
    }
}
