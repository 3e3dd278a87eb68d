use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, AsdError>;

#[derive(Debug, Error)]
pub enum AsdError {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// Caller violated an API precondition (shape mismatch, missing cache, missing labels).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl AsdError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AsdError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            AsdError::Config(_) | AsdError::Contract(_) => 2,
            AsdError::Numeric(_) => 4,
            _ => 3,
        }
    }
}
