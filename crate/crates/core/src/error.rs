use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the engine, the search or the file formats.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("invalid template: {0}")]
    Template(String),
    #[error("derivation failed: output unreachable, dead nodes: {}", .dead.join(", "))]
    Derivation { dead: Vec<String> },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Template(_) | Error::Io { .. } => 2,
            Error::Format(_) => 3,
            Error::Numeric(_) => 4,
            Error::Dimension { .. } | Error::Contract(_) | Error::Derivation { .. } => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
