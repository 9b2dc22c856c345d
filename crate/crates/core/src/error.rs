use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    /// A record in a line-oriented input file is malformed. `line` is 1-based.
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("no embedding table for language(s): {}", .languages.join(", "))]
    MissingTable { languages: Vec<String> },

    /// A statistic is mathematically undefined for the given input.
    #[error("undefined: {0}")]
    Undefined(String),

    /// An internal consistency check failed. This indicates a bug, not bad input.
    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("pair {pair_id}: {stage} failed: {source}")]
    Stage {
        pair_id: String,
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

/// Broad failure category, used to pick a process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Internal,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Usage => 1,
            ErrorKind::Data => 2,
            ErrorKind::Internal => 3,
        }
    }
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn schema(line: usize, message: impl Into<String>) -> Self {
        Error::Schema {
            line,
            message: message.into(),
        }
    }

    pub fn at_stage(self, pair_id: &str, stage: &'static str) -> Self {
        Error::Stage {
            pair_id: pair_id.to_owned(),
            stage,
            source: Box::new(self),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => ErrorKind::Usage,
            Error::Invariant(_) => ErrorKind::Internal,
            Error::Stage { source, .. } => source.kind(),
            Error::Io { .. }
            | Error::Schema { .. }
            | Error::Shape(_)
            | Error::MissingTable { .. }
            | Error::Undefined(_) => ErrorKind::Data,
        }
    }
}
