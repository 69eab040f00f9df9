use std::path::PathBuf;

use thiserror::Error;

/// Failure categories surfaced to callers (and mapped to CLI exit codes).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Validation,
    Transport,
    Internal,
}

impl ErrorCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::Validation => "validation",
            ErrorCategory::Transport => "transport",
            ErrorCategory::Internal => "internal",
        }
    }
}

#[derive(Debug, Error)]
pub enum TransportError {
    /// Retryable: 5xx, 429, timeouts, connection resets.
    #[error("transient transport failure: {0}")]
    Transient(String),
    #[error("transport failure: {0}")]
    Fatal(String),
    #[error("mock script has no entry for template `{template}` with prompt digest {digest}")]
    ScriptedMiss { template: String, digest: String },
    #[error("retries exhausted after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: String },
}

impl TransportError {
    pub fn is_transient(&self) -> bool {
        matches!(self, TransportError::Transient(_))
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("duplicate id `{id}` on lines {first_line} and {second_line}")]
    DuplicateId {
        id: String,
        first_line: usize,
        second_line: usize,
    },
    #[error("record `{id}`: {message}")]
    InvalidRecord { id: String, message: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("template `{template}`: {message}")]
    Template { template: String, message: String },
    #[error("missing placeholder `{placeholder}` in template `{template}`")]
    MissingPlaceholder {
        template: String,
        placeholder: String,
    },
    #[error("item {index}: {source}")]
    Indexed {
        index: usize,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("cache file {path} corrupt at byte offset {offset}: {message}")]
    CacheCorrupt {
        path: PathBuf,
        offset: u64,
        message: String,
    },
    #[error("file {path} line {line}: {message}")]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("training diverged for expert {expert} at epoch {epoch}: loss {loss}")]
    Divergence {
        expert: usize,
        epoch: usize,
        loss: f64,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Transport(_) => ErrorCategory::Transport,
            Error::Indexed { source, .. } => source.category(),
            Error::Io { .. } | Error::CacheCorrupt { .. } | Error::Divergence { .. } => {
                ErrorCategory::Internal
            }
            _ => ErrorCategory::Validation,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
