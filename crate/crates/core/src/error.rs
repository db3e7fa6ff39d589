use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse grouping used by the command line to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Format,
    Setup,
    Internal,
}

impl ErrorCategory {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Config => 2,
            ErrorCategory::Format => 3,
            ErrorCategory::Setup => 4,
            ErrorCategory::Internal => 5,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("setup error: {0}")]
    Setup(String),

    #[error("config error on key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("freeze violation: parameter `{0}` changed while frozen")]
    FreezeViolation(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config { .. } => ErrorCategory::Config,
            Error::Format { .. } => ErrorCategory::Format,
            Error::Setup(_)
            | Error::InvalidArgument(_)
            | Error::Domain(_)
            | Error::Index { .. }
            | Error::Capacity(_)
            | Error::Io { .. } => ErrorCategory::Setup,
            Error::Contract(_) | Error::NonFinite(_) | Error::FreezeViolation(_) => {
                ErrorCategory::Internal
            }
        }
    }

    pub(crate) fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
