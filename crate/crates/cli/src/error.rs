use std::io;
use std::path::PathBuf;

use eqprop::EqPropError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("config line {line}: {message}")]
    ConfigLine { line: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{context}: {source}")]
    Core {
        context: String,
        #[source]
        source: EqPropError,
    },

    #[error("{0} check(s) failed")]
    ChecksFailed(usize),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::ChecksFailed(_) => 1,
            CliError::Usage(_) | CliError::ConfigLine { .. } => 2,
            CliError::Io { .. } => 3,
            CliError::Core { source, .. } => match source {
                e if e.is_numeric() => 4,
                EqPropError::Io(_)
                | EqPropError::Format { .. }
                | EqPropError::Truncated(_)
                | EqPropError::Data { .. } => 3,
                _ => 2,
            },
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

/// Attaches a description of what was being done to core errors.
pub trait Context<T> {
    fn context(self, what: impl FnOnce() -> String) -> CliResult<T>;
}

impl<T> Context<T> for eqprop::Result<T> {
    fn context(self, what: impl FnOnce() -> String) -> CliResult<T> {
        self.map_err(|source| CliError::Core {
            context: what(),
            source,
        })
    }
}
