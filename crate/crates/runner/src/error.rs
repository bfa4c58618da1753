use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

/// Failures of a command, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum RunnerError {
    /// The configuration is unreadable as JSON, has unknown or missing keys,
    /// or violates an invariant. The message starts with the field path.
    #[error("config error: {0}")]
    Config(String),
    /// Every sweep point was skipped or had all of its runs rejected.
    #[error("all {0} sweep points failed")]
    AllPointsFailed(usize),
    /// A single market without a usable equilibrium.
    #[error("no equilibrium: {0}")]
    Unsolved(String),
    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    /// Stored results exist but cannot be used.
    #[error("invalid results in {}: {message}", path.display())]
    Results { path: PathBuf, message: String },
}

impl RunnerError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunnerError::Config(_) => 2,
            RunnerError::AllPointsFailed(_) | RunnerError::Unsolved(_) => 3,
            RunnerError::Io { .. } | RunnerError::Results { .. } => 4,
        }
    }

    pub fn io(path: impl AsRef<Path>) -> impl FnOnce(io::Error) -> RunnerError {
        let path = path.as_ref().to_path_buf();
        move |source| RunnerError::Io { path, source }
    }

    pub fn results(path: impl AsRef<Path>, message: impl Into<String>) -> RunnerError {
        RunnerError::Results {
            path: path.as_ref().to_path_buf(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, RunnerError>;
