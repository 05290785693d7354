use std::io;
use std::path::{Path, PathBuf};

/// Errors raised by the driver, grouped by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error("{path}:{line}: {msg}")]
    Config { path: String, line: usize, msg: String },
    #[error(transparent)]
    Core(#[from] sfm_core::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("{}: {msg}", path.display())]
    Corrupt { path: PathBuf, msg: String },
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

impl CliError {
    /// 2 for invalid input or configuration, 3 when the optimizer hits a
    /// non-finite loss, 4 for anything unreadable on disk.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) | CliError::Config { .. } => 2,
            CliError::Core(sfm_core::Error::NonFiniteLoss { .. }) => 3,
            CliError::Core(_) => 2,
            CliError::Io { .. } | CliError::Parse { .. } | CliError::Corrupt { .. } => 4,
        }
    }

    pub fn io(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
        move |source| CliError::Io { path: path.to_path_buf(), source }
    }

    pub fn corrupt(path: &Path, msg: impl Into<String>) -> CliError {
        CliError::Corrupt { path: path.to_path_buf(), msg: msg.into() }
    }

    pub fn parse(path: &Path, line: usize, msg: impl Into<String>) -> CliError {
        CliError::Parse { path: path.display().to_string(), line, msg: msg.into() }
    }
}
