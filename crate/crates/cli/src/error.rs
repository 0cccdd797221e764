use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] robust_forward::Error),

    #[error("config: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    /// 0 success, 2 condition check, 3 non-convergence, 4 I/O, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        use robust_forward::Error as E;
        match self {
            CliError::Core(E::ConditionViolated { .. }) => 2,
            CliError::Core(E::NoConvergence { .. }) => 3,
            CliError::Core(E::Io(_)) | CliError::Io { .. } => 4,
            CliError::Core(E::Csv(e)) | CliError::Csv(e) if e.is_io_error() => 4,
            _ => 1,
        }
    }
}
