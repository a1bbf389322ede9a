use std::path::{Path, PathBuf};

use crate::checkpoint::CheckpointError;

/// Everything a subcommand can fail with. Each variant maps to a fixed exit
/// code: 2 for configuration problems, 3 for divergence, 1 otherwise.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("bad config: {0}")]
    Config(String),
    #[error("training diverged: {0}")]
    Diverged(svlb_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Checkpoint {
        path: PathBuf,
        #[source]
        source: CheckpointError,
    },
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Core(svlb_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Diverged(_) => 3,
            _ => 1,
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Reclassifies a core error raised while checking user settings.
    pub fn config(e: svlb_core::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<svlb_core::Error> for CliError {
    fn from(e: svlb_core::Error) -> Self {
        match e {
            svlb_core::Error::Diverged { .. } | svlb_core::Error::NonFinite(_) => CliError::Diverged(e),
            e => CliError::Core(e),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
