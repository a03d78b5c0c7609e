use std::path::PathBuf;

/// Failures of the command-line driver, each mapped to a process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Config(String),

    #[error("{0}")]
    Checkpoint(String),

    /// Some items failed but the rest of the run completed.
    #[error("{0}")]
    PartialData(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] edgelab::Error),
}

impl CliError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 1 usage or configuration, 2 partial data failure, 3 numerical failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::PartialData(_) => 2,
            CliError::Core(edgelab::Error::NonFinite(_) | edgelab::Error::NonConvergence { .. }) => 3,
            _ => 1,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
