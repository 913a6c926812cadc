//! Pipeline commands behind the `gsn` binary.

pub mod commands;
pub mod config;

use std::path::{Path, PathBuf};

use gsn::numcore::CheckpointError;
use thiserror::Error;

pub use config::{Config, Split};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("empty corpus: {0}")]
    EmptyCorpus(String),
    #[error("checkpoint version error: {0}")]
    CheckpointVersion(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 0 success, 1 usage, 2 data, 3 numerical.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Numerical(_) => 3,
            CliError::Data(_)
            | CliError::EmptyCorpus(_)
            | CliError::CheckpointVersion(_)
            | CliError::Io { .. } => 2,
        }
    }
}

impl From<gsn::Error> for CliError {
    fn from(e: gsn::Error) -> Self {
        if e.is_numerical() {
            return CliError::Numerical(e.to_string());
        }
        match e {
            gsn::Error::Config(msg) => CliError::Usage(msg),
            gsn::Error::Checkpoint(
                c @ (CheckpointError::Version { .. } | CheckpointError::Mismatch(_)),
            ) => CliError::CheckpointVersion(c.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}
