use thiserror::Error;

use crate::corpus::CorpusError;
use crate::metrics::MetricsError;
use crate::numcore::{CheckpointError, NumError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("token id {id} outside vocabulary of size {size}")]
    Vocab { id: u32, size: usize },
    #[error("utterance has no tokens")]
    EmptyUtterance,
    #[error("attention over an empty utterance")]
    EmptyAttendee,
    #[error("empty target response")]
    EmptyTarget,
    #[error("target utterance has no parent to respond to")]
    NoTargetParent,
    #[error(transparent)]
    Num(#[from] NumError),
}

/// Top-level error for pipeline operations.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Model(ModelError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<NumError> for Error {
    fn from(e: NumError) -> Self {
        match e {
            NumError::Numerical(msg) => Error::Numerical(msg),
            other => Error::Model(ModelError::Num(other)),
        }
    }
}

impl From<ModelError> for Error {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Num(n) => n.into(),
            other => Error::Model(other),
        }
    }
}

impl Error {
    /// True for NaN/Inf failures, wherever they surfaced.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Numerical(_) | Error::Model(ModelError::Num(NumError::Numerical(_)))
        )
    }
}
