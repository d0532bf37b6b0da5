use std::path::PathBuf;

use drec_autodiff::AutodiffError;
use thiserror::Error;

use crate::runner::checkpoint::CheckpointError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("empty input: {0}")]
    Empty(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("id out of range: {what} {id} (limit {limit})")]
    IdOutOfRange {
        what: &'static str,
        id: usize,
        limit: usize,
    },
    #[error("user {0} has consumed every item; no negative to sample")]
    NoNegatives(usize),
    #[error("non-finite score for user {user}, item {item}")]
    NonFiniteScore { user: usize, item: usize },
    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Self::Parse {
            line,
            message: message.into(),
        }
    }

    /// Whether the failure is a configuration/validation problem rather than
    /// a runtime one.
    pub fn is_validation(&self) -> bool {
        matches!(self, Self::Config(_) | Self::InvalidArgument(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
