use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("local training diverged at epoch {epoch}")]
    DivergedTraining { epoch: usize },

    #[error("broadcast predictor diverged (non-finite loss)")]
    DivergedPredictor,

    #[error("unknown client {0}")]
    UnknownClient(usize),

    #[error("client {0} is not assigned to any cluster")]
    Unassigned(usize),

    /// A refinement action referenced a cluster that no longer exists.
    /// Recompute the actions against the current state and retry.
    #[error("stale refinement action: {0}")]
    StaleAction(String),

    /// `line` is 1-based; 0 when the key is absent from the file.
    #[error("config error{}: key `{key}`: {message}", at_line(*line))]
    Config {
        key: String,
        line: usize,
        message: String,
    },

    #[error("schema mismatch in {path}: {message}")]
    Schema { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn at_line(line: usize) -> String {
    if line == 0 { String::new() } else { format!(" at line {line}") }
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Whether retrying the operation against fresh state can succeed.
    pub fn is_retriable(&self) -> bool {
        matches!(self, Error::StaleAction(_))
    }
}
