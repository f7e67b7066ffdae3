use std::path::PathBuf;

use thiserror::Error;

use crate::types::Relation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{0} is not a control relation (expected EQ, FWD or REV)")]
    NotControlRelation(Relation),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// A single backend call failed; callers may treat the sample as unscored.
    #[error("backend error: {0}")]
    Backend(String),

    /// The backend cannot be reached at all; long-running loops should abort.
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),

    #[error("class {0} has no examples")]
    EmptyClass(Relation),

    #[error("missing input: {}", .0.display())]
    MissingInput(PathBuf),

    #[error("malformed record at line {line}: {reason}")]
    Malformed { line: usize, reason: String },

    #[error("non-finite loss ({0}); update discarded")]
    NonFiniteLoss(f32),

    #[error("decode failed: {0}")]
    Decode(String),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn is_backend(&self) -> bool {
        matches!(self, Error::Backend(_) | Error::BackendUnavailable(_))
    }
}
