use thiserror::Error;

use crate::labels::Attribute;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("gradient error: {0}")]
    Gradient(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("prompt is missing a keyword for {0}")]
    MissingAttribute(Attribute),

    #[error("prompt has conflicting keywords for {attribute}: {levels:?}")]
    ConflictingAttribute {
        attribute: Attribute,
        levels: Vec<String>,
    },

    #[error("no speech content")]
    NoSpeech,

    #[error("annotator failure: {0}")]
    Annotator(String),

    #[error("unknown group {group:?} for {attribute}")]
    UnknownGroup { attribute: Attribute, group: String },

    #[error("no active round")]
    NoActiveRound,

    #[error("item {0:?} is not in the active round")]
    UnknownItem(String),

    #[error("quorum incomplete: {missing} votes outstanding")]
    Quorum { missing: usize },

    #[error("session is finalized")]
    Finalized,

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Wav(#[from] hound::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    /// True for errors caused by bad input data rather than a bug or I/O.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::Io(_) | Error::Gradient(_) | Error::NonFinite(_))
    }
}
