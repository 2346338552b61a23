use thiserror::Error;

/// Errors produced by the core pipeline.
#[derive(Error, Debug)]
pub enum CoreError {
    #[error("empty corpus")]
    EmptyCorpus,

    #[error("ambiguous title: {0:?}")]
    AmbiguousTitle(String),

    #[error("duplicate document id: {0:?}")]
    DuplicateId(String),

    #[error("unknown id: {0:?}")]
    UnknownId(String),

    #[error("self-citation edge: {0:?}")]
    SelfCitation(String),

    #[error("invalid fraction: {0}")]
    InvalidFraction(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("no negatives available for row {0}")]
    NoNegatives(usize),

    #[error("empty train set")]
    EmptyTrainSet,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },

    #[error("no eligible validation nodes")]
    NoEligibleNodes,

    #[error("relevant set is empty")]
    EmptyRelevant,

    #[error("model has no learned-residual gate")]
    NoGate,

    #[error("malformed data: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
