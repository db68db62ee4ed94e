use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Every entry of a score vector was masked out.
    #[error("empty support: every entry is masked")]
    EmptySupport,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("label id {id} out of range (valid ids are 0..{limit})")]
    LabelOutOfRange { id: usize, limit: usize },

    #[error("unknown label `{0}`")]
    UnknownLabel(String),

    #[error("invalid label sequence: {0}")]
    InvalidSequence(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("diverged: {0}")]
    Diverged(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),

    #[error("id mismatch: {0}")]
    IdMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
