//! Error type shared across the crate.

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid vocab: {0}")]
    InvalidVocab(String),

    #[error("invalid sequence: {0}")]
    InvalidSequence(String),

    #[error("empty completion")]
    EmptyCompletion,

    #[error("non-finite parameters: {0}")]
    NonFiniteParams(String),

    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),

    #[error("invalid plan: {0}")]
    InvalidPlan(String),

    #[error("invalid batch: {0}")]
    InvalidBatch(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error("evaluation: {0}")]
    Eval(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
