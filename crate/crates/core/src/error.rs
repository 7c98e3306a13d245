use thiserror::Error;

/// Errors raised across the dialogue domain, learners, and harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dialogue act: {0}")]
    InvalidAct(String),
    #[error("invalid user goal: {0}")]
    InvalidGoal(String),
    #[error("slot `{0}` is not a knowledge-base attribute")]
    UnknownSlot(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("replay buffer is empty")]
    EmptyBuffer,
    #[error("dialogue already terminated")]
    DialogueTerminated,
    #[error("budget exceeded: cost {cost} with {remaining} remaining")]
    BudgetExceeded { cost: u64, remaining: u64 },
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
