//! Shared error type for the lab crates.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    /// A caller violated an operation's precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An operation was invoked in a state that cannot support it
    /// (missing forward cache, missing checkpoint, ...).
    #[error("invalid state: {0}")]
    State(String),

    /// A numeric quantity that must stay finite did not.
    #[error("non-finite value in {context} at step {step}")]
    NonFinite { context: String, step: u64 },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;

impl CoreError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        CoreError::InvalidArgument(msg.into())
    }
}
