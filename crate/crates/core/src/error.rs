use cdcma_nn::NnError;
use thiserror::Error;

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CoreError {
    #[error("configuration error: {0}")]
    Config(String),
    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("state space too large: {0}")]
    Size(String),
    #[error("decode error: {0}")]
    Decode(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

impl CoreError {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        CoreError::Contract(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        CoreError::Config(msg.into())
    }
}
