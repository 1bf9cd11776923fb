use thiserror::Error;

pub type Result<T, E = NnError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("forward cache does not belong to the current parameters")]
    StaleCache,
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("archive: {0}")]
    Archive(String),
}

impl NnError {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        NnError::Shape(msg.into())
    }
}
