use std::path::Path;

use cdcma_core::CoreError;
use cdcma_nn::NnError;
use thiserror::Error;

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    /// Training or evaluation produced non-finite values or broke an
    /// internal contract.
    #[error("runtime divergence: {0}")]
    Divergence(String),
    #[error("I/O error: {0}")]
    Io(String),
}

impl HarnessError {
    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        HarnessError::Io(format!("{}: {e}", path.display()))
    }

    /// Process exit code: 1 config, 2 divergence, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 1,
            HarnessError::Divergence(_) => 2,
            HarnessError::Io(_) => 3,
        }
    }
}

impl From<CoreError> for HarnessError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Config(m) => HarnessError::Config(m),
            CoreError::Decode(m) => HarnessError::Io(format!("corrupt data: {m}")),
            CoreError::Nn(NnError::Archive(m)) => HarnessError::Io(format!("corrupt archive: {m}")),
            other => HarnessError::Divergence(other.to_string()),
        }
    }
}

impl From<NnError> for HarnessError {
    fn from(e: NnError) -> Self {
        CoreError::from(e).into()
    }
}
