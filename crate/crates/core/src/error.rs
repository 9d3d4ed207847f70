use thiserror::Error;

/// Errors raised by the library. The CLI maps each variant onto an exit code.
#[derive(Debug, Error)]
pub enum KwError {
    #[error("validation: {0}")]
    Validation(String),
    #[error("domain: {0}")]
    Domain(String),
    #[error("numerical: {0}")]
    Numerical(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, KwError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(KwError::Validation(msg.into()))
}
