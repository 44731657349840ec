use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("degenerate target: norm {0:e} is too small")]
    DegenerateTarget(f64),
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error("checkpoint checksum: {0}")]
    Checksum(String),
    #[error(transparent)]
    Core(#[from] qst_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(NnError::ShapeMismatch(msg.into()))
}
