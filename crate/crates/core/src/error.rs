use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("zero trace: cannot normalize (trace {0:e})")]
    ZeroTrace(f64),

    #[error("matrix is not positive definite (pivot {0:e})")]
    NotPositive(f64),

    #[error("not Hermitian (max deviation {0:e})")]
    NotHermitian(f64),

    #[error("trace is not 1 (got {0})")]
    InvalidTrace(f64),

    #[error("not positive semi-definite (min eigenvalue {0:e})")]
    NotPsd(f64),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("unsupported size: {0}")]
    UnsupportedSize(String),

    #[error("singular Gram matrix (min eigenvalue {0:e})")]
    SingularGram(f64),

    #[error("probability out of range: {0}")]
    InvalidProbability(f64),

    #[error("measurement set is not informationally complete (relative min eigenvalue {0:e})")]
    RankDeficient(f64),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("checksum mismatch in {0}")]
    Checksum(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
