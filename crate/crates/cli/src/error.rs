use std::path::PathBuf;

use qst_core::Error as CoreError;
use qst_nn::NnError;
use qst_train::TrainError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error("{} already exists; pass --force to overwrite", .0.display())]
    OutputExists(PathBuf),
    #[error("{0}")]
    GradCheckFailed(String),
    #[error("{0}")]
    Shape(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Exit status and short name of an error class; every class has its own
/// nonzero status.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Config,
    Io,
    Format,
    Checksum,
    Shape,
    Numerical,
    NonFiniteLoss,
    OutputExists,
    GradCheckFailed,
}

impl ErrorKind {
    pub fn code(self) -> u8 {
        match self {
            ErrorKind::Usage => 2,
            ErrorKind::Config => 3,
            ErrorKind::Io => 4,
            ErrorKind::Format => 5,
            ErrorKind::Checksum => 6,
            ErrorKind::Shape => 7,
            ErrorKind::Numerical => 8,
            ErrorKind::NonFiniteLoss => 9,
            ErrorKind::OutputExists => 10,
            ErrorKind::GradCheckFailed => 11,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ErrorKind::Usage => "usage",
            ErrorKind::Config => "config",
            ErrorKind::Io => "io",
            ErrorKind::Format => "format",
            ErrorKind::Checksum => "checksum",
            ErrorKind::Shape => "shape",
            ErrorKind::Numerical => "numerical",
            ErrorKind::NonFiniteLoss => "non-finite-loss",
            ErrorKind::OutputExists => "output-exists",
            ErrorKind::GradCheckFailed => "gradcheck-failed",
        }
    }
}

fn core_kind(e: &CoreError) -> ErrorKind {
    match e {
        CoreError::ZeroTrace(_)
        | CoreError::NotPositive(_)
        | CoreError::NotHermitian(_)
        | CoreError::InvalidTrace(_)
        | CoreError::NotPsd(_)
        | CoreError::SingularGram(_)
        | CoreError::InvalidProbability(_)
        | CoreError::RankDeficient(_) => ErrorKind::Numerical,
        CoreError::DimensionMismatch { .. } | CoreError::ShapeMismatch(_) => ErrorKind::Shape,
        CoreError::UnsupportedSize(_) | CoreError::InvalidInput(_) => ErrorKind::Config,
        CoreError::Format(_) | CoreError::Json(_) => ErrorKind::Format,
        CoreError::Checksum(_) => ErrorKind::Checksum,
        CoreError::Io(_) => ErrorKind::Io,
    }
}

fn nn_kind(e: &NnError) -> ErrorKind {
    match e {
        NnError::ShapeMismatch(_) => ErrorKind::Shape,
        NnError::InvalidConfig(_) => ErrorKind::Config,
        NnError::DegenerateTarget(_) => ErrorKind::Numerical,
        NnError::Format(_) | NnError::Json(_) => ErrorKind::Format,
        NnError::Checksum(_) => ErrorKind::Checksum,
        NnError::Core(c) => core_kind(c),
        NnError::Io(_) => ErrorKind::Io,
    }
}

impl CliError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            CliError::Usage(_) => ErrorKind::Usage,
            CliError::Config(_) => ErrorKind::Config,
            CliError::OutputExists(_) => ErrorKind::OutputExists,
            CliError::GradCheckFailed(_) => ErrorKind::GradCheckFailed,
            CliError::Shape(_) => ErrorKind::Shape,
            CliError::Train(t) => match t {
                TrainError::Core(c) => core_kind(c),
                TrainError::Nn(n) => nn_kind(n),
                TrainError::DimensionMismatch(_) => ErrorKind::Shape,
                TrainError::InvalidConfig(_) => ErrorKind::Config,
                TrainError::NonFiniteLoss { .. } => ErrorKind::NonFiniteLoss,
                TrainError::Io(_) => ErrorKind::Io,
                TrainError::Json(_) | TrainError::Csv(_) => ErrorKind::Format,
            },
            CliError::Nn(n) => nn_kind(n),
            CliError::Core(c) => core_kind(c),
            CliError::Io(_) => ErrorKind::Io,
            CliError::Csv(_) => ErrorKind::Format,
        }
    }

    /// The machine-readable final stderr line.
    pub fn error_line(&self) -> String {
        let kind = self.kind();
        let detail = self.to_string().replace(['\n', '\r'], " ");
        format!("ERROR {} {}: {}", kind.code(), kind.name(), detail.trim())
    }
}
