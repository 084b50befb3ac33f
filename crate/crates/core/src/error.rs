use std::path::Path;

use lungxai_tensor::TensorError;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed artifact {path}: {detail}")]
    Format { path: String, detail: String },
    #[error("unsupported artifact version {found} (expected {expected})")]
    Version { expected: u32, found: u32 },
    #[error("extractor fingerprint mismatch: model expects {expected}, features carry {found}")]
    Fingerprint { expected: String, found: String },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Coarse failure class, used to pick a process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Runtime,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Usage,
            Error::Data(_) | Error::Io { .. } | Error::Format { .. } | Error::Version { .. } | Error::Fingerprint { .. } => {
                ErrorKind::Data
            }
            Error::Tensor(TensorError::Io { .. } | TensorError::MissingTensor(_) | TensorError::StateShape { .. }) => {
                ErrorKind::Data
            }
            _ => ErrorKind::Runtime,
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn format(path: &Path, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.display().to_string(),
            detail: detail.into(),
        }
    }
}

macro_rules! invalid {
    ($($arg:tt)*) => { $crate::error::Error::Invalid(format!($($arg)*)) };
}
pub(crate) use invalid;
