use std::path::PathBuf;

/// Failures reading or writing artifact files.
#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {error}")]
    Io {
        path: PathBuf,
        error: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Record {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: bad magic bytes (expected {expected:?})")]
    BadMagic {
        path: PathBuf,
        expected: &'static [u8],
    },
    #[error("{path}: truncated: {message}")]
    Truncated { path: PathBuf, message: String },
    #[error("{path}: integrity check failed: {message}")]
    Integrity { path: PathBuf, message: String },
    #[error("{path}: malformed header: {message}")]
    Header { path: PathBuf, message: String },
}

impl FormatError {
    pub(crate) fn io(path: impl Into<PathBuf>, error: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            error,
        }
    }

    pub(crate) fn record(path: impl Into<PathBuf>, line: usize, message: impl ToString) -> Self {
        Self::Record {
            path: path.into(),
            line,
            message: message.to_string(),
        }
    }

    /// Stable name of the variant, used in diagnostics and tests.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Io { .. } => "io",
            Self::Record { .. } => "record",
            Self::BadMagic { .. } => "bad-magic",
            Self::Truncated { .. } => "truncated",
            Self::Integrity { .. } => "integrity",
            Self::Header { .. } => "header",
        }
    }
}

pub type FormatResult<T> = Result<T, FormatError>;
