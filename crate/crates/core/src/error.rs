use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AvsrError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl AvsrError {
    /// Stable machine-readable code, used as the CLI error prefix.
    pub fn code(&self) -> &'static str {
        match self {
            AvsrError::Config(_) => "E_CONFIG",
            AvsrError::Dimension(_) => "E_DIMENSION",
            AvsrError::Format(_) => "E_FORMAT",
            AvsrError::Usage(_) => "E_USAGE",
            AvsrError::NonFinite(_) => "E_NONFINITE",
            AvsrError::Io { .. } => "E_IO",
        }
    }

    /// The error text without its kind prefix.
    pub fn message(&self) -> String {
        match self {
            AvsrError::Config(m)
            | AvsrError::Dimension(m)
            | AvsrError::Format(m)
            | AvsrError::Usage(m)
            | AvsrError::NonFinite(m) => m.clone(),
            AvsrError::Io { .. } => self.to_string(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AvsrError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = AvsrError> = std::result::Result<T, E>;

macro_rules! config_err {
    ($($arg:tt)*) => { $crate::error::AvsrError::Config(format!($($arg)*)) };
}
macro_rules! dim_err {
    ($($arg:tt)*) => { $crate::error::AvsrError::Dimension(format!($($arg)*)) };
}
macro_rules! format_err {
    ($($arg:tt)*) => { $crate::error::AvsrError::Format(format!($($arg)*)) };
}
macro_rules! usage_err {
    ($($arg:tt)*) => { $crate::error::AvsrError::Usage(format!($($arg)*)) };
}
pub(crate) use {config_err, dim_err, format_err, usage_err};
