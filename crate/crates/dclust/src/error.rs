use std::path::{Path, PathBuf};

use thiserror::Error;

/// Everything a command can fail with, grouped by process exit code.
#[derive(Debug, Error)]
pub enum AppError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },
    #[error(transparent)]
    Core(#[from] dclust_core::Error),
}

pub type Result<T> = std::result::Result<T, AppError>;

impl AppError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }

    pub fn format(path: &Path, detail: impl Into<String>) -> Self {
        Self::Format { path: path.to_path_buf(), detail: detail.into() }
    }

    /// 1 usage/configuration, 2 data or format, 3 numeric divergence.
    pub fn exit_code(&self) -> i32 {
        use dclust_core::Error as E;
        match self {
            Self::Usage(_) | Self::Core(E::Config(_)) => 1,
            Self::Core(E::Divergence(_) | E::Numeric { .. }) => 3,
            _ => 2,
        }
    }
}
