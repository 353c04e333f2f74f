use std::path::Path;

use smart_tmle_core::config::ConfigError;
use smart_tmle_core::data::DataError;
use thiserror::Error;

/// Failures at the file boundary.
#[derive(Debug, Error)]
pub enum IoError {
    #[error("{0}")]
    Io(String),
    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("config: {0}")]
    ConfigSyntax(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),
}

impl IoError {
    pub fn file(path: &Path, e: std::io::Error) -> Self {
        IoError::Io(format!("{}: {e}", path.display()))
    }

    /// Whether the problem lies in the content rather than the filesystem.
    pub fn is_validation(&self) -> bool {
        match self {
            IoError::Io(_) => false,
            IoError::Csv(e) => !e.is_io_error(),
            _ => true,
        }
    }
}
