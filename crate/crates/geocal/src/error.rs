use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeocalError {
    #[error(transparent)]
    Core(#[from] geocal_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },
    #[error("unsupported {format} version {version}")]
    UnsupportedVersion { format: &'static str, version: u8 },
    #[error("truncated file: need {expected} bytes, found {found}")]
    TruncatedFile { expected: usize, found: usize },
    #[error("payload length mismatch: header implies {expected} bytes, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("malformed header: {0}")]
    Header(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl GeocalError {
    pub fn io(path: impl AsRef<Path>, source: io::Error) -> Self {
        Self::Io { path: path.as_ref().to_path_buf(), source }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Self::Config(msg.into())
    }

    /// Configuration problems exit with 2, everything else with 1.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T, E = GeocalError> = std::result::Result<T, E>;
