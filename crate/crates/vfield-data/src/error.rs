use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("bad shard magic in {0}")]
    BadMagic(PathBuf),

    #[error("unsupported shard version {version} in {path}")]
    Version { path: PathBuf, version: u32 },

    #[error("shard truncated: {0}")]
    Truncated(PathBuf),

    #[error("shard checksum mismatch: {0}")]
    Checksum(PathBuf),

    #[error("malformed record manifest: {0}")]
    Manifest(String),

    #[error("generation stalled for dimension {dimension} record {index}: {attempts} consecutive rejections")]
    Unreachable {
        dimension: usize,
        index: u64,
        attempts: u64,
    },

    #[error("invalid generation config: {0}")]
    BadConfig(String),

    #[error(transparent)]
    Core(#[from] vfield_core::CoreError),

    #[error(transparent)]
    Model(#[from] vfield_model::ModelError),
}

impl DataError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.into(),
            source,
        }
    }
}
