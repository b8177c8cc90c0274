//! File formats shared by every pipeline stage. Readers validate and
//! reject; they never repair.

mod calibration;
mod checkpoint;
mod mattes;
mod skeletons;
mod volume;

pub use calibration::{read_calibration, write_calibration};
pub use checkpoint::{
    read_autoencoder_checkpoint, read_smoother_checkpoint, write_autoencoder_checkpoint,
    write_smoother_checkpoint,
};
pub use mattes::{read_matte, write_matte};
pub use skeletons::{read_skeletons, write_skeletons, SkeletonRecord, SkeletonStream};
pub use volume::{read_volume, write_volume, VolumeHeader};

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: corrupt header: {message}")]
    CorruptHeader { path: PathBuf, message: String },

    #[error("{path}: payload truncated: expected {expected} bytes, found {found}")]
    TruncatedData {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("{path}: trailing bytes after payload: expected {expected} bytes, found {found}")]
    TrailingData {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("{path}:{line}: schema violation: {message}")]
    SchemaViolation {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{path}: image error: {source}")]
    Image {
        path: PathBuf,
        source: image::ImageError,
    },

    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

impl IoError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            IoError::MissingFile(path)
        } else {
            IoError::Io { path, source }
        }
    }
}
