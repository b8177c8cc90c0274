//! Error types shared by the geometry and capture layers.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    /// Voxel center projects to non-positive camera depth.
    #[error("voxel is behind the camera (projective depth {depth})")]
    BehindCamera { depth: f64 },

    #[error("occupancy fusion requires at least one per-view probability")]
    EmptyViewList,

    #[error("unsupported upsampling factor {0}; supported factors are 1, 2, 4")]
    UnsupportedFactor(usize),

    #[error("grid resolutions differ: {a:?} vs {b:?}")]
    ResolutionMismatch { a: [usize; 3], b: [usize; 3] },

    #[error("value buffer has {got} entries, resolution requires {expected}")]
    ValueCount { expected: usize, got: usize },

    #[error("matte dimensions {matte:?} do not match camera image size {image:?}")]
    MatteSizeMismatch { matte: [usize; 2], image: [usize; 2] },

    #[error("camera rotation is not a proper rotation matrix: {0}")]
    BadRotation(String),

    #[error("downsampling factor {factor} does not divide resolution {resolution:?}")]
    IndivisibleResolution { factor: usize, resolution: [usize; 3] },
}
