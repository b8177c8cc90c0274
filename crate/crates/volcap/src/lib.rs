//! Volumetric human capture toolkit.
//!
//! Reconstructs coarse probabilistic visual hulls (PVH) from calibrated
//! multi-camera soft mattes, then jointly upscales the volume (1x/2x/4x) and
//! regresses 3D skeletal joint positions with a dual-loss symmetric 3D
//! convolutional autoencoder. An LSTM smoother enforces temporal consistency
//! on the per-frame joint estimates. Everything trains and verifies
//! end-to-end on synthetic scenes at desk scale.
//!
//! The `book/` directory at the repository root walks through each stage;
//! its code snippets are compiled as doc-tests below.

pub mod camera;
pub mod error;
pub mod grid;
pub mod eval;
pub mod hull;
pub mod io;
pub mod lstm;
pub mod network;
pub mod optim;
pub mod resample;
pub mod skeleton;
pub mod synth;
pub mod tensor;

pub use camera::{project_voxel, sample_matte, CameraIntrinsics, CameraPose, CameraView, SoftMatte};
pub use grid::{Bbox, VoxelGrid};
pub use hull::{build_pvh, fuse_occupancy, FusionMode};
pub use resample::{box_downsample, rotate_volume, tricubic_upsample};
pub use skeleton::{rotate_skeleton, SkeletonFrame};
