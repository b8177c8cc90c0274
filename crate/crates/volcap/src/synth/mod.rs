//! Deterministic synthetic multi-view capture: articulated capsule bodies,
//! camera rings, rendered soft mattes, ground-truth skeletons, and the
//! training triplets derived from them.

mod body;
mod dataset;
mod kinematics;
mod render;

pub use body::{Bone, BodyModel, JointTrack, MotionSpec, RigSpec};
pub use dataset::{generate_dataset, Dataset, GeneratedFrame};
pub use kinematics::{forward_kinematics, posed_capsules, RootTransform};
pub use render::render_matte;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("bone graph is not a tree rooted at bone 0: {0}")]
    CycleDetected(String),

    #[error("motion spec provides {tracks} joint tracks for {bones} bones")]
    TrackCountMismatch { tracks: usize, bones: usize },

    #[error("bone {index} has non-positive capsule radius {radius}")]
    BadRadius { index: usize, radius: f64 },

    #[error("rig must have at least one camera")]
    EmptyRig,

    #[error(transparent)]
    Geometry(#[from] crate::error::GeometryError),

    #[error(transparent)]
    Net(#[from] crate::network::NetError),
}
