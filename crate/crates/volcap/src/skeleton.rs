//! Skeletal pose frames: joint positions in world millimetres.

use nalgebra::{Point3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

/// One frame of world-space joint positions. Joint ordering is fixed by the
/// body model that produced the frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonFrame {
    pub joints: Vec<[f64; 3]>,
}

impl SkeletonFrame {
    pub fn new(joints: Vec<[f64; 3]>) -> Self {
        SkeletonFrame { joints }
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    pub fn joint(&self, index: usize) -> Point3<f64> {
        let [x, y, z] = self.joints[index];
        Point3::new(x, y, z)
    }

    /// Flattens to `[x0, y0, z0, x1, ...]`, the 3J layout the network latent
    /// uses.
    pub fn to_flat(&self) -> Vec<f64> {
        self.joints.iter().flat_map(|j| j.iter().copied()).collect()
    }

    pub fn from_flat(flat: &[f64]) -> Self {
        assert_eq!(flat.len() % 3, 0, "flat joint vector length must be 3J");
        SkeletonFrame {
            joints: flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        }
    }

    /// Vertical extent of the pose (max z minus min z).
    pub fn height(&self) -> f64 {
        let (lo, hi) = self
            .joints
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), j| {
                (lo.min(j[2]), hi.max(j[2]))
            });
        hi - lo
    }
}

/// Rigidly rotates every joint about the vertical (z) axis through `center`.
/// Pairs with volume rotation so augmented labels stay aligned with
/// augmented volumes.
pub fn rotate_skeleton(frame: &SkeletonFrame, angle: f64, center: Point3<f64>) -> SkeletonFrame {
    let rot = Rotation3::from_axis_angle(&Vector3::z_axis(), angle);
    SkeletonFrame {
        joints: frame
            .joints
            .iter()
            .map(|&[x, y, z]| {
                let p = center + rot * (Point3::new(x, y, z) - center);
                [p.x, p.y, p.z]
            })
            .collect(),
    }
}
