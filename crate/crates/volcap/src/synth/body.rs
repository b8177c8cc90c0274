//! Capsule body models, motion specifications, and camera rigs.

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use super::SynthError;
use crate::camera::{CameraIntrinsics, CameraPose};
use crate::grid::Bbox;

/// One joint of the body tree. The capsule spans from the parent joint to
/// this joint with the given radius; the root has no capsule of its own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bone {
    pub name: String,
    /// Index of the parent bone; `None` only for the root (index 0).
    pub parent: Option<usize>,
    /// Rest offset from the parent joint, millimetres. For the root this is
    /// the rest position in world space.
    pub offset: [f64; 3],
    /// Capsule radius in millimetres.
    pub radius: f64,
    /// Axis (in the parent frame) this joint's animation angle rotates
    /// about.
    pub axis: [f64; 3],
}

/// Articulated capsule body. Joint `j` corresponds to bone `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyModel {
    pub bones: Vec<Bone>,
}

impl BodyModel {
    pub fn joint_count(&self) -> usize {
        self.bones.len()
    }

    /// Checks the parent indices form a tree rooted at bone 0 and radii are
    /// positive.
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.bones.is_empty() {
            return Err(SynthError::CycleDetected("no bones".into()));
        }
        if self.bones[0].parent.is_some() {
            return Err(SynthError::CycleDetected(
                "bone 0 must be the root (no parent)".into(),
            ));
        }
        for (i, b) in self.bones.iter().enumerate() {
            if b.radius <= 0.0 {
                return Err(SynthError::BadRadius {
                    index: i,
                    radius: b.radius,
                });
            }
            if i > 0 && b.parent.is_none() {
                return Err(SynthError::CycleDetected(format!(
                    "bone {i} has no parent but is not the root"
                )));
            }
            // walk to the root; a cycle never reaches it
            let mut hops = 0;
            let mut cur = i;
            while let Some(p) = self.bones[cur].parent {
                if p >= self.bones.len() {
                    return Err(SynthError::CycleDetected(format!(
                        "bone {cur} references missing parent {p}"
                    )));
                }
                cur = p;
                hops += 1;
                if hops > self.bones.len() {
                    return Err(SynthError::CycleDetected(format!(
                        "cycle through bone {i}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// All-zero joint angles.
    pub fn rest_pose(&self) -> Vec<f64> {
        vec![0.0; self.bones.len()]
    }

    /// 17-joint humanoid at desk scale (z-up, millimetres), standing with
    /// the pelvis near z = 1000.
    pub fn humanoid17() -> Self {
        let b = |name: &str,
                 parent: Option<usize>,
                 offset: [f64; 3],
                 radius: f64,
                 axis: [f64; 3]| Bone {
            name: name.into(),
            parent,
            offset,
            radius,
            axis,
        };
        BodyModel {
            bones: vec![
                b("pelvis", None, [0.0, 0.0, 1000.0], 90.0, [0.0, 0.0, 1.0]),
                b("spine", Some(0), [0.0, 0.0, 150.0], 110.0, [0.0, 0.0, 1.0]),
                b("chest", Some(1), [0.0, 0.0, 150.0], 120.0, [0.0, 0.0, 1.0]),
                b("neck", Some(2), [0.0, 0.0, 120.0], 50.0, [1.0, 0.0, 0.0]),
                b("head", Some(3), [0.0, 0.0, 120.0], 90.0, [1.0, 0.0, 0.0]),
                b("l_shoulder", Some(2), [-180.0, 0.0, 80.0], 55.0, [0.0, 1.0, 0.0]),
                b("l_elbow", Some(5), [-260.0, 0.0, 0.0], 45.0, [0.0, 1.0, 0.0]),
                b("l_wrist", Some(6), [-230.0, 0.0, 0.0], 35.0, [0.0, 1.0, 0.0]),
                b("r_shoulder", Some(2), [180.0, 0.0, 80.0], 55.0, [0.0, 1.0, 0.0]),
                b("r_elbow", Some(8), [260.0, 0.0, 0.0], 45.0, [0.0, 1.0, 0.0]),
                b("r_wrist", Some(9), [230.0, 0.0, 0.0], 35.0, [0.0, 1.0, 0.0]),
                b("l_hip", Some(0), [-100.0, 0.0, -60.0], 70.0, [1.0, 0.0, 0.0]),
                b("l_knee", Some(11), [0.0, 0.0, -420.0], 55.0, [1.0, 0.0, 0.0]),
                b("l_ankle", Some(12), [0.0, 0.0, -400.0], 40.0, [1.0, 0.0, 0.0]),
                b("r_hip", Some(0), [100.0, 0.0, -60.0], 70.0, [1.0, 0.0, 0.0]),
                b("r_knee", Some(14), [0.0, 0.0, -420.0], 55.0, [1.0, 0.0, 0.0]),
                b("r_ankle", Some(15), [0.0, 0.0, -400.0], 40.0, [1.0, 0.0, 0.0]),
            ],
        }
    }
}

/// Sinusoidal angle trajectory for one joint:
/// `angle(t) = amplitude * sin(2 pi frequency t + phase)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointTrack {
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
}

impl JointTrack {
    pub fn still() -> Self {
        JointTrack {
            amplitude: 0.0,
            frequency: 0.0,
            phase: 0.0,
        }
    }

    pub fn angle_at(&self, t: f64) -> f64 {
        self.amplitude * (std::f64::consts::TAU * self.frequency * t + self.phase).sin()
    }
}

/// Per-joint trajectories plus a global root sway.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionSpec {
    /// One track per bone.
    pub joint_tracks: Vec<JointTrack>,
    /// Horizontal circular sway of the root, millimetres.
    pub root_sway_radius: f64,
    pub root_sway_frequency: f64,
    /// Root yaw oscillation, radians.
    pub root_yaw_amplitude: f64,
    pub frame_rate: f64,
    pub frame_count: usize,
}

impl MotionSpec {
    pub fn validate(&self, body: &BodyModel) -> Result<(), SynthError> {
        if self.joint_tracks.len() != body.joint_count() {
            return Err(SynthError::TrackCountMismatch {
                tracks: self.joint_tracks.len(),
                bones: body.joint_count(),
            });
        }
        Ok(())
    }

    /// A walking-in-place style motion for [`BodyModel::humanoid17`].
    pub fn walk17(frame_count: usize) -> Self {
        let f = 1.0;
        let t = |amplitude: f64, phase: f64| JointTrack {
            amplitude,
            frequency: f,
            phase,
        };
        use std::f64::consts::PI;
        MotionSpec {
            joint_tracks: vec![
                t(0.08, 0.0),      // pelvis twist
                t(0.06, PI),       // spine counter-twist
                t(0.05, PI),       // chest
                t(0.04, 0.0),      // neck nod
                t(0.05, PI / 2.0), // head
                t(0.50, 0.0),      // l_shoulder swing
                t(0.35, 0.4),      // l_elbow
                t(0.20, 0.9),      // l_wrist
                t(0.50, PI),       // r_shoulder opposite
                t(0.35, PI + 0.4), // r_elbow
                t(0.20, PI + 0.9), // r_wrist
                t(0.45, PI),       // l_hip
                t(0.55, PI + 0.6), // l_knee
                t(0.25, PI + 1.1), // l_ankle
                t(0.45, 0.0),      // r_hip
                t(0.55, 0.6),      // r_knee
                t(0.25, 1.1),      // r_ankle
            ],
            root_sway_radius: 60.0,
            root_sway_frequency: 0.5,
            root_yaw_amplitude: 0.3,
            frame_rate: 25.0,
            frame_count,
        }
    }
}

/// Ring of identical cameras looking at a capture volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigSpec {
    pub camera_count: usize,
    /// Distance of each camera from the look-at center, millimetres.
    pub ring_radius: f64,
    /// Camera heights, cycled around the ring.
    pub heights: Vec<f64>,
    pub look_at: [f64; 3],
    pub focal_length: f64,
    pub image_size: [usize; 2],
    /// Edge length of the cubic capture volume centered on `look_at`.
    pub capture_size: f64,
}

impl RigSpec {
    /// Four cameras in a 360-degree arrangement at desk scale.
    pub fn ring4() -> Self {
        RigSpec {
            camera_count: 4,
            ring_radius: 3200.0,
            heights: vec![1400.0, 1700.0],
            look_at: [0.0, 0.0, 1000.0],
            focal_length: 160.0,
            image_size: [128, 128],
            capture_size: 2200.0,
        }
    }

    pub fn capture_bbox(&self) -> Bbox {
        let h = self.capture_size / 2.0;
        Bbox::new(
            [
                self.look_at[0] - h,
                self.look_at[1] - h,
                self.look_at[2] - h,
            ],
            [
                self.look_at[0] + h,
                self.look_at[1] + h,
                self.look_at[2] + h,
            ],
        )
    }

    /// Camera intrinsics and poses around the ring.
    pub fn cameras(&self) -> Result<Vec<(CameraIntrinsics, CameraPose)>, SynthError> {
        if self.camera_count == 0 {
            return Err(SynthError::EmptyRig);
        }
        let center = Point3::new(self.look_at[0], self.look_at[1], self.look_at[2]);
        Ok((0..self.camera_count)
            .map(|c| {
                let angle = std::f64::consts::TAU * c as f64 / self.camera_count as f64;
                let height = self.heights[c % self.heights.len()];
                // keep the camera at ring_radius from the center even when
                // elevated
                let dz = height - center.z;
                let horizontal = (self.ring_radius * self.ring_radius - dz * dz)
                    .max(1.0)
                    .sqrt();
                let pos = Point3::new(
                    center.x + horizontal * angle.cos(),
                    center.y + horizontal * angle.sin(),
                    height,
                );
                let intrinsics = CameraIntrinsics {
                    focal_length: self.focal_length,
                    principal_point: [
                        self.image_size[0] as f64 / 2.0,
                        self.image_size[1] as f64 / 2.0,
                    ],
                    image_size: self.image_size,
                };
                (intrinsics, CameraPose::look_at(pos, center))
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn humanoid_is_a_valid_tree() {
        let body = BodyModel::humanoid17();
        body.validate().unwrap();
        assert_eq!(body.joint_count(), 17);
    }

    #[test]
    fn cycle_is_detected() {
        let mut body = BodyModel::humanoid17();
        body.bones[5].parent = Some(7); // shoulder -> wrist -> elbow -> shoulder
        assert!(matches!(
            body.validate(),
            Err(SynthError::CycleDetected(_))
        ));
    }

    #[test]
    fn zero_radius_is_rejected() {
        let mut body = BodyModel::humanoid17();
        body.bones[3].radius = 0.0;
        assert!(matches!(body.validate(), Err(SynthError::BadRadius { .. })));
    }

    #[test]
    fn rig_cameras_look_at_center() {
        let rig = RigSpec::ring4();
        let cams = rig.cameras().unwrap();
        assert_eq!(cams.len(), 4);
        for (_, pose) in &cams {
            pose.validate().unwrap();
            let to_center =
                (Point3::new(0.0, 0.0, 1000.0) - Point3::from(pose.translation)).normalize();
            let fwd = pose.rotation.column(2).into_owned();
            assert!((to_center - fwd).norm() < 1e-9);
            let dist = (Point3::from(pose.translation) - Point3::new(0.0, 0.0, 1000.0)).norm();
            assert!((dist - rig.ring_radius).abs() < 1e-6);
        }
    }

    #[test]
    fn specs_serialize_round_trip() {
        let body = BodyModel::humanoid17();
        let motion = MotionSpec::walk17(10);
        let rig = RigSpec::ring4();
        let b2: BodyModel =
            serde_json::from_str(&serde_json::to_string(&body).unwrap()).unwrap();
        let m2: MotionSpec =
            serde_json::from_str(&serde_json::to_string(&motion).unwrap()).unwrap();
        let r2: RigSpec = serde_json::from_str(&serde_json::to_string(&rig).unwrap()).unwrap();
        assert_eq!(b2, body);
        assert_eq!(m2, motion);
        assert_eq!(r2, rig);
    }
}
