//! Forward kinematics over the bone tree.

use nalgebra::{Isometry3, Point3, Rotation3, Translation3, Unit, UnitQuaternion, Vector3};

use super::body::BodyModel;
use super::SynthError;
use crate::skeleton::SkeletonFrame;

/// Global transform applied to the root joint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RootTransform {
    pub translation: Vector3<f64>,
    /// Yaw about the vertical axis, radians.
    pub yaw: f64,
}

impl RootTransform {
    pub fn identity() -> Self {
        RootTransform {
            translation: Vector3::zeros(),
            yaw: 0.0,
        }
    }

    fn isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(
            Translation3::from(self.translation),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), self.yaw),
        )
    }
}

/// World joint positions for the given joint angles: each bone's transform
/// is its parent's transform, then the rest offset, then the rotation of
/// its animation axis by the bone's angle (so an angle moves the bone's
/// children, not the joint itself).
pub fn forward_kinematics(
    body: &BodyModel,
    angles: &[f64],
    root: RootTransform,
) -> Result<SkeletonFrame, SynthError> {
    body.validate()?;
    if angles.len() != body.bones.len() {
        return Err(SynthError::TrackCountMismatch {
            tracks: angles.len(),
            bones: body.bones.len(),
        });
    }
    let mut world: Vec<Option<Isometry3<f64>>> = vec![None; body.bones.len()];
    let mut joints = vec![[0.0; 3]; body.bones.len()];
    // bones are validated to reach the root, so resolve each lazily
    for i in 0..body.bones.len() {
        let iso = resolve(body, angles, &root, &mut world, i);
        let p = iso.transform_point(&Point3::origin());
        joints[i] = [p.x, p.y, p.z];
    }
    Ok(SkeletonFrame::new(joints))
}

fn resolve(
    body: &BodyModel,
    angles: &[f64],
    root: &RootTransform,
    world: &mut Vec<Option<Isometry3<f64>>>,
    i: usize,
) -> Isometry3<f64> {
    if let Some(iso) = world[i] {
        return iso;
    }
    let bone = &body.bones[i];
    let parent_iso = match bone.parent {
        Some(p) => resolve(body, angles, root, world, p),
        None => root.isometry(),
    };
    let axis = Vector3::new(bone.axis[0], bone.axis[1], bone.axis[2]);
    let rotation = if axis.norm() > 1e-12 && angles[i] != 0.0 {
        Rotation3::from_axis_angle(&Unit::new_normalize(axis), angles[i])
    } else {
        Rotation3::identity()
    };
    let local = Isometry3::from_parts(
        Translation3::new(bone.offset[0], bone.offset[1], bone.offset[2]),
        UnitQuaternion::from_rotation_matrix(&rotation),
    );
    let iso = parent_iso * local;
    world[i] = Some(iso);
    iso
}

/// World-space capsules of a posed body: one segment per non-root bone from
/// the parent joint to the joint, with the bone's radius.
pub fn posed_capsules(
    body: &BodyModel,
    frame: &SkeletonFrame,
) -> Vec<(Point3<f64>, Point3<f64>, f64)> {
    body.bones
        .iter()
        .enumerate()
        .filter_map(|(i, bone)| {
            bone.parent.map(|p| {
                (
                    frame.joint(p),
                    frame.joint(i),
                    bone.radius,
                )
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn two_bone_chain() -> BodyModel {
        BodyModel {
            bones: vec![
                super::super::body::Bone {
                    name: "base".into(),
                    parent: None,
                    offset: [0.0, 0.0, 0.0],
                    radius: 10.0,
                    axis: [0.0, 0.0, 1.0],
                },
                super::super::body::Bone {
                    name: "elbow".into(),
                    parent: Some(0),
                    offset: [100.0, 0.0, 0.0],
                    radius: 10.0,
                    axis: [0.0, 0.0, 1.0],
                },
                super::super::body::Bone {
                    name: "hand".into(),
                    parent: Some(1),
                    offset: [80.0, 0.0, 0.0],
                    radius: 10.0,
                    axis: [0.0, 0.0, 1.0],
                },
            ],
        }
    }

    #[test]
    fn rest_pose_accumulates_offsets() {
        let body = BodyModel::humanoid17();
        let frame =
            forward_kinematics(&body, &body.rest_pose(), RootTransform::identity()).unwrap();
        // head = pelvis + spine + chest + neck + head offsets
        let head = frame.joint(4);
        assert_relative_eq!(head.z, 1000.0 + 150.0 + 150.0 + 120.0 + 120.0, epsilon = 1e-9);
        assert_relative_eq!(head.x, 0.0, epsilon = 1e-9);
        // left wrist x = -180 - 260 - 230
        let wrist = frame.joint(7);
        assert_relative_eq!(wrist.x, -670.0, epsilon = 1e-9);
    }

    #[test]
    fn root_translation_moves_every_joint() {
        let body = BodyModel::humanoid17();
        let rest =
            forward_kinematics(&body, &body.rest_pose(), RootTransform::identity()).unwrap();
        let moved = forward_kinematics(
            &body,
            &body.rest_pose(),
            RootTransform {
                translation: Vector3::new(100.0, 0.0, 0.0),
                yaw: 0.0,
            },
        )
        .unwrap();
        for (a, b) in rest.joints.iter().zip(&moved.joints) {
            assert_relative_eq!(b[0] - a[0], 100.0, epsilon = 1e-9);
            assert_relative_eq!(b[1] - a[1], 0.0, epsilon = 1e-9);
            assert_relative_eq!(b[2] - a[2], 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn ninety_degree_elbow_matches_hand_computation() {
        let body = two_bone_chain();
        // bend 90 degrees at the elbow (joint 1) about +z: the hand offset
        // (80,0,0) in the elbow frame rotates to (0,80,0)
        let mut angles = body.rest_pose();
        angles[1] = std::f64::consts::FRAC_PI_2;
        let frame = forward_kinematics(&body, &angles, RootTransform::identity()).unwrap();
        let hand = frame.joint(2);
        assert_relative_eq!(hand.x, 100.0, epsilon = 1e-9);
        assert_relative_eq!(hand.y, 80.0, epsilon = 1e-9);
        assert_relative_eq!(hand.z, 0.0, epsilon = 1e-9);
        // the elbow joint itself does not move
        let elbow = frame.joint(1);
        assert_relative_eq!(elbow.x, 100.0, epsilon = 1e-9);
        assert_relative_eq!(elbow.y, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn angle_count_mismatch_is_rejected() {
        let body = two_bone_chain();
        assert!(matches!(
            forward_kinematics(&body, &[0.0], RootTransform::identity()),
            Err(SynthError::TrackCountMismatch { .. })
        ));
    }

    #[test]
    fn capsules_cover_non_root_bones() {
        let body = BodyModel::humanoid17();
        let frame =
            forward_kinematics(&body, &body.rest_pose(), RootTransform::identity()).unwrap();
        let caps = posed_capsules(&body, &frame);
        assert_eq!(caps.len(), 16);
    }
}
