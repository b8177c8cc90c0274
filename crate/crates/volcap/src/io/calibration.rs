//! Camera calibration files: a JSON array of per-camera entries.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::IoError;
use crate::camera::{CameraIntrinsics, CameraPose};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraEntry {
    focal_length: f64,
    principal_point: [f64; 2],
    image_size: [usize; 2],
    /// Row-major 3x3 camera-to-world rotation.
    rotation: [f64; 9],
    /// Camera position in world units.
    translation: [f64; 3],
}

pub fn write_calibration(
    path: impl AsRef<Path>,
    cameras: &[(CameraIntrinsics, CameraPose)],
) -> Result<(), IoError> {
    let path = path.as_ref();
    let entries: Vec<CameraEntry> = cameras
        .iter()
        .map(|(intr, pose)| {
            let r = &pose.rotation;
            CameraEntry {
                focal_length: intr.focal_length,
                principal_point: intr.principal_point,
                image_size: intr.image_size,
                rotation: [
                    r[(0, 0)],
                    r[(0, 1)],
                    r[(0, 2)],
                    r[(1, 0)],
                    r[(1, 1)],
                    r[(1, 2)],
                    r[(2, 0)],
                    r[(2, 1)],
                    r[(2, 2)],
                ],
                translation: [pose.translation.x, pose.translation.y, pose.translation.z],
            }
        })
        .collect();
    let json = serde_json::to_string_pretty(&entries)
        .map_err(|e| IoError::io(path, std::io::Error::other(e)))?;
    std::fs::write(path, json).map_err(|e| IoError::io(path, e))
}

pub fn read_calibration(
    path: impl AsRef<Path>,
) -> Result<Vec<(CameraIntrinsics, CameraPose)>, IoError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    let entries: Vec<CameraEntry> =
        serde_json::from_str(&text).map_err(|e| IoError::CorruptHeader {
            path: path.into(),
            message: e.to_string(),
        })?;
    entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let intrinsics = CameraIntrinsics {
                focal_length: e.focal_length,
                principal_point: e.principal_point,
                image_size: e.image_size,
            };
            let r = e.rotation;
            let pose = CameraPose {
                rotation: Matrix3::new(
                    r[0], r[1], r[2], r[3], r[4], r[5], r[6], r[7], r[8],
                ),
                translation: Vector3::new(e.translation[0], e.translation[1], e.translation[2]),
            };
            intrinsics.validate().map_err(|err| IoError::Invalid {
                path: path.into(),
                message: format!("camera {i}: {err}"),
            })?;
            pose.validate().map_err(|err| IoError::Invalid {
                path: path.into(),
                message: format!("camera {i}: {err}"),
            })?;
            Ok((intrinsics, pose))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::RigSpec;

    #[test]
    fn calibration_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("calib.json");
        let cams = RigSpec::ring4().cameras().unwrap();
        write_calibration(&path, &cams).unwrap();
        let back = read_calibration(&path).unwrap();
        assert_eq!(back.len(), cams.len());
        for ((ai, ap), (bi, bp)) in cams.iter().zip(&back) {
            assert_eq!(ai, bi);
            assert!((ap.rotation - bp.rotation).abs().max() < 1e-15);
            assert!((ap.translation - bp.translation).norm() < 1e-15);
        }
    }

    #[test]
    fn bad_rotation_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("calib.json");
        let entry = serde_json::json!([{
            "focal_length": 100.0,
            "principal_point": [32.0, 32.0],
            "image_size": [64, 64],
            "rotation": [1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 1.0],
            "translation": [0.0, 0.0, 0.0]
        }]);
        std::fs::write(&path, entry.to_string()).unwrap();
        assert!(matches!(
            read_calibration(&path),
            Err(IoError::Invalid { .. })
        ));
    }
}
