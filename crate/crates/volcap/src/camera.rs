//! Calibrated pinhole cameras and their per-view foreground mattes.

use nalgebra::{Matrix3, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::GeometryError;

/// Pinhole intrinsics with a single focal length and a principal point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    /// Focal length in pixels.
    pub focal_length: f64,
    /// Optical center `(o_x, o_y)` in pixels.
    pub principal_point: [f64; 2],
    /// Image `(width, height)` in pixels.
    pub image_size: [usize; 2],
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.focal_length <= 0.0 {
            return Err(GeometryError::BadRotation(format!(
                "focal length must be positive, got {}",
                self.focal_length
            )));
        }
        Ok(())
    }
}

/// Rigid camera pose: `rotation` maps camera-frame directions to world
/// directions, `translation` is the camera position in world units.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraPose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl CameraPose {
    /// Checks orthonormality and positive determinant to 1e-9.
    pub fn validate(&self) -> Result<(), GeometryError> {
        let should_be_identity = self.rotation.transpose() * self.rotation;
        let err = (should_be_identity - Matrix3::identity()).abs().max();
        if err > 1e-9 {
            return Err(GeometryError::BadRotation(format!(
                "R^T R deviates from identity by {err:e}"
            )));
        }
        let det = self.rotation.determinant();
        if (det - 1.0).abs() > 1e-9 {
            return Err(GeometryError::BadRotation(format!(
                "determinant is {det}, expected +1"
            )));
        }
        Ok(())
    }

    /// Pose looking from `position` toward `target`, with the image x axis
    /// kept horizontal relative to the world vertical (+z).
    pub fn look_at(position: Point3<f64>, target: Point3<f64>) -> Self {
        let forward = (target - position).normalize();
        let world_up = Vector3::z();
        let mut right = world_up.cross(&forward);
        if right.norm() < 1e-9 {
            // Looking straight up or down; pick an arbitrary horizontal right.
            right = Vector3::x();
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        CameraPose {
            rotation: Matrix3::from_columns(&[right, down, forward]),
            translation: position.coords,
        }
    }
}

/// Per-pixel foreground probability image, values in `[0, 1]`.
/// `values[y * width + x]` is the sample at integer pixel coordinate `(x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMatte {
    width: usize,
    height: usize,
    values: Vec<f32>,
}

impl SoftMatte {
    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Result<Self, GeometryError> {
        if values.len() != width * height {
            return Err(GeometryError::ValueCount {
                expected: width * height,
                got: values.len(),
            });
        }
        Ok(SoftMatte {
            width,
            height,
            values,
        })
    }

    pub fn constant(width: usize, height: usize, value: f32) -> Self {
        SoftMatte {
            width,
            height,
            values: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, v: f32) {
        self.values[y * self.width + x] = v;
    }
}

/// One calibrated camera together with its current matte.
#[derive(Debug, Clone)]
pub struct CameraView {
    pub intrinsics: CameraIntrinsics,
    pub pose: CameraPose,
    pub matte: SoftMatte,
}

impl CameraView {
    pub fn new(
        intrinsics: CameraIntrinsics,
        pose: CameraPose,
        matte: SoftMatte,
    ) -> Result<Self, GeometryError> {
        intrinsics.validate()?;
        pose.validate()?;
        if [matte.width(), matte.height()] != intrinsics.image_size {
            return Err(GeometryError::MatteSizeMismatch {
                matte: [matte.width(), matte.height()],
                image: intrinsics.image_size,
            });
        }
        Ok(CameraView {
            intrinsics,
            pose,
            matte,
        })
    }
}

/// Projects a world point through the pinhole model.
///
/// Returns `(x, y, depth)` where `depth` is the dehomogenizing factor, equal
/// to the camera-frame z coordinate. Points at or behind the camera plane
/// yield `BehindCamera`.
pub fn project_voxel(
    center: Point3<f64>,
    view: &CameraView,
) -> Result<(f64, f64, f64), GeometryError> {
    let cam = view.pose.rotation.transpose() * (center.coords - view.pose.translation);
    if cam.z <= 0.0 {
        return Err(GeometryError::BehindCamera { depth: cam.z });
    }
    let f = view.intrinsics.focal_length;
    let [ox, oy] = view.intrinsics.principal_point;
    Ok((f * cam.x / cam.z + ox, f * cam.y / cam.z + oy, cam.z))
}

/// Bilinear matte lookup at continuous pixel coordinates.
///
/// Samples live at integer coordinates; lookups at integers reduce to direct
/// pixel reads. Coordinates outside `[0, w-1] x [0, h-1]` return 0: a view
/// that cannot see a point contributes no occupancy evidence.
pub fn sample_matte(matte: &SoftMatte, x: f64, y: f64) -> f32 {
    let (w, h) = (matte.width() as f64, matte.height() as f64);
    if !(x.is_finite() && y.is_finite()) || x < 0.0 || y < 0.0 || x > w - 1.0 || y > h - 1.0 {
        return 0.0;
    }
    let x0 = (x.floor() as usize).min(matte.width() - 1);
    let y0 = (y.floor() as usize).min(matte.height() - 1);
    let x1 = (x0 + 1).min(matte.width() - 1);
    let y1 = (y0 + 1).min(matte.height() - 1);
    let tx = (x - x0 as f64) as f32;
    let ty = (y - y0 as f64) as f32;
    let top = matte.pixel(x0, y0) * (1.0 - tx) + matte.pixel(x1, y0) * tx;
    let bottom = matte.pixel(x0, y1) * (1.0 - tx) + matte.pixel(x1, y1) * tx;
    top * (1.0 - ty) + bottom * ty
}
