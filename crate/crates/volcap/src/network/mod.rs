//! The dual-loss symmetric 3D convolutional autoencoder: a coarse occupancy
//! volume in, an upscaled volume and a 3J-wide joint-position latent out.

mod config;
mod model;
mod train;

pub use config::{
    ConvLayerSpec, DeconvLayerSpec, LayoutPlan, NetworkConfig, SkipSpec, SkipTap,
};
pub use model::{build_network, Autoencoder};
pub use train::{pretrain_encoder, train, Augmentation, TrainingTriplet};

use thiserror::Error;

use crate::grid::{Bbox, VoxelGrid};
use crate::skeleton::SkeletonFrame;
use crate::tensor::{Scalar, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum NetError {
    #[error("unrealizable layer schedule: {0}")]
    UnrealizableSchedule(String),

    #[error("training requires a non-empty dataset")]
    EmptyDataset,

    #[error("loss diverged to {loss} at epoch {epoch}")]
    DivergedLoss { epoch: usize, loss: f64 },

    #[error("wrong input resolution: expected {expected:?}, got {got:?}")]
    WrongInputResolution {
        expected: [usize; 3],
        got: [usize; 3],
    },

    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error(transparent)]
    Geometry(#[from] crate::error::GeometryError),
}

/// Voxel grid to network tensor `[Nz, Ny, Nx, 1]`. The grid's x-fastest
/// layout maps directly onto the tensor's row-major layout.
pub fn volume_to_tensor<T: Scalar>(grid: &VoxelGrid) -> Tensor<T> {
    let [nx, ny, nz] = grid.resolution();
    let data = grid
        .values()
        .iter()
        .map(|&v| T::from_f64(v as f64))
        .collect();
    Tensor::from_vec(&[nz, ny, nx, 1], data).expect("grid length matches resolution")
}

/// Network tensor `[Nz, Ny, Nx, 1]` back to a voxel grid over `bbox`,
/// clamped to `[0, 1]`.
pub fn tensor_to_volume<T: Scalar>(
    tensor: &Tensor<T>,
    bbox: Bbox,
) -> Result<VoxelGrid, NetError> {
    let shape = tensor.shape();
    let [nz, ny, nx, c] = shape[..] else {
        return Err(NetError::Tensor(TensorError::ShapeMismatch(format!(
            "expected a rank-4 single-channel volume, got {shape:?}"
        ))));
    };
    if c != 1 {
        return Err(NetError::Tensor(TensorError::ShapeMismatch(format!(
            "expected one channel, got {c}"
        ))));
    }
    let values = tensor
        .data()
        .iter()
        .map(|&v| v.to_f64().clamp(0.0, 1.0) as f32)
        .collect();
    Ok(VoxelGrid::from_values(
        [nx, ny, nz],
        bbox.min_point(),
        bbox.max_point(),
        values,
    )?)
}

/// Maps world joint coordinates into `[-1, 1]` per axis over `bbox`; the
/// latent target space.
pub fn normalize_joints(frame: &SkeletonFrame, bbox: &Bbox) -> Vec<f64> {
    frame
        .joints
        .iter()
        .flat_map(|j| {
            (0..3).map(move |a| 2.0 * (j[a] - bbox.min[a]) / (bbox.max[a] - bbox.min[a]) - 1.0)
        })
        .collect()
}

/// Inverse of [`normalize_joints`].
pub fn denormalize_joints(flat: &[f64], bbox: &Bbox) -> SkeletonFrame {
    SkeletonFrame {
        joints: flat
            .chunks_exact(3)
            .map(|c| {
                let mut j = [0.0; 3];
                for a in 0..3 {
                    j[a] = bbox.min[a] + (c[a] + 1.0) * 0.5 * (bbox.max[a] - bbox.min[a]);
                }
                j
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Point3;

    #[test]
    fn volume_tensor_round_trip_preserves_layout() {
        let mut g = VoxelGrid::zeros(
            [3, 4, 5],
            Point3::origin(),
            Point3::new(1.0, 1.0, 1.0),
        );
        g.set(1, 2, 3, 0.7);
        let t = volume_to_tensor::<f64>(&g);
        assert_eq!(t.shape(), &[5, 4, 3, 1]);
        let bbox = Bbox::new([0.0; 3], [1.0; 3]);
        let back = tensor_to_volume(&t, bbox).unwrap();
        assert_eq!(back.get(1, 2, 3), 0.7);
        assert_eq!(back.values(), g.values());
    }

    #[test]
    fn joint_normalization_round_trips() {
        let bbox = Bbox::new([-500.0, -500.0, 0.0], [500.0, 500.0, 2000.0]);
        let frame = SkeletonFrame::new(vec![[0.0, 0.0, 1000.0], [250.0, -100.0, 30.0]]);
        let norm = normalize_joints(&frame, &bbox);
        assert_eq!(norm[0], 0.0);
        assert_eq!(norm[2], 0.0);
        let back = denormalize_joints(&norm, &bbox);
        for (a, b) in back.joints.iter().zip(&frame.joints) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-9);
            }
        }
    }
}
