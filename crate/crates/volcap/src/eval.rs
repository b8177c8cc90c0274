//! Quantitative accuracy measures: mean per-joint 3D error in millimetres
//! and voxel MSE against a native high-resolution hull, with the
//! tricubic-upsampled input as the baseline.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::VoxelGrid;
use crate::skeleton::SkeletonFrame;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("stream lengths differ: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },

    #[error("joint subset entry ({est}, {gt}) out of range (frames have {est_joints}/{gt_joints} joints)")]
    BadSubset {
        est: usize,
        gt: usize,
        est_joints: usize,
        gt_joints: usize,
    },

    #[error("volume resolutions differ at frame {frame}: {a:?} vs {b:?}")]
    ShapeMismatch {
        frame: usize,
        a: [usize; 3],
        b: [usize; 3],
    },
}

/// Pairs of (estimated joint index, ground-truth joint index) evaluated by
/// [`per_joint_error`]. Identity over the common joint count by default.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointSubset(pub Vec<(usize, usize)>);

impl JointSubset {
    pub fn identity(joint_count: usize) -> Self {
        JointSubset((0..joint_count).map(|i| (i, i)).collect())
    }
}

/// Per-joint position error report, millimetres.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoseErrorReport {
    /// Mean joint error per frame.
    pub per_frame_mm: Vec<f64>,
    /// Mean error per subset entry across frames.
    pub per_joint_mm: Vec<f64>,
    /// Mean of the per-frame means (equals the pooled mean for a fixed
    /// subset size).
    pub mean_mm: f64,
    pub subset: JointSubset,
}

/// Computes the Euclidean joint-position error between two skeleton
/// streams over the given joint subset.
pub fn per_joint_error(
    estimated: &[SkeletonFrame],
    truth: &[SkeletonFrame],
    subset: &JointSubset,
) -> Result<PoseErrorReport, EvalError> {
    if estimated.len() != truth.len() {
        return Err(EvalError::LengthMismatch {
            a: estimated.len(),
            b: truth.len(),
        });
    }
    for (est, gt) in estimated.iter().zip(truth) {
        for &(ei, gi) in &subset.0 {
            if ei >= est.joint_count() || gi >= gt.joint_count() {
                return Err(EvalError::BadSubset {
                    est: ei,
                    gt: gi,
                    est_joints: est.joint_count(),
                    gt_joints: gt.joint_count(),
                });
            }
        }
    }
    let mut per_frame = Vec::with_capacity(estimated.len());
    let mut per_joint = vec![0.0; subset.0.len()];
    for (est, gt) in estimated.iter().zip(truth) {
        let mut frame_sum = 0.0;
        for (k, &(ei, gi)) in subset.0.iter().enumerate() {
            let d = (est.joint(ei) - gt.joint(gi)).norm();
            frame_sum += d;
            per_joint[k] += d;
        }
        per_frame.push(frame_sum / subset.0.len() as f64);
    }
    let frames = estimated.len().max(1) as f64;
    for v in &mut per_joint {
        *v /= frames;
    }
    let mean = per_frame.iter().sum::<f64>() / frames;
    Ok(PoseErrorReport {
        per_frame_mm: per_frame,
        per_joint_mm: per_joint,
        mean_mm: mean,
        subset: subset.clone(),
    })
}

/// Voxel reconstruction error report. Raw MSE values are stored unscaled;
/// the `display_*` fields carry the conventional x10^-3 presentation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VolumeErrorReport {
    pub per_frame_output_mse: Vec<f64>,
    pub per_frame_input_mse: Vec<f64>,
    pub mean_output_mse: f64,
    pub mean_input_mse: f64,
    /// Mean output MSE in 10^-3 units.
    pub display_output_mse: f64,
    /// Mean input MSE in 10^-3 units.
    pub display_input_mse: f64,
}

/// Per-frame MSE of refined output volumes and tricubic-upsampled input
/// volumes against ground-truth native volumes.
pub fn voxel_mse_report(
    outputs: &[VoxelGrid],
    inputs_upsampled: &[VoxelGrid],
    truth: &[VoxelGrid],
) -> Result<VolumeErrorReport, EvalError> {
    if outputs.len() != truth.len() {
        return Err(EvalError::LengthMismatch {
            a: outputs.len(),
            b: truth.len(),
        });
    }
    if inputs_upsampled.len() != truth.len() {
        return Err(EvalError::LengthMismatch {
            a: inputs_upsampled.len(),
            b: truth.len(),
        });
    }
    let mut out_mse = Vec::with_capacity(truth.len());
    let mut in_mse = Vec::with_capacity(truth.len());
    for (i, gt) in truth.iter().enumerate() {
        for probe in [&outputs[i], &inputs_upsampled[i]] {
            if probe.resolution() != gt.resolution() {
                return Err(EvalError::ShapeMismatch {
                    frame: i,
                    a: probe.resolution(),
                    b: gt.resolution(),
                });
            }
        }
        out_mse.push(outputs[i].mse(gt).expect("resolutions checked"));
        in_mse.push(inputs_upsampled[i].mse(gt).expect("resolutions checked"));
    }
    let n = truth.len().max(1) as f64;
    let mean_out = out_mse.iter().sum::<f64>() / n;
    let mean_in = in_mse.iter().sum::<f64>() / n;
    Ok(VolumeErrorReport {
        per_frame_output_mse: out_mse,
        per_frame_input_mse: in_mse,
        mean_output_mse: mean_out,
        mean_input_mse: mean_in,
        display_output_mse: mean_out * 1e3,
        display_input_mse: mean_in * 1e3,
    })
}
