//! Probabilistic visual hull construction from calibrated views.

use nalgebra::Point3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{project_voxel, sample_matte, CameraView};
use crate::error::GeometryError;
use crate::grid::VoxelGrid;

/// How per-view probabilities are fused into one occupancy value.
///
/// `PaperEq3` evaluates the published closed form verbatim:
/// `p(v) = prod_c 1 / (1 + exp(p(v|c)))`. Note that this expression
/// *decreases* as matte evidence increases; `ProductOfProbabilities`
/// (`p(v) = prod_c p(v|c)`) is the default because it matches the
/// visual-hull intersection semantics the construction is based on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    PaperEq3,
    #[default]
    ProductOfProbabilities,
}

/// Fuses per-view occupancy probabilities into a single voxel value.
pub fn fuse_occupancy(per_view: &[f64], mode: FusionMode) -> Result<f64, GeometryError> {
    if per_view.is_empty() {
        return Err(GeometryError::EmptyViewList);
    }
    let product = match mode {
        FusionMode::PaperEq3 => per_view.iter().map(|&p| 1.0 / (1.0 + p.exp())).product(),
        FusionMode::ProductOfProbabilities => per_view.iter().product(),
    };
    Ok(f64::clamp(product, 0.0, 1.0))
}

/// Builds a probabilistic visual hull: every voxel center is projected into
/// every view, the matte is sampled bilinearly, and the per-view
/// probabilities are fused. Views that cannot see a voxel (behind the camera
/// or out of frame) contribute probability 0 for that voxel.
///
/// Each voxel is a pure function of the inputs, so evaluation parallelizes
/// over voxels with deterministic results at any thread count.
pub fn build_pvh(
    views: &[CameraView],
    bbox_min: Point3<f64>,
    bbox_max: Point3<f64>,
    resolution: [usize; 3],
    mode: FusionMode,
) -> Result<VoxelGrid, GeometryError> {
    if views.is_empty() {
        return Err(GeometryError::EmptyViewList);
    }
    let mut grid = VoxelGrid::zeros(resolution, bbox_min, bbox_max);
    let [nx, ny, _] = resolution;
    let voxel = grid.voxel_size();

    let values: Vec<f32> = (0..grid.len())
        .into_par_iter()
        .map(|flat| {
            let i = flat % nx;
            let j = (flat / nx) % ny;
            let k = flat / (nx * ny);
            let center = Point3::new(
                bbox_min.x + (i as f64 + 0.5) * voxel.x,
                bbox_min.y + (j as f64 + 0.5) * voxel.y,
                bbox_min.z + (k as f64 + 0.5) * voxel.z,
            );
            let per_view: Vec<f64> = views
                .iter()
                .map(|view| match project_voxel(center, view) {
                    Ok((x, y, _depth)) => sample_matte(&view.matte, x, y) as f64,
                    Err(_) => 0.0,
                })
                .collect();
            // views is non-empty, so fusion cannot fail
            fuse_occupancy(&per_view, mode).expect("non-empty view list") as f32
        })
        .collect();

    grid.values_mut().copy_from_slice(&values);
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{CameraIntrinsics, CameraPose, SoftMatte};
    use approx::assert_relative_eq;

    fn ring_view(angle: f64, matte_value: f32) -> CameraView {
        let pos = Point3::new(4.0 * angle.cos(), 4.0 * angle.sin(), 0.5);
        CameraView::new(
            CameraIntrinsics {
                focal_length: 60.0,
                principal_point: [32.0, 32.0],
                image_size: [64, 64],
            },
            CameraPose::look_at(pos, Point3::new(0.0, 0.0, 0.5)),
            SoftMatte::constant(64, 64, matte_value),
        )
        .unwrap()
    }

    #[test]
    fn fuse_paper_form_matches_closed_values() {
        // 1/(1+e^0) = 0.5 per view
        assert_relative_eq!(
            fuse_occupancy(&[0.0, 0.0], FusionMode::PaperEq3).unwrap(),
            0.25,
            epsilon = 1e-15
        );
        assert_relative_eq!(
            fuse_occupancy(&[1.0], FusionMode::PaperEq3).unwrap(),
            1.0 / (1.0 + std::f64::consts::E),
            epsilon = 1e-15
        );
    }

    #[test]
    fn fuse_product_multiplies() {
        assert_relative_eq!(
            fuse_occupancy(&[0.5, 0.8], FusionMode::ProductOfProbabilities).unwrap(),
            0.4,
            epsilon = 1e-15
        );
    }

    #[test]
    fn fuse_rejects_empty_list() {
        assert!(matches!(
            fuse_occupancy(&[], FusionMode::ProductOfProbabilities),
            Err(GeometryError::EmptyViewList)
        ));
    }

    #[test]
    fn full_mattes_fill_the_frustum_intersection() {
        let views: Vec<_> = (0..4)
            .map(|c| ring_view(c as f64 * std::f64::consts::FRAC_PI_2, 1.0))
            .collect();
        let grid = build_pvh(
            &views,
            Point3::new(-0.5, -0.5, 0.0),
            Point3::new(0.5, 0.5, 1.0),
            [8, 8, 8],
            FusionMode::ProductOfProbabilities,
        )
        .unwrap();
        // The box sits well inside all four frusta.
        assert!(grid.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn empty_mattes_give_constant_floor() {
        let views: Vec<_> = (0..3)
            .map(|c| ring_view(c as f64 * 2.1, 0.0))
            .collect();
        let product = build_pvh(
            &views,
            Point3::new(-0.5, -0.5, 0.0),
            Point3::new(0.5, 0.5, 1.0),
            [4, 4, 4],
            FusionMode::ProductOfProbabilities,
        )
        .unwrap();
        assert!(product.values().iter().all(|&v| v == 0.0));

        let paper = build_pvh(
            &views,
            Point3::new(-0.5, -0.5, 0.0),
            Point3::new(0.5, 0.5, 1.0),
            [4, 4, 4],
            FusionMode::PaperEq3,
        )
        .unwrap();
        let expect = 0.5_f32.powi(3);
        assert!(paper.values().iter().all(|&v| (v - expect).abs() < 1e-7));
    }

    #[test]
    fn outputs_stay_in_unit_interval() {
        let views: Vec<_> = (0..4)
            .map(|c| ring_view(c as f64 * 1.3 + 0.2, 0.9))
            .collect();
        let grid = build_pvh(
            &views,
            Point3::new(-2.0, -2.0, -1.0),
            Point3::new(2.0, 2.0, 2.0),
            [8, 8, 8],
            FusionMode::PaperEq3,
        )
        .unwrap();
        assert!(grid.values().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
