//! Dense scalar occupancy grids over a world-space bounding box.

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::GeometryError;

/// An axis-aligned occupancy volume. Values are probabilities in `[0, 1]`,
/// stored x-fastest (`x` varies quickest, then `y`, then `z`).
///
/// The center of voxel `(i, j, k)` sits at
/// `bbox_min + (index + 0.5) * (bbox_max - bbox_min) / resolution`.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    resolution: [usize; 3],
    bbox_min: Point3<f64>,
    bbox_max: Point3<f64>,
    values: Vec<f32>,
}

impl VoxelGrid {
    /// Zero-filled grid. Panics if a resolution component is zero or the box
    /// is degenerate; those are construction bugs, not runtime conditions.
    pub fn zeros(resolution: [usize; 3], bbox_min: Point3<f64>, bbox_max: Point3<f64>) -> Self {
        assert!(
            resolution.iter().all(|&n| n > 0),
            "voxel grid resolution must be positive, got {resolution:?}"
        );
        assert!(
            (0..3).all(|a| bbox_min[a] < bbox_max[a]),
            "bbox_min must be strictly below bbox_max componentwise"
        );
        let len = resolution[0] * resolution[1] * resolution[2];
        VoxelGrid {
            resolution,
            bbox_min,
            bbox_max,
            values: vec![0.0; len],
        }
    }

    /// Wraps existing values; length must match the resolution.
    pub fn from_values(
        resolution: [usize; 3],
        bbox_min: Point3<f64>,
        bbox_max: Point3<f64>,
        values: Vec<f32>,
    ) -> Result<Self, GeometryError> {
        let expect = resolution[0] * resolution[1] * resolution[2];
        if values.len() != expect {
            return Err(GeometryError::ValueCount {
                expected: expect,
                got: values.len(),
            });
        }
        let mut grid = VoxelGrid::zeros(resolution, bbox_min, bbox_max);
        grid.values = values;
        Ok(grid)
    }

    pub fn resolution(&self) -> [usize; 3] {
        self.resolution
    }

    pub fn bbox_min(&self) -> Point3<f64> {
        self.bbox_min
    }

    pub fn bbox_max(&self) -> Point3<f64> {
        self.bbox_max
    }

    pub fn bbox_center(&self) -> Point3<f64> {
        nalgebra::center(&self.bbox_min, &self.bbox_max)
    }

    /// Edge length of one voxel along each axis.
    pub fn voxel_size(&self) -> Vector3<f64> {
        let extent = self.bbox_max - self.bbox_min;
        Vector3::new(
            extent.x / self.resolution[0] as f64,
            extent.y / self.resolution[1] as f64,
            extent.z / self.resolution[2] as f64,
        )
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn flat_index(&self, i: usize, j: usize, k: usize) -> usize {
        debug_assert!(i < self.resolution[0] && j < self.resolution[1] && k < self.resolution[2]);
        (k * self.resolution[1] + j) * self.resolution[0] + i
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        self.values[self.flat_index(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f32) {
        let idx = self.flat_index(i, j, k);
        self.values[idx] = v;
    }

    /// World-space center of voxel `(i, j, k)`.
    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Point3<f64> {
        let s = self.voxel_size();
        Point3::new(
            self.bbox_min.x + (i as f64 + 0.5) * s.x,
            self.bbox_min.y + (j as f64 + 0.5) * s.y,
            self.bbox_min.z + (k as f64 + 0.5) * s.z,
        )
    }

    /// Sum of all voxel values (occupancy mass).
    pub fn mass(&self) -> f64 {
        self.values.iter().map(|&v| v as f64).sum()
    }

    /// Mean squared difference against another grid of identical resolution.
    pub fn mse(&self, other: &VoxelGrid) -> Result<f64, GeometryError> {
        if self.resolution != other.resolution {
            return Err(GeometryError::ResolutionMismatch {
                a: self.resolution,
                b: other.resolution,
            });
        }
        let sum: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| {
                let d = a as f64 - b as f64;
                d * d
            })
            .sum();
        Ok(sum / self.values.len() as f64)
    }
}

/// Bounding box description used in configs and file headers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bbox {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Bbox {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        Bbox { min, max }
    }

    pub fn min_point(&self) -> Point3<f64> {
        Point3::new(self.min[0], self.min[1], self.min[2])
    }

    pub fn max_point(&self) -> Point3<f64> {
        Point3::new(self.max[0], self.max[1], self.max[2])
    }

    pub fn center(&self) -> Point3<f64> {
        nalgebra::center(&self.min_point(), &self.max_point())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_grid(res: [usize; 3]) -> VoxelGrid {
        VoxelGrid::zeros(res, Point3::origin(), Point3::new(1.0, 1.0, 1.0))
    }

    #[test]
    fn voxel_center_matches_contract() {
        let g = unit_grid([4, 4, 4]);
        // center of voxel (0,0,0) = min + 0.5 * (extent / 4)
        let c = g.voxel_center(0, 0, 0);
        assert_eq!(c, Point3::new(0.125, 0.125, 0.125));
        let c = g.voxel_center(3, 0, 2);
        assert_eq!(c, Point3::new(0.875, 0.125, 0.625));
    }

    #[test]
    fn x_fastest_ordering() {
        let mut g = unit_grid([2, 2, 2]);
        g.set(1, 0, 0, 1.0);
        assert_eq!(g.values()[1], 1.0);
        g.set(0, 1, 0, 0.5);
        assert_eq!(g.values()[2], 0.5);
        g.set(0, 0, 1, 0.25);
        assert_eq!(g.values()[4], 0.25);
    }

    #[test]
    fn from_values_rejects_bad_length() {
        let r = VoxelGrid::from_values(
            [2, 2, 2],
            Point3::origin(),
            Point3::new(1.0, 1.0, 1.0),
            vec![0.0; 7],
        );
        assert!(matches!(r, Err(GeometryError::ValueCount { .. })));
    }
}
