//! Voxel grid resampling: tricubic upscaling, vertical-axis rotation, and
//! box downsampling.

use nalgebra::{Rotation3, Vector3};
use rayon::prelude::*;

use crate::error::GeometryError;
use crate::grid::VoxelGrid;

/// Weights of the four-point interpolating cubic at fractional offset `t`
/// between the middle two of four uniformly spaced samples. This is the
/// unique cubic through all four samples, so any polynomial of degree <= 3
/// is reproduced exactly away from the grid border.
#[inline]
fn cubic_weights(t: f64) -> [f64; 4] {
    [
        -t * (t - 1.0) * (t - 2.0) / 6.0,
        (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0,
        -(t + 1.0) * t * (t - 2.0) / 2.0,
        (t + 1.0) * t * (t - 1.0) / 6.0,
    ]
}

#[inline]
fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Cubic taps along one axis: sample coordinate `u` in index space yields
/// base index and weights over indices `base-1 ..= base+2` (edge-clamped).
#[inline]
fn cubic_axis(u: f64) -> (isize, [f64; 4]) {
    let base = u.floor();
    (base as isize, cubic_weights(u - base))
}

/// Upscales a grid by an integer factor with separable tricubic
/// interpolation. The bounding box is unchanged; output voxel centers are
/// sampled in the input's index space with border samples edge-clamped.
/// Results are clamped to `[0, 1]`. Factor 1 returns the grid unchanged.
pub fn tricubic_upsample(grid: &VoxelGrid, factor: usize) -> Result<VoxelGrid, GeometryError> {
    if !matches!(factor, 1 | 2 | 4) {
        return Err(GeometryError::UnsupportedFactor(factor));
    }
    if factor == 1 {
        return Ok(grid.clone());
    }
    let [nx, ny, nz] = grid.resolution();
    let out_res = [nx * factor, ny * factor, nz * factor];
    let mut out = VoxelGrid::zeros(out_res, grid.bbox_min(), grid.bbox_max());

    // Output center i_out maps to input index space at (i_out + 0.5)/f - 0.5.
    let to_input = |i_out: usize| (i_out as f64 + 0.5) / factor as f64 - 0.5;

    let values: Vec<f32> = (0..out.len())
        .into_par_iter()
        .map(|flat| {
            let i = flat % out_res[0];
            let j = (flat / out_res[0]) % out_res[1];
            let k = flat / (out_res[0] * out_res[1]);
            let (bx, wx) = cubic_axis(to_input(i));
            let (by, wy) = cubic_axis(to_input(j));
            let (bz, wz) = cubic_axis(to_input(k));
            let mut acc = 0.0;
            for (dz, &wkz) in wz.iter().enumerate() {
                let z = clamp_index(bz + dz as isize - 1, nz);
                for (dy, &wky) in wy.iter().enumerate() {
                    let y = clamp_index(by + dy as isize - 1, ny);
                    let mut row = 0.0;
                    for (dx, &wkx) in wx.iter().enumerate() {
                        let x = clamp_index(bx + dx as isize - 1, nx);
                        row += wkx * grid.get(x, y, z) as f64;
                    }
                    acc += wkz * wky * row;
                }
            }
            acc.clamp(0.0, 1.0) as f32
        })
        .collect();

    out.values_mut().copy_from_slice(&values);
    Ok(out)
}

/// Resamples the grid rotated by `angle` about the vertical (z) axis through
/// the bounding box center. Trilinear reconstruction; reads outside the grid
/// are 0.
pub fn rotate_volume(grid: &VoxelGrid, angle: f64) -> VoxelGrid {
    let res = grid.resolution();
    let mut out = VoxelGrid::zeros(res, grid.bbox_min(), grid.bbox_max());
    let center = grid.bbox_center();
    let voxel = grid.voxel_size();
    let inverse = Rotation3::from_axis_angle(&Vector3::z_axis(), -angle);

    let values: Vec<f32> = (0..grid.len())
        .into_par_iter()
        .map(|flat| {
            let i = flat % res[0];
            let j = (flat / res[0]) % res[1];
            let k = flat / (res[0] * res[1]);
            let world = grid.voxel_center(i, j, k);
            let src = center + inverse * (world - center);
            // World position to fractional input index.
            let fx = (src.x - grid.bbox_min().x) / voxel.x - 0.5;
            let fy = (src.y - grid.bbox_min().y) / voxel.y - 0.5;
            let fz = (src.z - grid.bbox_min().z) / voxel.z - 0.5;
            trilinear_zero_outside(grid, fx, fy, fz)
        })
        .collect();

    out.values_mut().copy_from_slice(&values);
    out
}

fn trilinear_zero_outside(grid: &VoxelGrid, fx: f64, fy: f64, fz: f64) -> f32 {
    let [nx, ny, nz] = grid.resolution();
    let (x0, y0, z0) = (fx.floor() as isize, fy.floor() as isize, fz.floor() as isize);
    let (tx, ty, tz) = (fx - x0 as f64, fy - y0 as f64, fz - z0 as f64);
    let read = |x: isize, y: isize, z: isize| -> f64 {
        if x < 0 || y < 0 || z < 0 || x >= nx as isize || y >= ny as isize || z >= nz as isize {
            0.0
        } else {
            grid.get(x as usize, y as usize, z as usize) as f64
        }
    };
    let mut acc = 0.0;
    for dz in 0..2 {
        let wz = if dz == 0 { 1.0 - tz } else { tz };
        for dy in 0..2 {
            let wy = if dy == 0 { 1.0 - ty } else { ty };
            for dx in 0..2 {
                let wx = if dx == 0 { 1.0 - tx } else { tx };
                acc += wx * wy * wz * read(x0 + dx, y0 + dy, z0 + dz);
            }
        }
    }
    acc as f32
}

/// Averages `factor`-cubed blocks into one voxel. The inverse direction of
/// `tricubic_upsample` for building coarse training inputs from native
/// high-resolution hulls.
pub fn box_downsample(grid: &VoxelGrid, factor: usize) -> Result<VoxelGrid, GeometryError> {
    if factor == 0 {
        return Err(GeometryError::UnsupportedFactor(0));
    }
    if factor == 1 {
        return Ok(grid.clone());
    }
    let res = grid.resolution();
    if res.iter().any(|&n| n % factor != 0) {
        return Err(GeometryError::IndivisibleResolution {
            factor,
            resolution: res,
        });
    }
    let out_res = [res[0] / factor, res[1] / factor, res[2] / factor];
    let mut out = VoxelGrid::zeros(out_res, grid.bbox_min(), grid.bbox_max());
    let norm = 1.0 / (factor * factor * factor) as f64;
    for k in 0..out_res[2] {
        for j in 0..out_res[1] {
            for i in 0..out_res[0] {
                let mut sum = 0.0;
                for dz in 0..factor {
                    for dy in 0..factor {
                        for dx in 0..factor {
                            sum +=
                                grid.get(i * factor + dx, j * factor + dy, k * factor + dz) as f64;
                        }
                    }
                }
                out.set(i, j, k, (sum * norm) as f32);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Point3;

    fn grid_from_fn(res: [usize; 3], f: impl Fn(f64, f64, f64) -> f64) -> VoxelGrid {
        let mut g = VoxelGrid::zeros(
            res,
            Point3::origin(),
            Point3::new(res[0] as f64, res[1] as f64, res[2] as f64),
        );
        for k in 0..res[2] {
            for j in 0..res[1] {
                for i in 0..res[0] {
                    // evaluate at integer index coordinates
                    g.set(i, j, k, f(i as f64, j as f64, k as f64) as f32);
                }
            }
        }
        g
    }

    #[test]
    fn factor_one_is_bitwise_identity() {
        let g = grid_from_fn([5, 4, 3], |x, y, z| ((x + 2.0 * y - z) * 0.01).abs() % 1.0);
        let up = tricubic_upsample(&g, 1).unwrap();
        assert_eq!(up, g);
    }

    #[test]
    fn constants_are_reproduced() {
        let mut g = VoxelGrid::zeros([6, 6, 6], Point3::origin(), Point3::new(1.0, 1.0, 1.0));
        g.values_mut().fill(0.3);
        let up = tricubic_upsample(&g, 4).unwrap();
        assert_eq!(up.resolution(), [24, 24, 24]);
        for &v in up.values() {
            assert!((v - 0.3).abs() < 1e-6, "constant not reproduced: {v}");
        }
    }

    #[test]
    fn unsupported_factor_is_rejected() {
        let g = VoxelGrid::zeros([4, 4, 4], Point3::origin(), Point3::new(1.0, 1.0, 1.0));
        assert!(matches!(
            tricubic_upsample(&g, 3),
            Err(GeometryError::UnsupportedFactor(3))
        ));
    }

    /// Cubic polynomial reproduction, checked against direct evaluation.
    /// Values are scaled into [0,1] so the output clamp stays inactive.
    #[test]
    fn cubic_polynomial_reproduced_on_interior() {
        let n = 10usize;
        let poly = |x: f64, y: f64, z: f64| (x.powi(3) + 2.0 * y * y - z) / 2000.0 + 0.3;
        let g = grid_from_fn([n, n, n], poly);
        for &factor in &[2usize, 4] {
            let up = tricubic_upsample(&g, factor).unwrap();
            let m = n * factor;
            let mut checked = 0;
            let mut max_err: f64 = 0.0;
            for k in 0..m {
                for j in 0..m {
                    for i in 0..m {
                        let u = |o: usize| (o as f64 + 0.5) / factor as f64 - 0.5;
                        let (ux, uy, uz) = (u(i), u(j), u(k));
                        let interior = |t: f64| t >= 1.0 && t <= (n - 3) as f64;
                        if interior(ux) && interior(uy) && interior(uz) {
                            let expect = poly(ux, uy, uz);
                            let err = (up.get(i, j, k) as f64 - expect).abs();
                            max_err = max_err.max(err);
                            checked += 1;
                        }
                    }
                }
            }
            assert!(checked > 0);
            assert!(
                max_err < 1e-6,
                "factor {factor}: max interior error {max_err:e}"
            );
        }
    }

    #[test]
    fn rotation_by_zero_is_identity() {
        let g = grid_from_fn([8, 8, 8], |x, y, z| ((x * y + z) * 0.003) % 1.0);
        let out = rotate_volume(&g, 0.0);
        for (a, b) in g.values().iter().zip(out.values()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn quarter_turn_permutes_impulse_index() {
        // For a cubic grid, a quarter turn about z maps voxel (i,j,k) to
        // (N-1-j, i, k).
        let n = 8;
        let mut g = VoxelGrid::zeros(
            [n, n, n],
            Point3::new(-1.0, -1.0, -1.0),
            Point3::new(1.0, 1.0, 1.0),
        );
        let (i, j, k) = (2, 1, 3);
        g.set(i, j, k, 1.0);
        let out = rotate_volume(&g, std::f64::consts::FRAC_PI_2);
        let expect = (n - 1 - j, i, k);
        for kk in 0..n {
            for jj in 0..n {
                for ii in 0..n {
                    let want = if (ii, jj, kk) == expect { 1.0 } else { 0.0 };
                    assert!(
                        (out.get(ii, jj, kk) - want).abs() < 1e-6,
                        "voxel ({ii},{jj},{kk}) = {}, want {want}",
                        out.get(ii, jj, kk)
                    );
                }
            }
        }
    }

    #[test]
    fn full_turn_recovers_interior() {
        let g = grid_from_fn([10, 10, 10], |x, y, z| {
            // smooth blob centered mid-grid
            let r2 = (x - 4.5).powi(2) + (y - 4.5).powi(2) + (z - 4.5).powi(2);
            (-r2 / 8.0).exp()
        });
        let out = rotate_volume(&g, 2.0 * std::f64::consts::PI);
        for k in 1..9 {
            for j in 1..9 {
                for i in 1..9 {
                    assert!((out.get(i, j, k) - g.get(i, j, k)).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn smooth_rotation_preserves_mass() {
        let g = grid_from_fn([16, 16, 16], |x, y, z| {
            let r2 = (x - 7.5).powi(2) + (y - 7.5).powi(2) + (z - 7.5).powi(2);
            (-r2 / 6.0).exp()
        });
        let out = rotate_volume(&g, 0.7);
        let ratio = out.mass() / g.mass();
        assert!(
            (ratio - 1.0).abs() < 0.02,
            "mass ratio after rotation: {ratio}"
        );
    }

    #[test]
    fn box_downsample_averages_blocks() {
        let g = grid_from_fn([4, 4, 4], |x, _, _| if x < 2.0 { 0.0 } else { 1.0 });
        let d = box_downsample(&g, 2).unwrap();
        assert_eq!(d.resolution(), [2, 2, 2]);
        assert_eq!(d.get(0, 0, 0), 0.0);
        assert_eq!(d.get(1, 0, 0), 1.0);
        assert!(matches!(
            box_downsample(&g, 3),
            Err(GeometryError::IndivisibleResolution { .. })
        ));
    }
}
