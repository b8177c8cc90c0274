//! Soft matte rendering of capsule bodies: per-pixel silhouette coverage by
//! ray-capsule tests with 2x2 supersampling.

use nalgebra::{Point3, Vector3};
use rayon::prelude::*;

use crate::camera::{CameraIntrinsics, CameraPose, SoftMatte};

/// Far extent of silhouette rays, millimetres.
const RAY_LENGTH: f64 = 1e7;

/// Renders the union silhouette of world-space capsules into a soft matte.
/// Each pixel is sampled at 4 subpixel positions; coverage is the fraction
/// of samples whose camera ray passes within a capsule radius of the
/// capsule axis, so values are in `[0, 1]` with antialiased edges and never
/// exceed 1 under overlap.
pub fn render_matte(
    capsules: &[(Point3<f64>, Point3<f64>, f64)],
    intrinsics: &CameraIntrinsics,
    pose: &CameraPose,
) -> SoftMatte {
    let [w, h] = intrinsics.image_size;
    let f = intrinsics.focal_length;
    let [ox, oy] = intrinsics.principal_point;
    let origin = Point3::from(pose.translation);
    let offsets = [-0.25, 0.25];

    let mut values = vec![0.0f32; w * h];
    let render_row = |y: usize, row: &mut [f32]| {
        for (x, value) in row.iter_mut().enumerate() {
            let mut hits = 0u32;
            for dy in offsets {
                for dx in offsets {
                    let px = x as f64 + dx;
                    let py = y as f64 + dy;
                    let dir_cam = Vector3::new((px - ox) / f, (py - oy) / f, 1.0).normalize();
                    let dir = pose.rotation * dir_cam;
                    let end = origin + dir * RAY_LENGTH;
                    for &(a, b, r) in capsules {
                        if segment_distance_sq(origin, end, a, b) <= r * r {
                            hits += 1;
                            break;
                        }
                    }
                }
            }
            *value = hits as f32 / 4.0;
        }
    };

    if w * h >= 4096 {
        values
            .par_chunks_mut(w)
            .enumerate()
            .for_each(|(y, row)| render_row(y, row));
    } else {
        values
            .chunks_mut(w)
            .enumerate()
            .for_each(|(y, row)| render_row(y, row));
    }
    SoftMatte::new(w, h, values).expect("buffer sized to the image")
}

/// Squared minimum distance between segments `p1q1` and `p2q2`.
fn segment_distance_sq(
    p1: Point3<f64>,
    q1: Point3<f64>,
    p2: Point3<f64>,
    q2: Point3<f64>,
) -> f64 {
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.dot(&d1);
    let e = d2.dot(&d2);
    let f = d2.dot(&r);

    let (mut s, mut t);
    if a <= f64::EPSILON && e <= f64::EPSILON {
        return r.dot(&r);
    }
    if a <= f64::EPSILON {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(&r);
        if e <= f64::EPSILON {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            s = if denom != 0.0 {
                ((b * f - c * e) / denom).clamp(0.0, 1.0)
            } else {
                0.0
            };
            t = (b * s + f) / e;
            if t < 0.0 {
                t = 0.0;
                s = (-c / a).clamp(0.0, 1.0);
            } else if t > 1.0 {
                t = 1.0;
                s = ((b - c) / a).clamp(0.0, 1.0);
            }
        }
    }
    let c1 = p1 + d1 * s;
    let c2 = p2 + d2 * t;
    (c1 - c2).norm_squared()
}
