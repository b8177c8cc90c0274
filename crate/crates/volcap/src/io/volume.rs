//! Volume files: one JSON header line, then raw little-endian f32 values in
//! x-fastest order.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use super::IoError;
use crate::grid::VoxelGrid;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct VolumeHeader {
    pub resolution: [usize; 3],
    pub bbox_min: [f64; 3],
    pub bbox_max: [f64; 3],
    pub dtype: String,
    /// Seed/config of the producing run, embedded for reproducibility.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub provenance: Option<serde_json::Value>,
}

pub fn write_volume(
    path: impl AsRef<Path>,
    grid: &VoxelGrid,
    provenance: Option<serde_json::Value>,
) -> Result<(), IoError> {
    let path = path.as_ref();
    let header = VolumeHeader {
        resolution: grid.resolution(),
        bbox_min: [grid.bbox_min().x, grid.bbox_min().y, grid.bbox_min().z],
        bbox_max: [grid.bbox_max().x, grid.bbox_max().y, grid.bbox_max().z],
        dtype: "f32le".into(),
        provenance,
    };
    let file = std::fs::File::create(path).map_err(|e| IoError::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, &header)
        .map_err(|e| IoError::io(path, std::io::Error::other(e)))?;
    w.write_all(b"\n").map_err(|e| IoError::io(path, e))?;
    for &v in grid.values() {
        w.write_all(&v.to_le_bytes())
            .map_err(|e| IoError::io(path, e))?;
    }
    w.flush().map_err(|e| IoError::io(path, e))?;
    Ok(())
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<(VoxelGrid, VolumeHeader), IoError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| IoError::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut header_line = String::new();
    r.read_line(&mut header_line)
        .map_err(|e| IoError::io(path, e))?;
    let header: VolumeHeader =
        serde_json::from_str(header_line.trim_end()).map_err(|e| IoError::CorruptHeader {
            path: path.into(),
            message: e.to_string(),
        })?;
    if header.dtype != "f32le" {
        return Err(IoError::CorruptHeader {
            path: path.into(),
            message: format!("unsupported dtype {:?}", header.dtype),
        });
    }
    if header.resolution.iter().any(|&n| n == 0) {
        return Err(IoError::CorruptHeader {
            path: path.into(),
            message: format!("zero resolution component in {:?}", header.resolution),
        });
    }
    for a in 0..3 {
        if !(header.bbox_min[a] < header.bbox_max[a]) {
            return Err(IoError::CorruptHeader {
                path: path.into(),
                message: format!(
                    "bbox_min {:?} not strictly below bbox_max {:?}",
                    header.bbox_min, header.bbox_max
                ),
            });
        }
    }
    let count: usize = header.resolution.iter().product();
    let expected = count * 4;
    let mut payload = Vec::with_capacity(expected);
    r.read_to_end(&mut payload)
        .map_err(|e| IoError::io(path, e))?;
    if payload.len() < expected {
        return Err(IoError::TruncatedData {
            path: path.into(),
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(IoError::TrailingData {
            path: path.into(),
            expected,
            found: payload.len(),
        });
    }
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let grid = VoxelGrid::from_values(
        header.resolution,
        Point3::new(header.bbox_min[0], header.bbox_min[1], header.bbox_min[2]),
        Point3::new(header.bbox_max[0], header.bbox_max[1], header.bbox_max[2]),
        values,
    )
    .map_err(|e| IoError::Invalid {
        path: path.into(),
        message: e.to_string(),
    })?;
    Ok((grid, header))
}
