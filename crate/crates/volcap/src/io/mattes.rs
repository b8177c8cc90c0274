//! Soft matte images: single-channel grayscale PNG, 8- or 16-bit, mapped
//! linearly to [0, 1].

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma};

use super::IoError;
use crate::camera::SoftMatte;

/// Writes a matte as 16-bit grayscale PNG.
pub fn write_matte(path: impl AsRef<Path>, matte: &SoftMatte) -> Result<(), IoError> {
    let path = path.as_ref();
    let img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(
        matte.width() as u32,
        matte.height() as u32,
        |x, y| {
            let v = matte.pixel(x as usize, y as usize).clamp(0.0, 1.0);
            Luma([(v * 65535.0).round() as u16])
        },
    );
    img.save(path).map_err(|e| IoError::Image {
        path: path.into(),
        source: e,
    })
}

/// Reads an 8- or 16-bit grayscale image as a matte.
pub fn read_matte(path: impl AsRef<Path>) -> Result<SoftMatte, IoError> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(IoError::MissingFile(path.into()));
    }
    let img = image::open(path).map_err(|e| IoError::Image {
        path: path.into(),
        source: e,
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let values: Vec<f32> = match img {
        DynamicImage::ImageLuma8(buf) => {
            buf.pixels().map(|p| p.0[0] as f32 / 255.0).collect()
        }
        DynamicImage::ImageLuma16(buf) => {
            buf.pixels().map(|p| p.0[0] as f32 / 65535.0).collect()
        }
        other => {
            // only single-channel mattes are accepted; reject rather than
            // silently convert color images
            return Err(IoError::Invalid {
                path: path.into(),
                message: format!(
                    "expected 8- or 16-bit grayscale, got {:?}",
                    other.color()
                ),
            });
        }
    };
    SoftMatte::new(w, h, values).map_err(|e| IoError::Invalid {
        path: path.into(),
        message: e.to_string(),
    })
}
