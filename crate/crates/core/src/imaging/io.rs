use std::path::Path;

use image::{DynamicImage, GrayImage};

use super::{to_grayscale, Raster};
use crate::error::{Error, Result};

/// Reads a PNG or binary PGM as a grayscale image in `[0, 1]`.
///
/// Colour inputs are converted with the standard luma weights.
pub fn read_image(path: impl AsRef<Path>) -> Result<Raster<f32>> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|source| Error::Codec {
        path: path.to_path_buf(),
        source,
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(g) => Raster::new(h, w, g.into_raw().into_iter().map(|v| v as f32 / 255.0).collect()),
        DynamicImage::ImageLumaA8(_) | DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA16(_) => {
            let g = img.to_luma8();
            Raster::new(h, w, g.into_raw().into_iter().map(|v| v as f32 / 255.0).collect())
        }
        other => {
            let rgb: Vec<f32> = other.to_rgb8().into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
            to_grayscale(h, w, &rgb)
        }
    }
}

/// Writes an 8-bit grayscale PNG; values are clamped to `[0, 1]` and rounded.
pub fn write_png(path: impl AsRef<Path>, raster: &Raster<f32>) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = raster
        .pixels()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let img = GrayImage::from_raw(raster.width() as u32, raster.height() as u32, bytes)
        .ok_or_else(|| Error::shape("raster does not fit a gray image"))?;
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Codec {
            path: path.to_path_buf(),
            source,
        })
}
