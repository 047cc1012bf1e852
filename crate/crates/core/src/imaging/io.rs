use std::path::Path;

use image::{DynamicImage, ImageReader, RgbImage};

use super::{ImagingError, RasterImage};

/// Loads an 8-bit PNG as a normalized RGB raster. Gray and alpha channels
/// are expanded/dropped; 16-bit and float images are rejected.
pub fn load_image(path: impl AsRef<Path>) -> Result<RasterImage, ImagingError> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(ImagingError::MissingFile(path.to_path_buf()));
    }
    let reader = ImageReader::open(path)
        .and_then(|r| r.with_guessed_format())
        .map_err(|source| ImagingError::Io { path: path.to_path_buf(), source })?;
    let decoded = reader.decode().map_err(|e| ImagingError::Malformed {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    let rgb = match decoded {
        DynamicImage::ImageRgb8(img) => img,
        img @ (DynamicImage::ImageLuma8(_)
        | DynamicImage::ImageLumaA8(_)
        | DynamicImage::ImageRgba8(_)) => img.to_rgb8(),
        other => {
            return Err(ImagingError::UnsupportedDepth {
                path: path.to_path_buf(),
                detail: format!("{:?}", other.color()),
            })
        }
    };
    let (w, h) = rgb.dimensions();
    let data = rgb.into_raw().into_iter().map(|b| b as f32 / 255.0).collect();
    RasterImage::new(w as usize, h as usize, data)
}

/// Writes an 8-bit RGB PNG, rounding each intensity to the nearest level.
pub fn save_image(img: &RasterImage, path: impl AsRef<Path>) -> Result<(), ImagingError> {
    let path = path.as_ref();
    let bytes: Vec<u8> = img
        .data()
        .iter()
        .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    let buf = RgbImage::from_raw(img.width() as u32, img.height() as u32, bytes)
        .expect("raster length is validated on construction");
    buf.save_with_format(path, image::ImageFormat::Png).map_err(|e| match e {
        image::ImageError::IoError(source) => ImagingError::Io { path: path.to_path_buf(), source },
        other => ImagingError::Malformed { path: path.to_path_buf(), detail: other.to_string() },
    })
}
