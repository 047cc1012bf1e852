//! Raster container, color conversion, red-pixel filtering and image I/O.
//!
//! Every image in the pipeline (slides, windows, reconstructions) is a
//! [`RasterImage`]: row-major interleaved RGB with intensities in `[0, 1]`.
//! Eight-bit quantization only happens at the PNG boundary.

mod color;
mod io;
mod raster;

pub use color::{count_red, hsv_to_rgb, is_red_like, rgb_to_hsv, HsvPixel, RedFilterConfig};
pub use io::{load_image, save_image};
pub use raster::{resize, RasterImage};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("image data length {got} does not match {width}x{height}x3")]
    DataLength { width: usize, height: usize, got: usize },
    #[error("intensity {value} at index {index} is outside [0, 1]")]
    OutOfRange { index: usize, value: f32 },
    #[error("image dimensions must be non-zero (got {width}x{height})")]
    ZeroDimension { width: usize, height: usize },
    #[error("image file not found: {0}")]
    MissingFile(std::path::PathBuf),
    #[error("unsupported image format in {path}: {detail}")]
    UnsupportedDepth { path: std::path::PathBuf, detail: String },
    #[error("malformed image {path}: {detail}")]
    Malformed { path: std::path::PathBuf, detail: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}
