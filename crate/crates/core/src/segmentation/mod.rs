//! Tissue detection, border tracing and border-window extraction.

mod contour;
mod mask;
mod windows;

pub use contour::{trace_borders, BorderTrace, Point};
pub use mask::{detect_mask, otsu_threshold, MaskConfig, TissueMask};
pub use windows::{
    crop_window, enumerate_inference_windows, read_window_manifest, sample_training_windows,
    write_window_manifest, Rect, WindowGeometry, WindowSpec,
};

use thiserror::Error;

use crate::imaging::ImagingError;

#[derive(Debug, Error)]
pub enum SegmentationError {
    #[error("slide {0} has no detectable tissue border")]
    NoTissue(String),
    #[error("window count must be at least 1")]
    InvalidCount,
    #[error("inference stride must be at least 1")]
    InvalidStride,
    #[error("slide {width}x{height} is smaller than the {window}px window")]
    SlideTooSmall { width: usize, height: usize, window: usize },
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error("window manifest: {0}")]
    Csv(#[from] csv::Error),
    #[error("window manifest: {0}")]
    Io(#[from] std::io::Error),
}
