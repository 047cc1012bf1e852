//! Window scoring by loss of red-like pixels in the reconstruction.
//!
//! `F_red = red(original) / red(reconstruction)`. A window is positive when
//! `F_red > 1` strictly. With an empty reconstruction count, `F_red` is
//! `+inf` if the original had red (all of it was erased) and `1` if neither
//! had any.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autoencoder::{AutoencoderModel, ModelError};
use crate::imaging::{count_red, RasterImage, RedFilterConfig};
use crate::segmentation::{Point, WindowSpec};

#[derive(Debug, Error)]
pub enum AnomalyError {
    #[error("original is {0}x{1} but reconstruction is {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("score table: {0}")]
    Csv(#[from] csv::Error),
    #[error("score table: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowScore {
    pub window: WindowSpec,
    pub red_orig: usize,
    pub red_recon: usize,
    pub f_red: f64,
    pub positive: bool,
}

/// Ratio of red-like counts under the zero-denominator convention above.
pub fn f_red_from_counts(red_orig: usize, red_recon: usize) -> f64 {
    match (red_orig, red_recon) {
        (0, 0) => 1.0,
        (_, 0) => f64::INFINITY,
        (a, b) => a as f64 / b as f64,
    }
}

pub fn f_red(original: &RasterImage, reconstruction: &RasterImage, cfg: &RedFilterConfig) -> Result<f64, AnomalyError> {
    check_dims(original, reconstruction)?;
    Ok(f_red_from_counts(count_red(original, cfg), count_red(reconstruction, cfg)))
}

fn check_dims(a: &RasterImage, b: &RasterImage) -> Result<(), AnomalyError> {
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(AnomalyError::DimensionMismatch(a.width(), a.height(), b.width(), b.height()));
    }
    Ok(())
}

/// Scores an already reconstructed window.
pub fn score_reconstruction(
    spec: &WindowSpec,
    original: &RasterImage,
    reconstruction: &RasterImage,
    cfg: &RedFilterConfig,
) -> Result<WindowScore, AnomalyError> {
    check_dims(original, reconstruction)?;
    let red_orig = count_red(original, cfg);
    let red_recon = count_red(reconstruction, cfg);
    let f = f_red_from_counts(red_orig, red_recon);
    Ok(WindowScore { window: spec.clone(), red_orig, red_recon, f_red: f, positive: f > 1.0 })
}

pub fn score_window(
    model: &AutoencoderModel,
    window_img: &RasterImage,
    spec: &WindowSpec,
    cfg: &RedFilterConfig,
) -> Result<WindowScore, AnomalyError> {
    let recon = model.reconstruct(std::slice::from_ref(window_img))?;
    score_reconstruction(spec, window_img, &recon[0], cfg)
}

/// Scores many windows, reconstructing them in chunks of `chunk` images.
///
/// Inference batch norm uses running statistics, so chunking does not
/// change any score.
pub fn score_windows(
    model: &AutoencoderModel,
    windows: &[(WindowSpec, RasterImage)],
    cfg: &RedFilterConfig,
    chunk: usize,
) -> Result<Vec<WindowScore>, AnomalyError> {
    let mut out = Vec::with_capacity(windows.len());
    for part in windows.chunks(chunk.max(1)) {
        let images: Vec<RasterImage> = part.iter().map(|(_, img)| img.clone()).collect();
        let recon = model.reconstruct(&images)?;
        for ((spec, img), rec) in part.iter().zip(&recon) {
            out.push(score_reconstruction(spec, img, rec, cfg)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct ScoreRow {
    slide_id: String,
    patient_id: String,
    center_x: usize,
    center_y: usize,
    red_orig: usize,
    red_recon: usize,
    f_red: String,
    positive: bool,
}

fn format_f_red(f: f64) -> String {
    if f.is_infinite() {
        "inf".to_string()
    } else {
        format!("{f}")
    }
}

/// Writes `slide_id,patient_id,center_x,center_y,red_orig,red_recon,f_red,positive`.
pub fn write_scores(path: impl AsRef<Path>, scores: &[WindowScore]) -> Result<(), AnomalyError> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    for s in scores {
        w.serialize(ScoreRow {
            slide_id: s.window.slide_id.clone(),
            patient_id: s.window.patient_id.clone(),
            center_x: s.window.center.x,
            center_y: s.window.center.y,
            red_orig: s.red_orig,
            red_recon: s.red_recon,
            f_red: format_f_red(s.f_red),
            positive: s.positive,
        })?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Reads a score table; window size fields are filled from `size`/`resized_to`.
pub fn read_scores(path: impl AsRef<Path>, size: usize, resized_to: usize) -> Result<Vec<WindowScore>, AnomalyError> {
    let mut r = csv::Reader::from_path(path.as_ref())?;
    r.deserialize::<ScoreRow>()
        .map(|row| {
            let row = row?;
            let f_red = match row.f_red.as_str() {
                "inf" => f64::INFINITY,
                s => s.parse().map_err(|_| AnomalyError::Parse(format!("f_red value {s:?}")))?,
            };
            Ok(WindowScore {
                window: WindowSpec {
                    slide_id: row.slide_id,
                    patient_id: row.patient_id,
                    center: Point::new(row.center_x, row.center_y),
                    size,
                    resized_to,
                },
                red_orig: row.red_orig,
                red_recon: row.red_recon,
                f_red,
                positive: row.positive,
            })
        })
        .collect()
}
