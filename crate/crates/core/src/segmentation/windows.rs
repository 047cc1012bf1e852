use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BorderTrace, Point, SegmentationError};
use crate::imaging::{resize, RasterImage};

/// Capture size on the slide and the side length windows are resized to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowGeometry {
    pub size: usize,
    pub resized_to: usize,
}

impl Default for WindowGeometry {
    fn default() -> Self {
        Self { size: 224, resized_to: 28 }
    }
}

/// A square window centered on a border pixel of a slide.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub slide_id: String,
    pub patient_id: String,
    pub center: Point,
    pub size: usize,
    pub resized_to: usize,
}

/// Axis-aligned rectangle in slide pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

impl Rect {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && y >= self.y0 && x < self.x0 + self.width && y < self.y0 + self.height
    }
}

impl WindowSpec {
    /// Capture rectangle centered on `center` and shifted to lie inside a
    /// `slide_w`×`slide_h` slide.
    pub fn rect(&self, slide_w: usize, slide_h: usize) -> Result<Rect, SegmentationError> {
        if slide_w < self.size || slide_h < self.size {
            return Err(SegmentationError::SlideTooSmall {
                width: slide_w,
                height: slide_h,
                window: self.size,
            });
        }
        let half = self.size / 2;
        let x0 = self.center.x.saturating_sub(half).min(slide_w - self.size);
        let y0 = self.center.y.saturating_sub(half).min(slide_h - self.size);
        Ok(Rect { x0, y0, width: self.size, height: self.size })
    }
}

/// Draws `n` window centers uniformly from the union of all trace points.
///
/// Centers are distinct when the union has at least `n` points; otherwise
/// points are drawn with replacement.
pub fn sample_training_windows(
    slide_id: &str,
    patient_id: &str,
    traces: &[BorderTrace],
    n: usize,
    seed: u64,
    geometry: WindowGeometry,
) -> Result<Vec<WindowSpec>, SegmentationError> {
    let mut pool: Vec<Point> = traces.iter().flat_map(|t| t.points.iter().copied()).collect();
    pool.sort_unstable();
    pool.dedup();
    if pool.is_empty() {
        return Err(SegmentationError::NoTissue(slide_id.to_string()));
    }
    if n == 0 {
        return Err(SegmentationError::InvalidCount);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks: Vec<usize> = if n <= pool.len() {
        rand::seq::index::sample(&mut rng, pool.len(), n).into_vec()
    } else {
        use rand::Rng;
        (0..n).map(|_| rng.random_range(0..pool.len())).collect()
    };
    Ok(picks
        .into_iter()
        .map(|i| make_spec(slide_id, patient_id, pool[i], geometry))
        .collect())
}

/// Walks every trace and emits a window every `stride` points.
pub fn enumerate_inference_windows(
    slide_id: &str,
    patient_id: &str,
    traces: &[BorderTrace],
    stride: usize,
    geometry: WindowGeometry,
) -> Result<Vec<WindowSpec>, SegmentationError> {
    if stride == 0 {
        return Err(SegmentationError::InvalidStride);
    }
    Ok(traces
        .iter()
        .flat_map(|t| t.points.iter().step_by(stride))
        .map(|&p| make_spec(slide_id, patient_id, p, geometry))
        .collect())
}

fn make_spec(slide_id: &str, patient_id: &str, center: Point, g: WindowGeometry) -> WindowSpec {
    WindowSpec {
        slide_id: slide_id.to_string(),
        patient_id: patient_id.to_string(),
        center,
        size: g.size,
        resized_to: g.resized_to,
    }
}

/// Crops the clamped capture rectangle and box-resizes it.
pub fn crop_window(slide: &RasterImage, spec: &WindowSpec) -> Result<RasterImage, SegmentationError> {
    let r = spec.rect(slide.width(), slide.height())?;
    let patch = slide.crop(r.x0, r.y0, r.width, r.height);
    Ok(resize(&patch, spec.resized_to, spec.resized_to)?)
}

#[derive(Debug, Serialize, Deserialize)]
struct WindowRow {
    slide_id: String,
    patient_id: String,
    center_x: usize,
    center_y: usize,
    size: usize,
}

/// Writes windows as CSV rows `slide_id,patient_id,center_x,center_y,size`.
pub fn write_window_manifest(path: impl AsRef<Path>, windows: &[WindowSpec]) -> Result<(), SegmentationError> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    for s in windows {
        w.serialize(WindowRow {
            slide_id: s.slide_id.clone(),
            patient_id: s.patient_id.clone(),
            center_x: s.center.x,
            center_y: s.center.y,
            size: s.size,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_window_manifest(path: impl AsRef<Path>, resized_to: usize) -> Result<Vec<WindowSpec>, SegmentationError> {
    let mut r = csv::Reader::from_path(path.as_ref())?;
    r.deserialize::<WindowRow>()
        .map(|row| {
            let row = row?;
            Ok(WindowSpec {
                slide_id: row.slide_id,
                patient_id: row.patient_id,
                center: Point::new(row.center_x, row.center_y),
                size: row.size,
                resized_to,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{count_red, RedFilterConfig};

    fn ring(n: usize) -> BorderTrace {
        BorderTrace {
            points: (0..n).map(|i| Point::new(i % 400, i / 400)).collect(),
            closed: true,
            area: n,
        }
    }

    #[test]
    fn stride_counts() {
        let g = WindowGeometry::default();
        assert_eq!(enumerate_inference_windows("s", "p", &[ring(360)], 120, g).unwrap().len(), 3);
        assert_eq!(enumerate_inference_windows("s", "p", &[ring(361)], 120, g).unwrap().len(), 4);
        assert_eq!(enumerate_inference_windows("s", "p", &[ring(37)], 1, g).unwrap().len(), 37);
        assert!(enumerate_inference_windows("s", "p", &[], 10, g).unwrap().is_empty());
        assert!(enumerate_inference_windows("s", "p", &[ring(5)], 0, g).is_err());
    }

    #[test]
    fn every_trace_point_near_an_emitted_center() {
        let t = ring(1000);
        let stride = 112;
        let ws = enumerate_inference_windows("s", "p", std::slice::from_ref(&t), stride, WindowGeometry::default()).unwrap();
        let centers: Vec<usize> = ws
            .iter()
            .map(|w| t.points.iter().position(|p| *p == w.center).unwrap())
            .collect();
        let n = t.len();
        for i in 0..n {
            let arc = centers
                .iter()
                .map(|&c| {
                    let d = i.abs_diff(c);
                    d.min(n - d)
                })
                .min()
                .unwrap();
            assert!(arc <= stride / 2 + 1, "point {i} is {arc} from nearest center");
        }
    }

    #[test]
    fn sampling_is_seeded_and_on_trace() {
        let t = ring(6);
        let g = WindowGeometry::default();
        let a = sample_training_windows("s", "p", std::slice::from_ref(&t), 5, 42, g).unwrap();
        let b = sample_training_windows("s", "p", std::slice::from_ref(&t), 5, 42, g).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
        for w in &a {
            assert!(t.points.contains(&w.center));
        }
        let distinct: std::collections::BTreeSet<_> = a.iter().map(|w| w.center).collect();
        assert_eq!(distinct.len(), 5);
        let c = sample_training_windows("s", "p", std::slice::from_ref(&t), 5, 43, g).unwrap();
        assert_ne!(a, c);
        // more than the pool: with replacement
        assert_eq!(sample_training_windows("s", "p", &[t], 50, 1, g).unwrap().len(), 50);
    }

    #[test]
    fn sampling_without_tissue_fails() {
        assert!(matches!(
            sample_training_windows("s", "p", &[], 5, 1, WindowGeometry::default()),
            Err(SegmentationError::NoTissue(_))
        ));
    }

    #[test]
    fn corner_window_is_clamped() {
        let slide = RasterImage::filled(300, 260, [0.3, 0.4, 0.8]);
        for center in [Point::new(0, 0), Point::new(299, 259), Point::new(5, 250)] {
            let spec = make_spec("s", "p", center, WindowGeometry::default());
            let r = spec.rect(300, 260).unwrap();
            assert!(r.x0 + r.width <= 300 && r.y0 + r.height <= 260);
            let w = crop_window(&slide, &spec).unwrap();
            assert_eq!((w.width(), w.height()), (28, 28));
            assert!(w.data().iter().zip([0.3f32, 0.4, 0.8].iter().cycle()).all(|(a, b)| (a - b).abs() < 1e-6));
        }
    }

    #[test]
    fn slide_smaller_than_window() {
        let slide = RasterImage::filled(100, 300, [0.5; 3]);
        let spec = make_spec("s", "p", Point::new(50, 50), WindowGeometry::default());
        assert!(matches!(crop_window(&slide, &spec), Err(SegmentationError::SlideTooSmall { .. })));
    }

    #[test]
    fn red_spot_survives_crop() {
        let mut slide = RasterImage::filled(400, 400, [0.96, 0.96, 0.96]);
        for y in 190..210 {
            for x in 190..210 {
                slide.set_pixel(x, y, [0.9, 0.1, 0.1]);
            }
        }
        let spec = make_spec("s", "p", Point::new(180, 220), WindowGeometry::default());
        let w = crop_window(&slide, &spec).unwrap();
        assert!(count_red(&w, &RedFilterConfig::default()) > 0);
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.csv");
        let ws = vec![
            make_spec("slide_a", "p1", Point::new(3, 4), WindowGeometry::default()),
            make_spec("slide_b", "p2", Point::new(30, 40), WindowGeometry::default()),
        ];
        write_window_manifest(&path, &ws).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("slide_id,patient_id,center_x,center_y,size\n"));
        assert_eq!(read_window_manifest(&path, 28).unwrap(), ws);
    }
}
