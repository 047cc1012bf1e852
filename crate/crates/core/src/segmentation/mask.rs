use serde::{Deserialize, Serialize};

use crate::imaging::{rgb_to_hsv, RasterImage};

/// Tissue detection parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskConfig {
    /// Radius of the disk used for morphological closing.
    pub close_radius: usize,
    /// Connected components with fewer pixels are dropped.
    pub min_component_px: usize,
    /// Lower bound on the saturation threshold. Otsu splits any histogram,
    /// including the sensor noise of an empty slide, so the automatic
    /// threshold is never allowed below this.
    pub saturation_floor: f64,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self { close_radius: 3, min_component_px: 500, saturation_floor: 0.08 }
    }
}

/// Binary tissue mask with the dimensions of its source slide.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TissueMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl TissueMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), width * height, "mask length must equal width*height");
        Self { width, height, bits }
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self::new(width, height, vec![false; width * height])
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let bits = (0..height).flat_map(|y| (0..width).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        Self::new(width, height, bits)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    /// Like [`get`](Self::get) but anything outside the raster is background.
    #[inline]
    pub fn get_signed(&self, x: i64, y: i64) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.bits[y as usize * self.width + x as usize]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Tissue pixel with at least one non-tissue 8-neighbor (out of bounds
    /// counts as non-tissue).
    pub fn is_boundary(&self, x: usize, y: usize) -> bool {
        if !self.get(x, y) {
            return false;
        }
        let (x, y) = (x as i64, y as i64);
        (-1..=1).any(|dy| (-1..=1).any(|dx| (dx, dy) != (0, 0) && !self.get_signed(x + dx, y + dy)))
    }

    /// Dilation by a disk of `radius`. Out-of-bounds pixels are ignored.
    pub fn dilate(&self, radius: usize) -> TissueMask {
        if radius == 0 {
            return self.clone();
        }
        let r = radius as i64;
        let (w, h) = (self.width, self.height);
        // horizontal half-width of the disk at each vertical offset
        let spans: Vec<(i64, usize)> = (-r..=r)
            .map(|dy| (dy, (((r * r - dy * dy) as f64).sqrt().floor()) as usize))
            .collect();
        let mut out = vec![false; w * h];
        let mut prefix = vec![0u32; w + 1];
        for sy in 0..h {
            let row = &self.bits[sy * w..(sy + 1) * w];
            if !row.iter().any(|&b| b) {
                continue;
            }
            for x in 0..w {
                prefix[x + 1] = prefix[x] + row[x] as u32;
            }
            for &(dy, half) in &spans {
                let ty = sy as i64 + dy;
                if ty < 0 || ty >= h as i64 {
                    continue;
                }
                let dst = &mut out[ty as usize * w..(ty as usize + 1) * w];
                for (x, d) in dst.iter_mut().enumerate() {
                    if *d {
                        continue;
                    }
                    let lo = x.saturating_sub(half);
                    let hi = (x + half + 1).min(w);
                    *d = prefix[hi] > prefix[lo];
                }
            }
        }
        TissueMask::new(w, h, out)
    }

    /// Erosion by a disk of `radius`. Out-of-bounds pixels are ignored, so a
    /// full mask stays full.
    pub fn erode(&self, radius: usize) -> TissueMask {
        let inverted = TissueMask::new(self.width, self.height, self.bits.iter().map(|b| !b).collect());
        let grown = inverted.dilate(radius);
        TissueMask::new(self.width, self.height, grown.bits.iter().map(|b| !b).collect())
    }

    pub fn close(&self, radius: usize) -> TissueMask {
        self.dilate(radius).erode(radius)
    }

    /// 8-connected component labels (0 = background, components numbered
    /// from 1 in raster order of their first pixel) and component sizes
    /// indexed by `label - 1`.
    pub fn components(&self) -> (Vec<u32>, Vec<usize>) {
        let (w, h) = (self.width, self.height);
        let mut labels = vec![0u32; w * h];
        let mut sizes = Vec::new();
        let mut stack = Vec::new();
        for start in 0..w * h {
            if !self.bits[start] || labels[start] != 0 {
                continue;
            }
            let label = sizes.len() as u32 + 1;
            let mut size = 0usize;
            labels[start] = label;
            stack.push(start);
            while let Some(i) = stack.pop() {
                size += 1;
                let (x, y) = ((i % w) as i64, (i / w) as i64);
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (nx, ny) = (x + dx, y + dy);
                        if self.get_signed(nx, ny) {
                            let j = ny as usize * w + nx as usize;
                            if labels[j] == 0 {
                                labels[j] = label;
                                stack.push(j);
                            }
                        }
                    }
                }
            }
            sizes.push(size);
        }
        (labels, sizes)
    }

    /// Drops 8-connected components smaller than `min_px`.
    pub fn remove_small_components(&self, min_px: usize) -> TissueMask {
        let (labels, sizes) = self.components();
        let bits = labels
            .iter()
            .map(|&l| l != 0 && sizes[l as usize - 1] >= min_px)
            .collect();
        TissueMask::new(self.width, self.height, bits)
    }
}

/// Otsu's threshold over values in `[0, 1]` using a 256-bin histogram.
///
/// Returns the upper edge of the background class, so `v > t` selects the
/// foreground. `None` when all values fall in a single bin.
pub fn otsu_threshold(values: impl Iterator<Item = f64>) -> Option<f64> {
    let mut hist = [0u64; 256];
    let mut total = 0u64;
    for v in values {
        hist[((v.clamp(0.0, 1.0) * 255.0).round()) as usize] += 1;
        total += 1;
    }
    if hist.iter().filter(|&&c| c > 0).count() < 2 {
        return None;
    }
    let total_f = total as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w_b, mut sum_b) = (0.0f64, 0.0f64);
    let (mut best, mut best_var) = (0usize, -1.0f64);
    for (i, &c) in hist.iter().enumerate().take(255) {
        w_b += c as f64;
        sum_b += i as f64 * c as f64;
        let w_f = total_f - w_b;
        if w_b == 0.0 || w_f == 0.0 {
            continue;
        }
        let diff = sum_b / w_b - (sum_all - sum_b) / w_f;
        let var = w_b * w_f * diff * diff;
        if var > best_var {
            best_var = var;
            best = i;
        }
    }
    // midway between the last background bin and the next one
    Some((best as f64 + 0.5) / 255.0)
}

/// Tissue mask: saturation above an automatic Otsu threshold, closed with a
/// disk and cleared of small components. An all-background slide yields an
/// empty mask, not an error.
pub fn detect_mask(slide: &RasterImage, cfg: &MaskConfig) -> TissueMask {
    let sat: Vec<f64> = slide.pixels().map(|p| rgb_to_hsv(p).saturation).collect();
    let threshold = otsu_threshold(sat.iter().copied())
        .unwrap_or(cfg.saturation_floor)
        .max(cfg.saturation_floor);
    let raw = TissueMask::new(slide.width(), slide.height(), sat.iter().map(|&s| s > threshold).collect());
    raw.close(cfg.close_radius).remove_small_components(cfg.min_component_px)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn otsu_splits_bimodal() {
        let vals = std::iter::repeat_n(0.05, 500).chain(std::iter::repeat_n(0.6, 300));
        let t = otsu_threshold(vals).unwrap();
        assert!(t > 0.05 && t < 0.6, "{t}");
        assert_eq!(otsu_threshold(std::iter::repeat_n(0.3, 10)), None);
    }

    #[test]
    fn white_slide_gives_empty_mask() {
        let slide = RasterImage::filled(64, 48, [1.0, 1.0, 1.0]);
        assert!(detect_mask(&slide, &MaskConfig::default()).is_empty());
    }

    #[test]
    fn saturated_slide_gives_full_mask() {
        let slide = RasterImage::filled(64, 48, [0.2, 0.3, 0.9]);
        let m = detect_mask(&slide, &MaskConfig::default());
        assert_eq!(m.count(), 64 * 48);
    }

    #[test]
    fn saturated_ellipse_on_white() {
        let (w, h) = (200, 150);
        let inside = |x: usize, y: usize| {
            let dx = (x as f64 - 100.0) / 70.0;
            let dy = (y as f64 - 75.0) / 45.0;
            dx * dx + dy * dy <= 1.0
        };
        let mut slide = RasterImage::filled(w, h, [0.96, 0.96, 0.97]);
        for y in 0..h {
            for x in 0..w {
                if inside(x, y) {
                    slide.set_pixel(x, y, [0.35, 0.45, 0.85]);
                }
            }
        }
        let m = detect_mask(&slide, &MaskConfig::default());
        let truth = TissueMask::from_fn(w, h, inside);
        let band = truth.dilate(2);
        let core = truth.erode(2);
        for y in 0..h {
            for x in 0..w {
                if m.get(x, y) {
                    assert!(band.get(x, y), "false tissue at {x},{y}");
                }
                if core.get(x, y) {
                    assert!(m.get(x, y), "missed tissue at {x},{y}");
                }
            }
        }
    }

    #[test]
    fn closing_fills_small_gaps() {
        let mut m = TissueMask::from_fn(40, 40, |x, y| (5..35).contains(&x) && (5..35).contains(&y));
        m.set(20, 20, false);
        m.set(21, 20, false);
        let closed = m.close(2);
        assert!(closed.get(20, 20) && closed.get(21, 20));
        assert_eq!(closed.count(), 30 * 30);
    }

    #[test]
    fn small_components_removed() {
        let m = TissueMask::from_fn(50, 50, |x, y| {
            ((2..4).contains(&x) && (2..4).contains(&y)) || ((20..40).contains(&x) && (20..40).contains(&y))
        });
        let (_, sizes) = m.components();
        assert_eq!(sizes, vec![4, 400]);
        assert_eq!(m.remove_small_components(10).count(), 400);
    }

    #[test]
    fn diagonal_pixels_are_one_component() {
        let m = TissueMask::from_fn(4, 4, |x, y| x == y);
        assert_eq!(m.components().1, vec![4]);
    }
}
