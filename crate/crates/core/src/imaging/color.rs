use serde::{Deserialize, Serialize};

use super::RasterImage;

/// A pixel in hue/saturation/value space. Hue is in degrees, `[0, 360)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HsvPixel {
    pub hue: f64,
    pub saturation: f64,
    pub value: f64,
}

/// Thresholds deciding which pixels count as red-like.
///
/// Hue must lie within `max_hue_offset` degrees of 0 on the color circle,
/// i.e. in `[360 - offset, 360) ∪ [0, offset]`, both ends inclusive.
/// The saturation and value floors keep near-white background and near-black
/// pixels, whose hue is meaningless, from counting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RedFilterConfig {
    pub max_hue_offset: f64,
    pub min_saturation: f64,
    pub min_value: f64,
}

impl Default for RedFilterConfig {
    fn default() -> Self {
        Self { max_hue_offset: 20.0, min_saturation: 0.2, min_value: 0.2 }
    }
}

/// Hexcone RGB to HSV conversion. Achromatic pixels get hue 0.
pub fn rgb_to_hsv(rgb: [f32; 3]) -> HsvPixel {
    let [r, g, b] = rgb.map(f64::from);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let saturation = if max > 0.0 { delta / max } else { 0.0 };
    let hue = if delta <= 0.0 {
        0.0
    } else if max == r {
        let h = 60.0 * ((g - b) / delta);
        if h < 0.0 {
            h + 360.0
        } else {
            h
        }
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    // -0.0 and rounding right at the wrap must land inside [0, 360)
    let hue = if hue >= 360.0 || hue == 0.0 { 0.0 } else { hue };
    HsvPixel { hue, saturation, value: max }
}

/// Inverse hexcone conversion.
pub fn hsv_to_rgb(p: HsvPixel) -> [f64; 3] {
    let c = p.value * p.saturation;
    let h = p.hue.rem_euclid(360.0) / 60.0;
    let x = c * (1.0 - ((h % 2.0) - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = p.value - c;
    [r + m, g + m, b + m]
}

#[inline]
pub fn is_red_like(p: HsvPixel, cfg: &RedFilterConfig) -> bool {
    let hue_ok = p.hue <= cfg.max_hue_offset || p.hue >= 360.0 - cfg.max_hue_offset;
    hue_ok && p.saturation >= cfg.min_saturation && p.value >= cfg.min_value
}

/// Number of red-like pixels in `img`.
pub fn count_red(img: &RasterImage, cfg: &RedFilterConfig) -> usize {
    img.pixels().filter(|&p| is_red_like(rgb_to_hsv(p), cfg)).count()
}
