//! Procedural stained slides with known ground truth.
//!
//! Tissue is drawn as a few ellipses whose radius is perturbed by low-order
//! harmonics, filled with blue hues on a near-white background. Positive
//! slides get Poisson-distributed red discs centered near tissue borders.
//!
//! Texture noise only perturbs saturation and value, never hue, and the
//! background saturation plus noise stays below the red filter's saturation
//! floor, so negative slides contain no red-like pixel at all.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnosis::Label;
use crate::evaluation::{write_manifest, DensityClass, EvalError, ManifestEntry, SlideRole};
use crate::imaging::{hsv_to_rgb, save_image, HsvPixel, ImagingError, RasterImage, RedFilterConfig};
use crate::segmentation::{trace_borders, BorderTrace, Rect, TissueMask};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Manifest(#[from] EvalError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("ground truth: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub n_blobs: usize,
    /// Range of the unperturbed ellipse semi-axes, in pixels.
    pub blob_radius: [f64; 2],
    /// Degrees.
    pub tissue_hue: [f64; 2],
    pub tissue_saturation: [f64; 2],
    pub tissue_value: [f64; 2],
    pub background_saturation: f64,
    pub background_value: f64,
    /// Expected spots per 1000 border pixels; 0 makes a negative slide.
    pub spot_density: f64,
    pub spot_radius: [usize; 2],
    /// Degrees around 0.
    pub spot_hue: [f64; 2],
    pub spot_saturation: [f64; 2],
    pub spot_value: [f64; 2],
    /// Half-width of the uniform per-pixel saturation/value jitter.
    pub texture_noise: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            width: 1024,
            height: 768,
            n_blobs: 3,
            blob_radius: [80.0, 170.0],
            tissue_hue: [200.0, 250.0],
            tissue_saturation: [0.3, 0.5],
            tissue_value: [0.75, 0.9],
            background_saturation: 0.03,
            background_value: 0.95,
            spot_density: 0.0,
            spot_radius: [2, 6],
            spot_hue: [-15.0, 15.0],
            spot_saturation: [0.85, 1.0],
            spot_value: [0.75, 0.95],
            texture_noise: 0.04,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidSpec(m.to_string()));
        let ordered = |r: [f64; 2]| r[0] <= r[1];
        if self.n_blobs == 0 {
            return bad("n_blobs must be at least 1");
        }
        if !(ordered(self.blob_radius) && self.blob_radius[0] >= 10.0) {
            return bad("blob_radius must be an ordered range starting at 10 px or more");
        }
        let reach = 2.0 * self.blob_radius[1] * (1.0 + MAX_WARP) + 2.0 * MARGIN as f64;
        if reach > self.width.min(self.height) as f64 {
            return bad("blobs of the largest radius do not fit on the slide");
        }
        if !(self.spot_density >= 0.0 && self.spot_density.is_finite()) {
            return bad("spot_density must be a non-negative number");
        }
        if self.spot_radius[0] > self.spot_radius[1] {
            return bad("spot_radius range is reversed");
        }
        for r in [self.tissue_hue, self.tissue_saturation, self.tissue_value, self.spot_hue, self.spot_saturation, self.spot_value] {
            if !ordered(r) {
                return bad("every range must be ordered [low, high]");
            }
        }
        let red = RedFilterConfig::default();
        if self.background_saturation + self.texture_noise >= red.min_saturation {
            return bad("background saturation plus noise must stay below the red filter's saturation floor");
        }
        let hue_reach = red.max_hue_offset;
        let tissue_is_red = self.tissue_hue[0] <= hue_reach || self.tissue_hue[1] >= 360.0 - hue_reach;
        if tissue_is_red {
            return bad("tissue hue band overlaps the red band");
        }
        if self.spot_hue[0] < -hue_reach || self.spot_hue[1] > hue_reach {
            return bad("spot hue band must lie inside the red band");
        }
        if self.spot_saturation[0] - self.texture_noise < red.min_saturation
            || self.spot_value[0] - self.texture_noise < red.min_value
        {
            return bad("spots must stay red-like under texture noise");
        }
        Ok(())
    }
}

const MARGIN: usize = 16;
const HARMONICS: usize = 4;
// upper bound of the harmonic radius perturbation
const MAX_WARP: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spot {
    pub x: usize,
    pub y: usize,
    pub radius: usize,
}

impl Spot {
    fn covers(&self, x: usize, y: usize) -> bool {
        let (dx, dy) = (x as f64 - self.x as f64, y as f64 - self.y as f64);
        dx * dx + dy * dy <= (self.radius * self.radius) as f64
    }

    /// Whether any pixel of the disc lies inside `r`.
    pub fn touches(&self, r: &Rect) -> bool {
        let cx = self.x.clamp(r.x0, r.x0 + r.width - 1);
        let cy = self.y.clamp(r.y0, r.y0 + r.height - 1);
        self.covers(cx, cy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthGroundTruth {
    pub slide_id: String,
    pub patient_id: String,
    pub label: Label,
    pub spot_density: f64,
    #[serde(with = "mask_rle")]
    pub mask: TissueMask,
    pub borders: Vec<BorderTrace>,
    pub spots: Vec<Spot>,
}

impl SynthGroundTruth {
    pub fn spots_in(&self, r: &Rect) -> impl Iterator<Item = &Spot> + '_ {
        let r = *r;
        self.spots.iter().filter(move |s| s.touches(&r))
    }

    pub fn border_len(&self) -> usize {
        self.borders.iter().map(|b| b.len()).sum()
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<(), SynthError> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|source| SynthError::Io { path: path.to_path_buf(), source })
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self, SynthError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| SynthError::Io { path: path.to_path_buf(), source })?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// `{width, height, runs: [[start, len], ...]}` over the raster-order bits.
mod mask_rle {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::segmentation::TissueMask;

    #[derive(Serialize, Deserialize)]
    struct Rle {
        width: usize,
        height: usize,
        runs: Vec<[usize; 2]>,
    }

    pub fn serialize<S: Serializer>(mask: &TissueMask, s: S) -> Result<S::Ok, S::Error> {
        let mut runs = Vec::new();
        let bits = mask.bits();
        let mut i = 0;
        while i < bits.len() {
            if bits[i] {
                let start = i;
                while i < bits.len() && bits[i] {
                    i += 1;
                }
                runs.push([start, i - start]);
            } else {
                i += 1;
            }
        }
        Rle { width: mask.width(), height: mask.height(), runs }.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<TissueMask, D::Error> {
        let rle = Rle::deserialize(d)?;
        let n = rle.width * rle.height;
        let mut bits = vec![false; n];
        for [start, len] in rle.runs {
            let end = start.checked_add(len).filter(|&e| e <= n).ok_or_else(|| serde::de::Error::custom("run outside the mask"))?;
            bits[start..end].fill(true);
        }
        Ok(TissueMask::new(rle.width, rle.height, bits))
    }
}

struct Blob {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    angle: f64,
    amps: [f64; HARMONICS],
    phases: [f64; HARMONICS],
    color: HsvPixel,
}

impl Blob {
    fn random(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Self {
        let a = rng.random_range(spec.blob_radius[0]..=spec.blob_radius[1]);
        let b = rng.random_range(spec.blob_radius[0]..=spec.blob_radius[1]);
        let reach = a.max(b) * (1.0 + MAX_WARP) + MARGIN as f64;
        let cx = rng.random_range(reach..=spec.width as f64 - reach);
        let cy = rng.random_range(reach..=spec.height as f64 - reach);
        let mut amps = [0.0; HARMONICS];
        let mut phases = [0.0; HARMONICS];
        for k in 0..HARMONICS {
            // the amplitudes sum to at most MAX_WARP
            amps[k] = rng.random_range(0.0..=MAX_WARP / HARMONICS as f64);
            phases[k] = rng.random_range(0.0..TAU);
        }
        Self {
            cx,
            cy,
            a,
            b,
            angle: rng.random_range(0.0..TAU),
            amps,
            phases,
            color: HsvPixel {
                hue: uniform(rng, spec.tissue_hue),
                saturation: uniform(rng, spec.tissue_saturation),
                value: uniform(rng, spec.tissue_value),
            },
        }
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (s, c) = self.angle.sin_cos();
        let u = (dx * c + dy * s) / self.a;
        let v = (-dx * s + dy * c) / self.b;
        let theta = v.atan2(u);
        let warp: f64 = (0..HARMONICS)
            .map(|k| self.amps[k] * ((k + 2) as f64 * theta + self.phases[k]).cos())
            .sum();
        (u * u + v * v).sqrt() < 1.0 + warp
    }

    fn bounds(&self, w: usize, h: usize) -> (usize, usize, usize, usize) {
        let r = self.a.max(self.b) * (1.0 + MAX_WARP) + 1.0;
        let lo = |c: f64| (c - r).floor().max(0.0) as usize;
        (lo(self.cx), lo(self.cy), ((self.cx + r).ceil() as usize).min(w), ((self.cy + r).ceil() as usize).min(h))
    }
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..=r[1])
    }
}

fn to_rgb(p: HsvPixel) -> [f32; 3] {
    let c = hsv_to_rgb(p);
    [c[0] as f32, c[1] as f32, c[2] as f32]
}

fn jitter(rng: &mut ChaCha8Rng, base: HsvPixel, noise: f64) -> HsvPixel {
    let mut n = || if noise > 0.0 { rng.random_range(-noise..=noise) } else { 0.0 };
    HsvPixel {
        hue: base.hue,
        saturation: (base.saturation + n()).clamp(0.0, 1.0),
        value: (base.value + n()).clamp(0.0, 1.0),
    }
}

/// Renders one slide. Ids on the returned ground truth are left empty.
pub fn generate_slide(spec: &SynthSpec) -> Result<(RasterImage, SynthGroundTruth), SynthError> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let blobs: Vec<Blob> = (0..spec.n_blobs).map(|_| Blob::random(spec, &mut rng)).collect();

    // index of the topmost blob covering each pixel
    let mut owner: Vec<Option<usize>> = vec![None; w * h];
    for (i, blob) in blobs.iter().enumerate() {
        let (x0, y0, x1, y1) = blob.bounds(w, h);
        for y in y0..y1 {
            for x in x0..x1 {
                if blob.contains(x as f64 + 0.5, y as f64 + 0.5) {
                    owner[y * w + x] = Some(i);
                }
            }
        }
    }
    let mask = TissueMask::new(w, h, owner.iter().map(Option::is_some).collect());

    let background = HsvPixel { hue: 40.0, saturation: spec.background_saturation, value: spec.background_value };
    let mut data = Vec::with_capacity(w * h * 3);
    for o in &owner {
        let base = o.map_or(background, |i| blobs[i].color);
        data.extend_from_slice(&to_rgb(jitter(&mut rng, base, spec.texture_noise)));
    }
    let mut img = RasterImage::new(w, h, data)?;

    let borders = trace_borders(&mask);
    let border_points: Vec<_> = borders.iter().flat_map(|b| b.points.iter().copied()).collect();
    let mut spots = Vec::new();
    if spec.spot_density > 0.0 && !border_points.is_empty() {
        let mean = spec.spot_density * border_points.len() as f64 / 1000.0;
        let n = (Poisson::new(mean).map(|p| p.sample(&mut rng)).unwrap_or(0.0) as usize).max(1);
        for _ in 0..n {
            let anchor = border_points[rng.random_range(0..border_points.len())];
            let radius = rng.random_range(spec.spot_radius[0]..=spec.spot_radius[1]);
            let r = radius as i64;
            let off = |rng: &mut ChaCha8Rng| if r > 0 { rng.random_range(-r..=r) } else { 0 };
            let x = (anchor.x as i64 + off(&mut rng)).clamp(0, w as i64 - 1) as usize;
            let y = (anchor.y as i64 + off(&mut rng)).clamp(0, h as i64 - 1) as usize;
            let spot = Spot { x, y, radius };
            let color = HsvPixel {
                hue: uniform(&mut rng, spec.spot_hue).rem_euclid(360.0),
                saturation: uniform(&mut rng, spec.spot_saturation),
                value: uniform(&mut rng, spec.spot_value),
            };
            for py in y.saturating_sub(radius)..(y + radius + 1).min(h) {
                for px in x.saturating_sub(radius)..(x + radius + 1).min(w) {
                    if spot.covers(px, py) {
                        img.set_pixel(px, py, to_rgb(jitter(&mut rng, color, spec.texture_noise)));
                    }
                }
            }
            spots.push(spot);
        }
    }

    let label = if spots.is_empty() { Label::Negative } else { Label::Positive };
    Ok((
        img,
        SynthGroundTruth {
            slide_id: String::new(),
            patient_id: String::new(),
            label,
            spot_density: spec.spot_density,
            mask,
            borders,
            spots,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CohortSpec {
    pub n_negative: usize,
    pub n_positive: usize,
    pub slides_per_patient: usize,
    /// Spot densities of low-load positive patients.
    pub low_density: [f64; 2],
    pub high_density: [f64; 2],
    pub seed: u64,
    /// Template for every slide; its seed and density are overridden.
    pub slide: SynthSpec,
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self {
            n_negative: 20,
            n_positive: 20,
            slides_per_patient: 2,
            low_density: [2.0, 4.0],
            high_density: [8.0, 16.0],
            seed: 0,
            slide: SynthSpec::default(),
        }
    }
}

/// Mixes the cohort seed with a patient id and slide index.
pub fn slide_seed(cohort_seed: u64, patient_id: &str, slide_index: usize) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in patient_id.bytes().chain((slide_index as u64).to_le_bytes()) {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix(h ^ splitmix(cohort_seed))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

struct PlannedSlide {
    entry: ManifestEntry,
    slide_id: String,
    spec: SynthSpec,
}

fn plan_cohort(cohort: &CohortSpec) -> Result<Vec<PlannedSlide>, SynthError> {
    if cohort.n_negative == 0 || cohort.n_positive == 0 || cohort.slides_per_patient == 0 {
        return Err(SynthError::InvalidSpec("cohort needs at least one patient per class and one slide each".into()));
    }
    for band in [cohort.low_density, cohort.high_density] {
        if !(band[0] > 0.0 && band[0] <= band[1]) {
            return Err(SynthError::InvalidSpec("density bands must be ordered and positive".into()));
        }
    }
    cohort.slide.validate()?;
    let mut planned = Vec::new();
    let patients = (0..cohort.n_negative)
        .map(|i| (format!("neg-{:03}", i + 1), None))
        .chain((0..cohort.n_positive).map(|i| {
            let class = if i % 2 == 0 { DensityClass::Low } else { DensityClass::High };
            (format!("pos-{:03}", i + 1), Some(class))
        }));
    for (patient_id, density) in patients {
        let spot_density = match density {
            None => 0.0,
            Some(class) => {
                let band = if class == DensityClass::Low { cohort.low_density } else { cohort.high_density };
                let mut rng = ChaCha8Rng::seed_from_u64(slide_seed(cohort.seed, &patient_id, usize::MAX));
                uniform(&mut rng, band)
            }
        };
        for s in 0..cohort.slides_per_patient {
            let slide_id = format!("{patient_id}_s{}", s + 1);
            let role = if s + 1 == cohort.slides_per_patient { SlideRole::Eval } else { SlideRole::Train };
            planned.push(PlannedSlide {
                entry: ManifestEntry {
                    patient_id: patient_id.clone(),
                    label: if density.is_some() { Label::Positive } else { Label::Negative },
                    density,
                    slide_path: format!("slides/{slide_id}.png"),
                    slide_role: role,
                },
                spec: SynthSpec { seed: slide_seed(cohort.seed, &patient_id, s), spot_density, ..cohort.slide.clone() },
                slide_id,
            });
        }
    }
    Ok(planned)
}

/// Writes `slides/*.png`, `ground_truth/*.json` and `manifest.csv` under
/// `out_dir` and returns the manifest rows.
///
/// The last slide of every patient has role `eval`, earlier ones `train`.
pub fn generate_cohort(cohort: &CohortSpec, out_dir: impl AsRef<Path>) -> Result<Vec<ManifestEntry>, SynthError> {
    let out = out_dir.as_ref();
    let planned = plan_cohort(cohort)?;
    for sub in ["slides", "ground_truth"] {
        let dir = out.join(sub);
        std::fs::create_dir_all(&dir).map_err(|source| SynthError::Io { path: dir, source })?;
    }
    planned.par_iter().try_for_each(|p| -> Result<(), SynthError> {
        let (img, mut truth) = generate_slide(&p.spec)?;
        truth.slide_id = p.slide_id.clone();
        truth.patient_id = p.entry.patient_id.clone();
        save_image(&img, out.join(&p.entry.slide_path))?;
        truth.write_json(out.join("ground_truth").join(format!("{}.json", p.slide_id)))
    })?;
    let entries: Vec<ManifestEntry> = planned.into_iter().map(|p| p.entry).collect();
    write_manifest(out.join("manifest.csv"), &entries)?;
    Ok(entries)
}

/// Path of a slide's ground-truth file inside a cohort directory.
pub fn ground_truth_path(cohort_dir: impl AsRef<Path>, slide_id: &str) -> PathBuf {
    cohort_dir.as_ref().join("ground_truth").join(format!("{slide_id}.json"))
}

/// Window-level detection of generator spots.
///
/// A window is a spot window when its capture rectangle touches a spot disc.
/// It is a visible spot window when its resized input also holds at least
/// one red-like pixel; spots of a few pixels can average away entirely
/// during downsampling, and such windows cannot be flagged by any score
/// computed at model resolution.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SpotWindowStats {
    pub spot_windows: usize,
    pub spot_windows_flagged: usize,
    pub visible_spot_windows: usize,
    pub visible_spot_windows_flagged: usize,
}

impl SpotWindowStats {
    pub fn tally(&mut self, touches_spot: bool, visible: bool, flagged: bool) {
        if touches_spot {
            self.spot_windows += 1;
            self.spot_windows_flagged += flagged as usize;
            if visible {
                self.visible_spot_windows += 1;
                self.visible_spot_windows_flagged += flagged as usize;
            }
        }
    }

    /// Scored windows of one slide against its ground truth. Visibility is
    /// read from `red_orig`.
    pub fn add_slide(&mut self, truth: &SynthGroundTruth, scores: &[crate::anomaly::WindowScore]) -> Result<(), SynthError> {
        let (w, h) = (truth.mask.width(), truth.mask.height());
        for s in scores {
            let rect = s.window.rect(w, h).map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
            self.tally(truth.spots_in(&rect).next().is_some(), s.red_orig > 0, s.positive);
        }
        Ok(())
    }

    pub fn rate(&self) -> Option<f64> {
        (self.spot_windows > 0).then(|| self.spot_windows_flagged as f64 / self.spot_windows as f64)
    }

    pub fn visible_rate(&self) -> Option<f64> {
        (self.visible_spot_windows > 0).then(|| self.visible_spot_windows_flagged as f64 / self.visible_spot_windows as f64)
    }
}
