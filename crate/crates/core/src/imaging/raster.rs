use super::ImagingError;

/// An RGB raster with intensities normalized to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl RasterImage {
    /// Wraps interleaved row-major RGB data, validating length and range.
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self, ImagingError> {
        if width == 0 || height == 0 {
            return Err(ImagingError::ZeroDimension { width, height });
        }
        if data.len() != width * height * 3 {
            return Err(ImagingError::DataLength { width, height, got: data.len() });
        }
        if let Some((index, &value)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(ImagingError::OutOfRange { index, value });
        }
        Ok(Self { width, height, data })
    }

    /// Image filled with one color.
    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be non-zero");
        let rgb = rgb.map(|c| c.clamp(0.0, 1.0));
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Sets a pixel; components are clamped into `[0, 1]`.
    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        for (c, v) in rgb.into_iter().enumerate() {
            self.data[i + c] = v.clamp(0.0, 1.0);
        }
    }

    pub fn pixels(&self) -> impl Iterator<Item = [f32; 3]> + '_ {
        self.data.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }

    /// Copies the `w`×`h` rectangle whose top-left corner is `(x0, y0)`.
    ///
    /// Panics if the rectangle leaves the image.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> RasterImage {
        assert!(w > 0 && h > 0 && x0 + w <= self.width && y0 + h <= self.height);
        let mut data = Vec::with_capacity(w * h * 3);
        for y in y0..y0 + h {
            let start = (y * self.width + x0) * 3;
            data.extend_from_slice(&self.data[start..start + w * 3]);
        }
        RasterImage { width: w, height: h, data }
    }

    pub fn mean_intensity(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }
}

/// Area-averaging downsample (or upsample) to `out_w`×`out_h`.
///
/// Each output pixel is the area-weighted mean of the source pixels its
/// footprint covers. When the ratios are integral this is an exact box filter.
pub fn resize(img: &RasterImage, out_w: usize, out_h: usize) -> Result<RasterImage, ImagingError> {
    if out_w == 0 || out_h == 0 {
        return Err(ImagingError::ZeroDimension { width: out_w, height: out_h });
    }
    let (in_w, in_h) = (img.width, img.height);
    if in_w == out_w && in_h == out_h {
        return Ok(img.clone());
    }
    let xw = axis_weights(in_w, out_w);
    let yw = axis_weights(in_h, out_h);

    let mut data = vec![0.0f32; out_w * out_h * 3];
    let mut acc = vec![0.0f64; out_w * 3];
    for (oy, ys) in yw.iter().enumerate() {
        acc.iter_mut().for_each(|a| *a = 0.0);
        for &(iy, wy) in ys {
            let row = &img.data[iy * in_w * 3..(iy + 1) * in_w * 3];
            for (ox, xs) in xw.iter().enumerate() {
                for &(ix, wx) in xs {
                    let w = wy * wx;
                    for c in 0..3 {
                        acc[ox * 3 + c] += w * row[ix * 3 + c] as f64;
                    }
                }
            }
        }
        let out_row = &mut data[oy * out_w * 3..(oy + 1) * out_w * 3];
        for (o, a) in out_row.iter_mut().zip(&acc) {
            *o = (*a as f32).clamp(0.0, 1.0);
        }
    }
    Ok(RasterImage { width: out_w, height: out_h, data })
}

/// For each output index, the source indices it overlaps and their
/// normalized overlap weights.
fn axis_weights(n_in: usize, n_out: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let lo = o as f64 * scale;
            let hi = (o + 1) as f64 * scale;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(n_in);
            let mut ws: Vec<(usize, f64)> = (first..last)
                .map(|i| {
                    let a = lo.max(i as f64);
                    let b = hi.min((i + 1) as f64);
                    (i, (b - a).max(0.0))
                })
                .filter(|&(_, w)| w > 0.0)
                .collect();
            let total: f64 = ws.iter().map(|(_, w)| w).sum();
            ws.iter_mut().for_each(|(_, w)| *w /= total);
            ws
        })
        .collect()
}
