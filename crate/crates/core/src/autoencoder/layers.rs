//! Forward and backward kernels for the handful of ops the autoencoder uses.
//!
//! Activations are stored channel-major with the batch folded into the
//! columns: a `[C, B*H*W]` matrix whose row `c` holds every sample's plane
//! for channel `c`. Convolutions then become a single GEMM per layer.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::Scalar;

#[inline]
pub(crate) fn cast<T: Scalar>(x: f64) -> T {
    T::from(x).expect("finite constant")
}

/// Geometry of a strided, zero-padded square convolution mapping a
/// `big_h`×`big_w` plane with `big_c` channels to `small_h`×`small_w`
/// with `small_c` channels. A transposed convolution runs the same
/// geometry in reverse.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub big_c: usize,
    pub small_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub big_h: usize,
    pub big_w: usize,
    pub small_h: usize,
    pub small_w: usize,
}

impl ConvGeom {
    pub fn patch_len(&self) -> usize {
        self.big_c * self.k * self.k
    }
}

/// Unfolds `x` (`[big_c, B*big_h*big_w]`) into `[big_c*k*k, B*small_h*small_w]`.
pub(crate) fn im2col<T: Scalar>(x: &Array2<T>, g: &ConvGeom, batch: usize) -> Array2<T> {
    let (k, s, p) = (g.k, g.stride as isize, g.pad as isize);
    let big_plane = g.big_h * g.big_w;
    let small_plane = g.small_h * g.small_w;
    let ncols = batch * small_plane;
    let mut out = Array2::<T>::zeros((g.patch_len(), ncols));
    let src = x.as_slice().expect("contiguous activations");
    let dst_all = out.as_slice_mut().expect("fresh array");
    for c in 0..g.big_c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut dst_all[row * ncols..(row + 1) * ncols];
                for b in 0..batch {
                    let plane = &src[c * batch * big_plane + b * big_plane..][..big_plane];
                    for oy in 0..g.small_h {
                        let iy = oy as isize * s + ky as isize - p;
                        if iy < 0 || iy >= g.big_h as isize {
                            continue;
                        }
                        let src_row = &plane[iy as usize * g.big_w..][..g.big_w];
                        let dst_row = &mut dst[b * small_plane + oy * g.small_w..][..g.small_w];
                        for (ox, d) in dst_row.iter_mut().enumerate() {
                            let ix = ox as isize * s + kx as isize - p;
                            if ix >= 0 && ix < g.big_w as isize {
                                *d = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col`]: scatters columns back into a `[big_c, B*big_h*big_w]` plane.
pub(crate) fn col2im<T: Scalar>(cols: &Array2<T>, g: &ConvGeom, batch: usize) -> Array2<T> {
    let (k, s, p) = (g.k, g.stride as isize, g.pad as isize);
    let big_plane = g.big_h * g.big_w;
    let small_plane = g.small_h * g.small_w;
    let ncols = batch * small_plane;
    let mut out = Array2::<T>::zeros((g.big_c, batch * big_plane));
    let dst_all = out.as_slice_mut().expect("fresh array");
    let cols = cols.as_standard_layout();
    let src_all = cols.as_slice().expect("standard layout");
    for c in 0..g.big_c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &src_all[row * ncols..(row + 1) * ncols];
                for b in 0..batch {
                    let plane = &mut dst_all[c * batch * big_plane + b * big_plane..][..big_plane];
                    for oy in 0..g.small_h {
                        let iy = oy as isize * s + ky as isize - p;
                        if iy < 0 || iy >= g.big_h as isize {
                            continue;
                        }
                        let dst_row = &mut plane[iy as usize * g.big_w..][..g.big_w];
                        let src_row = &src[b * small_plane + oy * g.small_w..][..g.small_w];
                        for (ox, &v) in src_row.iter().enumerate() {
                            let ix = ox as isize * s + kx as isize - p;
                            if ix >= 0 && ix < g.big_w as isize {
                                dst_row[ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// `a · b`
pub(crate) fn matmul<T: Scalar>(a: ArrayView2<T>, b: ArrayView2<T>) -> Array2<T> {
    let mut c = Array2::<T>::zeros((a.nrows(), b.ncols()));
    general_mat_mul(T::one(), &a, &b, T::zero(), &mut c);
    c
}

/// Per-channel statistics kept from a training-mode batch-norm pass.
#[derive(Debug, Clone)]
pub(crate) struct BnCache<T> {
    pub xhat: Array2<T>,
    pub inv_std: Array1<T>,
    pub mean: Array1<T>,
    /// Biased batch variance.
    pub var: Array1<T>,
}

pub(crate) fn batch_norm_train<T: Scalar>(
    x: &Array2<T>,
    gamma: &Array1<T>,
    beta: &Array1<T>,
    eps: T,
) -> (Array2<T>, BnCache<T>) {
    let n: T = cast(x.ncols() as f64);
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    let mut mean = Array1::zeros(x.nrows());
    let mut var = Array1::zeros(x.nrows());
    let mut y = Array2::zeros(x.raw_dim());
    for (c, (mut xr, mut yr)) in xhat.axis_iter_mut(Axis(0)).zip(y.axis_iter_mut(Axis(0))).enumerate() {
        let m = xr.iter().fold(T::zero(), |a, &v| a + v) / n;
        let v = xr.iter().fold(T::zero(), |a, &v| a + (v - m) * (v - m)) / n;
        let is = T::one() / (v + eps).sqrt();
        xr.mapv_inplace(|e| (e - m) * is);
        let (g, b) = (gamma[c], beta[c]);
        yr.zip_mut_with(&xr, |o, &h| *o = g * h + b);
        mean[c] = m;
        var[c] = v;
        inv_std[c] = is;
    }
    (y, BnCache { xhat, inv_std, mean, var })
}

pub(crate) fn batch_norm_infer<T: Scalar>(
    x: &Array2<T>,
    gamma: &Array1<T>,
    beta: &Array1<T>,
    running_mean: &Array1<T>,
    running_var: &Array1<T>,
    eps: T,
) -> Array2<T> {
    let mut y = x.clone();
    for (c, mut row) in y.axis_iter_mut(Axis(0)).enumerate() {
        let scale = gamma[c] / (running_var[c] + eps).sqrt();
        let shift = beta[c] - running_mean[c] * scale;
        row.mapv_inplace(|v| v * scale + shift);
    }
    y
}

/// Returns `(dx, dgamma, dbeta)`.
pub(crate) fn batch_norm_backward<T: Scalar>(
    dy: &Array2<T>,
    cache: &BnCache<T>,
    gamma: &Array1<T>,
) -> (Array2<T>, Array1<T>, Array1<T>) {
    let n: T = cast(dy.ncols() as f64);
    let mut dx = Array2::zeros(dy.raw_dim());
    let mut dgamma = Array1::zeros(dy.nrows());
    let mut dbeta = Array1::zeros(dy.nrows());
    for c in 0..dy.nrows() {
        let dyr = dy.row(c);
        let xr = cache.xhat.row(c);
        let sum_dy = dyr.iter().fold(T::zero(), |a, &v| a + v);
        let sum_dy_x = dyr.iter().zip(xr.iter()).fold(T::zero(), |a, (&d, &h)| a + d * h);
        dgamma[c] = sum_dy_x;
        dbeta[c] = sum_dy;
        let scale = gamma[c] * cache.inv_std[c] / n;
        let mut out = dx.row_mut(c);
        for ((o, &d), &h) in out.iter_mut().zip(dyr.iter()).zip(xr.iter()) {
            *o = scale * (n * d - sum_dy - h * sum_dy_x);
        }
    }
    (dx, dgamma, dbeta)
}

pub(crate) fn leaky_relu<T: Scalar>(x: &mut Array2<T>, slope: T) {
    x.mapv_inplace(|v| if v > T::zero() { v } else { v * slope });
}

/// `dy` is scaled in place using the activation's *output* (sign is preserved
/// for positive slopes).
pub(crate) fn leaky_relu_backward<T: Scalar>(dy: &mut Array2<T>, out: &Array2<T>, slope: T) {
    dy.zip_mut_with(out, |d, &o| {
        if o <= T::zero() {
            *d = *d * slope
        }
    });
}

pub(crate) fn sigmoid<T: Scalar>(x: &mut Array2<T>) {
    x.mapv_inplace(|v| T::one() / (T::one() + (-v).exp()));
}

pub(crate) fn sigmoid_backward<T: Scalar>(dy: &mut Array2<T>, out: &Array2<T>) {
    dy.zip_mut_with(out, |d, &s| *d = *d * s * (T::one() - s));
}
