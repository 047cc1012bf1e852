//! Convolutional autoencoder learning the appearance of non-infected tissue.
//!
//! The encoder is a stack of `conv → batch-norm → leaky-ReLU` blocks with
//! channels `[32, 64, 64]` and strides `[1, 2, 2]` (28 → 28 → 14 → 7); the
//! decoder mirrors it with transposed convolutions (7 → 14 → 28 → 28) and a
//! sigmoid output. The 7×7×64 feature map is the latent code.
//!
//! Gradients are computed by a hand-written reverse pass over the fixed block
//! sequence; there is no general autodiff graph.

mod checkpoint;
mod layers;
mod network;
mod train;

pub use checkpoint::{load_model, save_model, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use network::{Autoencoder, AutoencoderModel, ForwardCache, Grads, ParamGroup};
pub use train::{mse_loss, train, Adam, TrainConfig, TrainReport, Trainer};

use ndarray::Array2;
use ndarray::NdFloat;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{ImagingError, RasterImage};

/// Element type the network can be instantiated with (`f32` or `f64`).
pub trait Scalar: NdFloat + num_traits::FromPrimitive {}
impl Scalar for f32 {}
impl Scalar for f64 {}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid autoencoder config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("loss became non-finite ({loss}) at step {step}")]
    NonFiniteLoss { step: u64, loss: f64 },
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AutoencoderConfig {
    pub input_size: usize,
    pub input_channels: usize,
    pub kernel: usize,
    pub enc_channels: Vec<usize>,
    pub enc_strides: Vec<usize>,
    pub dec_channels: Vec<usize>,
    pub dec_strides: Vec<usize>,
    pub leaky_slope: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self {
            input_size: 28,
            input_channels: 3,
            kernel: 3,
            enc_channels: vec![32, 64, 64],
            enc_strides: vec![1, 2, 2],
            dec_channels: vec![64, 32, 3],
            dec_strides: vec![2, 2, 1],
            leaky_slope: 0.01,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }
}

impl AutoencoderConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.enc_channels.is_empty() || self.dec_channels.is_empty() {
            return bad("encoder and decoder need at least one block each".into());
        }
        if self.enc_channels.len() != self.enc_strides.len() || self.dec_channels.len() != self.dec_strides.len() {
            return bad("every block needs exactly one stride".into());
        }
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return bad(format!("kernel must be odd, got {}", self.kernel));
        }
        if self.input_size == 0 || self.input_channels == 0 {
            return bad("input dimensions must be non-zero".into());
        }
        let all_channels = self.enc_channels.iter().chain(&self.dec_channels);
        let all_strides = self.enc_strides.iter().chain(&self.dec_strides);
        if all_channels.clone().any(|&c| c == 0) || all_strides.clone().any(|&s| s == 0) {
            return bad("channels and strides must be at least 1".into());
        }
        if self.dec_channels.last() != Some(&self.input_channels) {
            return bad("the last decoder block must output the input channel count".into());
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return bad(format!("leaky slope must lie in (0, 1), got {}", self.leaky_slope));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) || !(self.bn_eps > 0.0) {
            return bad("batch-norm momentum must be in (0, 1] and eps positive".into());
        }
        let mut hw = self.input_size;
        for &s in &self.enc_strides {
            hw = (hw - 1) / s + 1;
        }
        for &s in &self.dec_strides {
            hw *= s;
        }
        if hw != self.input_size {
            return bad(format!("decoder output is {hw}px, input is {}px", self.input_size));
        }
        Ok(())
    }

    /// `key=value` lines, the checkpoint header representation.
    pub fn to_key_values(&self) -> String {
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        format!(
            "input_size={}\ninput_channels={}\nkernel={}\nenc_channels={}\nenc_strides={}\ndec_channels={}\ndec_strides={}\nleaky_slope={:?}\nbn_momentum={:?}\nbn_eps={:?}\n",
            self.input_size,
            self.input_channels,
            self.kernel,
            list(&self.enc_channels),
            list(&self.enc_strides),
            list(&self.dec_channels),
            list(&self.dec_strides),
            self.leaky_slope,
            self.bn_momentum,
            self.bn_eps,
        )
    }

    pub fn from_key_values(text: &str) -> Result<Self, ModelError> {
        let corrupt = |m: String| ModelError::Corrupt(m);
        let mut cfg = AutoencoderConfig::default();
        let mut seen = 0;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| corrupt(format!("config line {line:?}")))?;
            let num = |v: &str| v.parse::<usize>().map_err(|_| corrupt(format!("{k}={v}")));
            let float = |v: &str| v.parse::<f64>().map_err(|_| corrupt(format!("{k}={v}")));
            let list = |v: &str| v.split(',').map(num).collect::<Result<Vec<_>, _>>();
            match k {
                "input_size" => cfg.input_size = num(v)?,
                "input_channels" => cfg.input_channels = num(v)?,
                "kernel" => cfg.kernel = num(v)?,
                "enc_channels" => cfg.enc_channels = list(v)?,
                "enc_strides" => cfg.enc_strides = list(v)?,
                "dec_channels" => cfg.dec_channels = list(v)?,
                "dec_strides" => cfg.dec_strides = list(v)?,
                "leaky_slope" => cfg.leaky_slope = float(v)?,
                "bn_momentum" => cfg.bn_momentum = float(v)?,
                "bn_eps" => cfg.bn_eps = float(v)?,
                other => return Err(corrupt(format!("unknown config key {other:?}"))),
            }
            seen += 1;
        }
        if seen != 10 {
            return Err(corrupt(format!("config block has {seen} of 10 keys")));
        }
        Ok(cfg)
    }
}

/// Provenance recorded alongside the weights.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub epochs: usize,
    pub final_loss: f64,
    pub seed: u64,
    /// Free-form tag identifying what produced the model (e.g. a config hash).
    pub provenance: String,
}

/// A batch of square images in `N×H×W×C` order.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    n: usize,
    size: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Scalar> Batch<T> {
    pub fn new(n: usize, size: usize, channels: usize, data: Vec<T>) -> Result<Self, ModelError> {
        if data.len() != n * size * size * channels {
            return Err(ModelError::ShapeMismatch(format!(
                "{} values for a {n}x{size}x{size}x{channels} batch",
                data.len()
            )));
        }
        Ok(Self { n, size, channels, data })
    }

    /// Stacks square RGB images of equal size.
    pub fn from_images(images: &[RasterImage]) -> Result<Self, ModelError> {
        let first = images.first().ok_or_else(|| ModelError::ShapeMismatch("empty batch".into()))?;
        let size = first.width();
        let mut data = Vec::with_capacity(images.len() * size * size * 3);
        for img in images {
            if img.width() != size || img.height() != size {
                return Err(ModelError::ShapeMismatch(format!(
                    "image {}x{} in a batch of {size}x{size}",
                    img.width(),
                    img.height()
                )));
            }
            data.extend(img.data().iter().map(|&v| T::from_f32(v).expect("finite")));
        }
        Ok(Self { n: images.len(), size, channels: 3, data })
    }

    pub fn to_images(&self) -> Vec<RasterImage> {
        assert_eq!(self.channels, 3, "only RGB batches convert to images");
        self.data
            .chunks_exact(self.size * self.size * 3)
            .map(|c| {
                let px = c.iter().map(|v| v.to_f32().unwrap_or(0.0).clamp(0.0, 1.0)).collect();
                RasterImage::new(self.size, self.size, px).expect("clamped RGB data")
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Samples `indices` into a new batch.
    pub fn select(&self, indices: &[usize]) -> Batch<T> {
        let per = self.size * self.size * self.channels;
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend_from_slice(&self.data[i * per..(i + 1) * per]);
        }
        Batch { n: indices.len(), size: self.size, channels: self.channels, data }
    }

    pub(crate) fn to_channel_major(&self) -> Array2<T> {
        let plane = self.size * self.size;
        let mut out = Array2::<T>::zeros((self.channels, self.n * plane));
        for (p, px) in self.data.chunks_exact(self.channels).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                out[[c, p]] = v;
            }
        }
        out
    }

    pub(crate) fn from_channel_major(a: &Array2<T>, n: usize, size: usize) -> Self {
        let channels = a.nrows();
        let mut data = vec![T::zero(); a.len()];
        for (c, row) in a.rows().into_iter().enumerate() {
            for (p, &v) in row.iter().enumerate() {
                data[p * channels + c] = v;
            }
        }
        Self { n, size, channels, data }
    }
}
