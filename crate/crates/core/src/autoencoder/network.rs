use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{self, cast, BnCache, ConvGeom};
use super::{AutoencoderConfig, Batch, ModelError, Scalar, TrainMeta};
use crate::imaging::RasterImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Kind {
    Conv,
    Transposed,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct BnParams<T> {
    pub gamma: Array1<T>,
    pub beta: Array1<T>,
    pub running_mean: Array1<T>,
    pub running_var: Array1<T>,
}

/// Convolution (or transposed convolution), optional batch norm, then
/// leaky-ReLU, or bias + sigmoid for the output block.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Block<T> {
    pub name: String,
    pub kind: Kind,
    pub geom: ConvGeom,
    /// `[small_c, big_c*k*k]` for both kinds.
    pub weight: Array2<T>,
    pub bias: Option<Array1<T>>,
    pub bn: Option<BnParams<T>>,
}

impl<T: Scalar> Block<T> {
    fn in_channels(&self) -> usize {
        match self.kind {
            Kind::Conv => self.geom.big_c,
            Kind::Transposed => self.geom.small_c,
        }
    }

    fn out_channels(&self) -> usize {
        match self.kind {
            Kind::Conv => self.geom.small_c,
            Kind::Transposed => self.geom.big_c,
        }
    }

    fn out_hw(&self) -> (usize, usize) {
        match self.kind {
            Kind::Conv => (self.geom.small_h, self.geom.small_w),
            Kind::Transposed => (self.geom.big_h, self.geom.big_w),
        }
    }
}

/// Per-block values retained from a training-mode forward pass.
pub(crate) struct BlockCache<T> {
    /// im2col of the input for convolutions, the raw input for transposed ones.
    saved: Array2<T>,
    bn: Option<BnCache<T>>,
    out: Array2<T>,
}

/// Everything the backward pass needs.
pub struct ForwardCache<T> {
    blocks: Vec<BlockCache<T>>,
    batch: usize,
}

impl<T: Scalar> ForwardCache<T> {
    /// Network output in `[C, B*H*W]` layout.
    pub(crate) fn output(&self) -> &Array2<T> {
        &self.blocks.last().expect("network has blocks").out
    }
}

/// Gradients in the order of [`Autoencoder::param_groups`].
#[derive(Debug, Clone)]
pub struct Grads<T> {
    pub groups: Vec<(String, Vec<T>)>,
}

/// A named view of one trainable array.
pub struct ParamGroup<'a, T> {
    pub name: String,
    pub values: &'a [T],
}

/// Convolutional autoencoder. The default element type is the `f32`
/// used for training and checkpoints; `f64` instances exist for numerical
/// checks.
#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder<T: Scalar = f32> {
    config: AutoencoderConfig,
    pub(crate) blocks: Vec<Block<T>>,
    pub meta: TrainMeta,
}

/// The trained model used by the pipeline.
pub type AutoencoderModel = Autoencoder<f32>;

impl<T: Scalar> Autoencoder<T> {
    /// Fan-in scaled uniform (He) kernels, zero biases, unit batch-norm scale.
    pub fn init(config: &AutoencoderConfig, seed: u64) -> Result<Self, ModelError> {
        let mut model = Self::zeroed(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for block in &mut model.blocks {
            let fan_in = (block.in_channels() * block.geom.k * block.geom.k) as f64;
            let bound = (6.0 / fan_in).sqrt();
            block.weight.mapv_inplace(|_| cast(rng.random_range(-bound..bound)));
        }
        model.meta.seed = seed;
        Ok(model)
    }

    /// Correctly shaped model with zero kernels, used as a load target.
    pub(crate) fn zeroed(config: &AutoencoderConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let k = config.kernel;
        let pad = k / 2;
        let mut blocks = Vec::new();
        let (mut c, mut hw) = (config.input_channels, config.input_size);
        let n_enc = config.enc_channels.len();
        let n_dec = config.dec_channels.len();
        let stages = config
            .enc_channels
            .iter()
            .zip(&config.enc_strides)
            .map(|(&ch, &s)| (Kind::Conv, ch, s))
            .chain(config.dec_channels.iter().zip(&config.dec_strides).map(|(&ch, &s)| (Kind::Transposed, ch, s)));
        for (i, (kind, out_c, stride)) in stages.enumerate() {
            let last = i == n_enc + n_dec - 1;
            let name = if i < n_enc { format!("enc{i}") } else { format!("dec{}", i - n_enc) };
            let (geom, out_hw) = match kind {
                Kind::Conv => {
                    let small = (hw + 2 * pad - k) / stride + 1;
                    (
                        ConvGeom { big_c: c, small_c: out_c, k, stride, pad, big_h: hw, big_w: hw, small_h: small, small_w: small },
                        small,
                    )
                }
                Kind::Transposed => {
                    let big = hw * stride;
                    (
                        ConvGeom { big_c: out_c, small_c: c, k, stride, pad, big_h: big, big_w: big, small_h: hw, small_w: hw },
                        big,
                    )
                }
            };
            let weight = Array2::zeros((geom.small_c, geom.patch_len()));
            let bn = (!last).then(|| BnParams {
                gamma: Array1::ones(out_c),
                beta: Array1::zeros(out_c),
                running_mean: Array1::zeros(out_c),
                running_var: Array1::ones(out_c),
            });
            let bias = last.then(|| Array1::zeros(out_c));
            blocks.push(Block { name, kind, geom, weight, bias, bn });
            c = out_c;
            hw = out_hw;
        }
        Ok(Self { config: config.clone(), blocks, meta: TrainMeta::default() })
    }

    pub fn config(&self) -> &AutoencoderConfig {
        &self.config
    }

    /// `(channels, height, width)` of the encoder output.
    pub fn latent_shape(&self) -> (usize, usize, usize) {
        let b = &self.blocks[self.config.enc_channels.len() - 1];
        let (h, w) = b.out_hw();
        (b.out_channels(), h, w)
    }

    fn check_input(&self, x: &Batch<T>) -> Result<(), ModelError> {
        let want = (self.config.input_size, self.config.input_channels);
        if (x.size(), x.channels()) != want || x.len() == 0 {
            return Err(ModelError::ShapeMismatch(format!(
                "batch of {}x{}x{}x{} does not fit a {}x{}x{} model",
                x.len(),
                x.size(),
                x.size(),
                x.channels(),
                want.0,
                want.0,
                want.1
            )));
        }
        Ok(())
    }

    /// Inference pass; batch norm uses running statistics.
    pub fn forward(&self, x: &Batch<T>) -> Result<Batch<T>, ModelError> {
        self.check_input(x)?;
        let batch = x.len();
        let eps: T = cast(self.config.bn_eps);
        let slope: T = cast(self.config.leaky_slope);
        let mut a = x.to_channel_major();
        for block in &self.blocks {
            let mut z = conv_forward(block, &a, batch).0;
            if let Some(bn) = &block.bn {
                z = layers::batch_norm_infer(&z, &bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var, eps);
                layers::leaky_relu(&mut z, slope);
            } else {
                layers::sigmoid(&mut z);
            }
            a = z;
        }
        Ok(Batch::from_channel_major(&a, batch, self.config.input_size))
    }

    /// Training-mode pass using batch statistics. Running statistics are not
    /// touched; see [`update_running_stats`](Self::update_running_stats).
    pub fn forward_train(&self, x: &Batch<T>) -> Result<ForwardCache<T>, ModelError> {
        self.check_input(x)?;
        let batch = x.len();
        let eps: T = cast(self.config.bn_eps);
        let slope: T = cast(self.config.leaky_slope);
        let mut a = x.to_channel_major();
        let mut caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (mut z, saved) = conv_forward(block, &a, batch);
            let bn_cache = if let Some(bn) = &block.bn {
                let (mut y, cache) = layers::batch_norm_train(&z, &bn.gamma, &bn.beta, eps);
                layers::leaky_relu(&mut y, slope);
                z = y;
                Some(cache)
            } else {
                layers::sigmoid(&mut z);
                None
            };
            caches.push(BlockCache { saved, bn: bn_cache, out: z.clone() });
            a = z;
        }
        Ok(ForwardCache { blocks: caches, batch })
    }

    /// Reverse-mode gradients given dL/d(output) in `[C, B*H*W]` layout.
    pub(crate) fn backward(&self, cache: &ForwardCache<T>, d_out: Array2<T>) -> Grads<T> {
        let slope: T = cast(self.config.leaky_slope);
        let batch = cache.batch;
        let mut grads_rev: Vec<(String, Vec<T>)> = Vec::new();
        let mut d = d_out;
        for (i, (block, bc)) in self.blocks.iter().zip(&cache.blocks).enumerate().rev() {
            let mut block_grads = Vec::new();
            if let (Some(bn), Some(bnc)) = (&block.bn, &bc.bn) {
                layers::leaky_relu_backward(&mut d, &bc.out, slope);
                let (dz, dgamma, dbeta) = layers::batch_norm_backward(&d, bnc, &bn.gamma);
                block_grads.push((format!("{}.bn.gamma", block.name), dgamma.to_vec()));
                block_grads.push((format!("{}.bn.beta", block.name), dbeta.to_vec()));
                d = dz;
            } else {
                layers::sigmoid_backward(&mut d, &bc.out);
                let db = d.sum_axis(Axis(1));
                block_grads.push((format!("{}.bias", block.name), db.to_vec()));
            }
            let (dw, dx) = conv_backward(block, &bc.saved, &d, batch, i > 0);
            block_grads.insert(0, (format!("{}.weight", block.name), dw.iter().copied().collect()));
            // blocks are visited last to first; the whole list is flipped below
            grads_rev.extend(block_grads.into_iter().rev());
            if let Some(dx) = dx {
                d = dx;
            }
        }
        grads_rev.reverse();
        Grads { groups: grads_rev }
    }

    /// Mean squared reconstruction error and its gradient for one batch,
    /// plus the forward cache (holding the batch statistics).
    pub fn loss_and_grads(&self, x: &Batch<T>) -> Result<(f64, Grads<T>, ForwardCache<T>), ModelError> {
        let cache = self.forward_train(x)?;
        let target = x.to_channel_major();
        let out = cache.output();
        let n = out.len() as f64;
        let loss = out
            .iter()
            .zip(target.iter())
            .map(|(&o, &t)| {
                let e = (o - t).to_f64().unwrap_or(f64::NAN);
                e * e
            })
            .sum::<f64>()
            / n;
        let scale: T = cast(2.0 / n);
        let d_out = (out - &target) * scale;
        let grads = self.backward(&cache, d_out);
        Ok((loss, grads, cache))
    }

    /// Training-mode loss without gradients.
    pub fn train_loss(&self, x: &Batch<T>) -> Result<f64, ModelError> {
        let cache = self.forward_train(x)?;
        let target = x.to_channel_major();
        let out = cache.output();
        Ok(out
            .iter()
            .zip(target.iter())
            .map(|(&o, &t)| {
                let e = (o - t).to_f64().unwrap_or(f64::NAN);
                e * e
            })
            .sum::<f64>()
            / out.len() as f64)
    }

    /// Exponential moving average of batch statistics (unbiased variance).
    pub fn update_running_stats(&mut self, cache: &ForwardCache<T>) {
        let m: T = cast(self.config.bn_momentum);
        for (block, bc) in self.blocks.iter_mut().zip(&cache.blocks) {
            if let (Some(bn), Some(stats)) = (&mut block.bn, &bc.bn) {
                let n = stats.xhat.ncols();
                let unbias: T = cast(if n > 1 { n as f64 / (n as f64 - 1.0) } else { 1.0 });
                bn.running_mean.zip_mut_with(&stats.mean, |r, &v| *r = (T::one() - m) * *r + m * v);
                bn.running_var
                    .zip_mut_with(&stats.var, |r, &v| *r = (T::one() - m) * *r + m * v * unbias);
            }
        }
    }

    /// Trainable arrays, in a fixed order shared with [`Grads`].
    pub fn param_groups(&self) -> Vec<ParamGroup<'_, T>> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.push(ParamGroup {
                name: format!("{}.weight", b.name),
                values: b.weight.as_slice().expect("contiguous"),
            });
            if let Some(bias) = &b.bias {
                out.push(ParamGroup { name: format!("{}.bias", b.name), values: bias.as_slice().expect("contiguous") });
            }
            if let Some(bn) = &b.bn {
                out.push(ParamGroup { name: format!("{}.bn.gamma", b.name), values: bn.gamma.as_slice().expect("contiguous") });
                out.push(ParamGroup { name: format!("{}.bn.beta", b.name), values: bn.beta.as_slice().expect("contiguous") });
            }
        }
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        for b in &mut self.blocks {
            out.push(b.weight.as_slice_mut().expect("contiguous"));
            if let Some(bias) = &mut b.bias {
                out.push(bias.as_slice_mut().expect("contiguous"));
            }
            if let Some(bn) = &mut b.bn {
                out.push(bn.gamma.as_slice_mut().expect("contiguous"));
                out.push(bn.beta.as_slice_mut().expect("contiguous"));
            }
        }
        out
    }

    /// Every stored array (trainable and running statistics) in checkpoint
    /// order: per block `weight`, `bias`?, then `gamma, beta, running_mean,
    /// running_var` when the block has batch norm.
    pub(crate) fn stored_arrays(&self) -> Vec<(String, &[T])> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.push((format!("{}.weight", b.name), b.weight.as_slice().expect("contiguous")));
            if let Some(bias) = &b.bias {
                out.push((format!("{}.bias", b.name), bias.as_slice().expect("contiguous")));
            }
            if let Some(bn) = &b.bn {
                out.push((format!("{}.bn.gamma", b.name), bn.gamma.as_slice().expect("contiguous")));
                out.push((format!("{}.bn.beta", b.name), bn.beta.as_slice().expect("contiguous")));
                out.push((format!("{}.bn.running_mean", b.name), bn.running_mean.as_slice().expect("contiguous")));
                out.push((format!("{}.bn.running_var", b.name), bn.running_var.as_slice().expect("contiguous")));
            }
        }
        out
    }

    pub(crate) fn stored_arrays_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        for b in &mut self.blocks {
            out.push(b.weight.as_slice_mut().expect("contiguous"));
            if let Some(bias) = &mut b.bias {
                out.push(bias.as_slice_mut().expect("contiguous"));
            }
            if let Some(bn) = &mut b.bn {
                out.push(bn.gamma.as_slice_mut().expect("contiguous"));
                out.push(bn.beta.as_slice_mut().expect("contiguous"));
                out.push(bn.running_mean.as_slice_mut().expect("contiguous"));
                out.push(bn.running_var.as_slice_mut().expect("contiguous"));
            }
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.stored_arrays().iter().all(|(_, a)| a.iter().all(|v| v.is_finite()))
    }

    /// Same weights in another precision.
    pub fn cast<U: Scalar>(&self) -> Autoencoder<U> {
        let conv = |a: &Array1<T>| a.mapv(|v| cast::<U>(v.to_f64().expect("finite")));
        Autoencoder {
            config: self.config.clone(),
            meta: self.meta.clone(),
            blocks: self
                .blocks
                .iter()
                .map(|b| Block {
                    name: b.name.clone(),
                    kind: b.kind,
                    geom: b.geom,
                    weight: b.weight.mapv(|v| cast::<U>(v.to_f64().expect("finite"))),
                    bias: b.bias.as_ref().map(conv),
                    bn: b.bn.as_ref().map(|bn| BnParams {
                        gamma: conv(&bn.gamma),
                        beta: conv(&bn.beta),
                        running_mean: conv(&bn.running_mean),
                        running_var: conv(&bn.running_var),
                    }),
                })
                .collect(),
        }
    }
}

impl Autoencoder<f32> {
    /// Reconstructs each image with an inference pass.
    pub fn reconstruct(&self, images: &[RasterImage]) -> Result<Vec<RasterImage>, ModelError> {
        let batch = Batch::from_images(images)?;
        Ok(self.forward(&batch)?.to_images())
    }
}

/// Returns the pre-activation and the array the backward pass needs.
fn conv_forward<T: Scalar>(block: &Block<T>, x: &Array2<T>, batch: usize) -> (Array2<T>, Array2<T>) {
    let (mut z, saved) = match block.kind {
        Kind::Conv => {
            let cols = layers::im2col(x, &block.geom, batch);
            (layers::matmul(block.weight.view(), cols.view()), cols)
        }
        Kind::Transposed => {
            let cols = layers::matmul(block.weight.t(), x.view());
            (layers::col2im(&cols, &block.geom, batch), x.clone())
        }
    };
    if let Some(bias) = &block.bias {
        for (mut row, &b) in z.axis_iter_mut(Axis(0)).zip(bias.iter()) {
            row.mapv_inplace(|v| v + b);
        }
    }
    (z, saved)
}

/// Returns `(dW, dX)`; `dX` only when requested.
fn conv_backward<T: Scalar>(
    block: &Block<T>,
    saved: &Array2<T>,
    dz: &Array2<T>,
    batch: usize,
    need_dx: bool,
) -> (Array2<T>, Option<Array2<T>>) {
    match block.kind {
        Kind::Conv => {
            let dw = layers::matmul(dz.view(), saved.t());
            let dx = need_dx.then(|| {
                let dcols = layers::matmul(block.weight.t(), dz.view());
                layers::col2im(&dcols, &block.geom, batch)
            });
            (dw, dx)
        }
        Kind::Transposed => {
            let dcols = layers::im2col(dz, &block.geom, batch);
            let dw = layers::matmul(saved.view(), dcols.t());
            let dx = need_dx.then(|| layers::matmul(block.weight.view(), dcols.view()));
            (dw, dx)
        }
    }
}
