use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::cast;
use super::{Autoencoder, AutoencoderModel, Batch, Grads, ModelError, Scalar};
use crate::imaging::RasterImage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 64,
            learning_rate: 1e-3,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.epochs == 0 || self.batch_size == 0 || !(self.learning_rate >= 0.0) {
            return Err(ModelError::InvalidConfig(format!(
                "epochs and batch_size must be >= 1 and learning_rate >= 0 (got {}, {}, {})",
                self.epochs, self.batch_size, self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Adaptive-moment optimizer state, one moment pair per trainable array.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    t: i32,
}

impl<T: Scalar> Adam<T> {
    pub fn new(model: &Autoencoder<T>) -> Self {
        let shapes: Vec<usize> = model.param_groups().iter().map(|g| g.values.len()).collect();
        Self {
            m: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            t: 0,
        }
    }

    pub fn step(&mut self, model: &mut Autoencoder<T>, grads: &Grads<T>, cfg: &TrainConfig) {
        self.t += 1;
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let lr_t = cfg.learning_rate * (1.0 - b2.powi(self.t)).sqrt() / (1.0 - b1.powi(self.t));
        let (b1, b2, lr_t, eps): (T, T, T, T) = (cast(b1), cast(b2), cast(lr_t), cast(cfg.adam_eps));
        let one = T::one();
        for (((p, (_, g)), m), v) in model
            .param_slices_mut()
            .into_iter()
            .zip(&grads.groups)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((w, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                *w -= lr_t * *m / (v.sqrt() + eps);
            }
        }
    }
}

/// Owns a model and its optimizer state during training.
pub struct Trainer<T: Scalar> {
    model: Autoencoder<T>,
    adam: Adam<T>,
    cfg: TrainConfig,
    steps: u64,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: Autoencoder<T>, cfg: TrainConfig) -> Result<Self, ModelError> {
        cfg.validate()?;
        let adam = Adam::new(&model);
        Ok(Self { model, adam, cfg, steps: 0 })
    }

    /// One gradient step on `batch`. Returns the loss before the update.
    pub fn step(&mut self, batch: &Batch<T>) -> Result<f64, ModelError> {
        let (loss, grads, cache) = self.model.loss_and_grads(batch)?;
        if !loss.is_finite() {
            return Err(ModelError::NonFiniteLoss { step: self.steps, loss });
        }
        self.model.update_running_stats(&cache);
        self.adam.step(&mut self.model, &grads, &self.cfg);
        self.steps += 1;
        Ok(loss)
    }

    pub fn model(&self) -> &Autoencoder<T> {
        &self.model
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn into_model(self) -> Autoencoder<T> {
        self.model
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Sample-weighted mean training loss of each epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: u64,
}

/// Trains on `windows` for `cfg.epochs` passes of shuffled minibatches.
pub fn train(
    model: AutoencoderModel,
    windows: &[RasterImage],
    cfg: &TrainConfig,
) -> Result<(AutoencoderModel, TrainReport), ModelError> {
    if windows.is_empty() {
        return Err(ModelError::EmptyTrainingSet);
    }
    let data: Batch<f32> = Batch::from_images(windows)?;
    let mut trainer = Trainer::new(model, cfg.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let loss = trainer.step(&data.select(chunk))?;
            total += loss * chunk.len() as f64;
        }
        epoch_losses.push(total / data.len() as f64);
    }
    let steps = trainer.steps();
    let mut model = trainer.into_model();
    model.meta.epochs = cfg.epochs;
    model.meta.final_loss = *epoch_losses.last().expect("at least one epoch");
    model.meta.seed = cfg.seed;
    Ok((model, TrainReport { epoch_losses, steps }))
}

/// Mean over all elements of the squared difference.
pub fn mse_loss<T: Scalar>(x: &Batch<T>, x_hat: &Batch<T>) -> Result<f64, ModelError> {
    if (x.len(), x.size(), x.channels()) != (x_hat.len(), x_hat.size(), x_hat.channels()) {
        return Err(ModelError::ShapeMismatch("loss operands differ in shape".into()));
    }
    let n = x.data().len() as f64;
    Ok(x.data()
        .iter()
        .zip(x_hat.data())
        .map(|(&a, &b)| {
            let d = (a - b).to_f64().unwrap_or(f64::NAN);
            d * d
        })
        .sum::<f64>()
        / n)
}
