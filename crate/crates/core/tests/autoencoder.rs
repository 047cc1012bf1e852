use hpscreen::autoencoder::{
    load_model, mse_loss, save_model, train, Autoencoder, AutoencoderConfig, AutoencoderModel, Batch,
    TrainConfig, Trainer,
};
use hpscreen::RasterImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mini_config() -> AutoencoderConfig {
    AutoencoderConfig {
        input_size: 4,
        input_channels: 2,
        enc_channels: vec![2, 2, 2],
        dec_channels: vec![2, 2, 2],
        ..AutoencoderConfig::default()
    }
}

fn random_batch<T: hpscreen::autoencoder::Scalar>(n: usize, size: usize, channels: usize, seed: u64) -> Batch<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * size * size * channels)
        .map(|_| T::from_f64(rng.random_range(0.0..1.0)).unwrap())
        .collect();
    Batch::new(n, size, channels, data).unwrap()
}

#[test]
fn finite_difference_gradient_check() {
    let model = Autoencoder::<f64>::init(&mini_config(), 3).unwrap();
    let x = random_batch::<f64>(4, 4, 2, 9);
    let (_, grads, _) = model.loss_and_grads(&x).unwrap();
    let groups = model.param_groups();
    assert_eq!(groups.len(), grads.groups.len());
    let h = 1e-5;
    for (gi, ((name, analytic), group)) in grads.groups.iter().zip(&groups).enumerate() {
        assert_eq!(name, &group.name);
        let mut numeric = Vec::with_capacity(analytic.len());
        for j in 0..analytic.len() {
            let mut plus = model.clone();
            plus.param_slices_mut()[gi][j] += h;
            let mut minus = model.clone();
            minus.param_slices_mut()[gi][j] -= h;
            numeric.push((plus.train_loss(&x).unwrap() - minus.train_loss(&x).unwrap()) / (2.0 * h));
        }
        let diff: f64 = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let norm = analytic.iter().map(|a| a * a).sum::<f64>().sqrt().max(numeric.iter().map(|a| a * a).sum::<f64>().sqrt());
        let rel = if norm > 0.0 { diff / norm } else { diff };
        assert!(rel <= 1e-4, "{name}: relative error {rel:e}");
    }
}

#[test]
fn latent_is_7x7x64_and_shapes_round_trip() {
    let model = AutoencoderModel::init(&AutoencoderConfig::default(), 0).unwrap();
    assert_eq!(model.latent_shape(), (64, 7, 7));
    for n in [1, 3] {
        let x = random_batch::<f32>(n, 28, 3, n as u64);
        let y = model.forward(&x).unwrap();
        assert_eq!((y.len(), y.size(), y.channels()), (n, 28, 3));
        assert!(y.data().iter().all(|v| v.is_finite() && *v > 0.0 && *v < 1.0));
    }
    let wrong = random_batch::<f32>(2, 14, 3, 1);
    assert!(model.forward(&wrong).is_err());
}

#[test]
fn init_is_seeded_finite_and_bounded() {
    let a = AutoencoderModel::init(&AutoencoderConfig::default(), 5).unwrap();
    let b = AutoencoderModel::init(&AutoencoderConfig::default(), 5).unwrap();
    let c = AutoencoderModel::init(&AutoencoderConfig::default(), 6).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert!(a.all_finite());
    assert!(a.param_groups().iter().filter(|g| g.name.ends_with(".weight")).all(|g| g.values.iter().all(|v| v.abs() < 1.0)));
}

#[test]
fn mse_examples() {
    let zeros = Batch::new(1, 2, 3, vec![0.0f64; 12]).unwrap();
    let ones = Batch::new(1, 2, 3, vec![1.0f64; 12]).unwrap();
    assert_eq!(mse_loss(&zeros, &zeros).unwrap(), 0.0);
    assert_eq!(mse_loss(&zeros, &ones).unwrap(), 1.0);
    let a = random_batch::<f64>(3, 28, 3, 1);
    let b = random_batch::<f64>(3, 28, 3, 2);
    let mut sum = 0.0;
    for i in 0..a.data().len() {
        sum += (a.data()[i] - b.data()[i]) * (a.data()[i] - b.data()[i]);
    }
    assert!((mse_loss(&a, &b).unwrap() - sum / (3.0 * 28.0 * 28.0 * 3.0)).abs() < 1e-12);
    let small = random_batch::<f64>(2, 28, 3, 2);
    assert!(mse_loss(&a, &small).is_err());
}

#[test]
fn zero_learning_rate_keeps_weights() {
    let model = AutoencoderModel::init(&AutoencoderConfig::default(), 1).unwrap();
    let before: Vec<Vec<f32>> = model.param_groups().iter().map(|g| g.values.to_vec()).collect();
    let cfg = TrainConfig { learning_rate: 0.0, ..TrainConfig::default() };
    let mut t = Trainer::new(model, cfg).unwrap();
    t.step(&random_batch(4, 28, 3, 3)).unwrap();
    let after: Vec<Vec<f32>> = t.model().param_groups().iter().map(|g| g.values.to_vec()).collect();
    assert_eq!(before, after);
}

#[test]
fn overfit_one_batch() {
    let model = AutoencoderModel::init(&AutoencoderConfig::default(), 2).unwrap();
    let batch = random_batch::<f32>(8, 28, 3, 4);
    let mut t = Trainer::new(model, TrainConfig::default()).unwrap();
    let first = t.step(&batch).unwrap();
    let mut last = first;
    for _ in 1..500 {
        last = t.step(&batch).unwrap();
    }
    println!("random batch: step0 {first:.5} step499 {last:.6} ratio {:.1}", first / last);
    assert!(first / last >= 100.0);

    let constant = Batch::new(4, 28, 3, vec![0.7f32; 4 * 28 * 28 * 3]).unwrap();
    let model = AutoencoderModel::init(&AutoencoderConfig::default(), 2).unwrap();
    let mut t = Trainer::new(model, TrainConfig::default()).unwrap();
    for _ in 0..500 {
        t.step(&constant).unwrap();
    }
    let recon = t.model().forward(&constant).unwrap();
    let mse = mse_loss(&constant, &recon).unwrap();
    println!("constant batch inference mse {mse:e}");
    assert!(mse < 1e-3);
}

fn random_images(n: usize, seed: u64) -> Vec<RasterImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let base: [f32; 3] = [rng.random_range(0.2..0.5), rng.random_range(0.3..0.6), rng.random_range(0.6..0.9)];
            let data = (0..28 * 28 * 3).map(|i| (base[i % 3] + rng.random_range(-0.05..0.05f32)).clamp(0.0, 1.0)).collect();
            RasterImage::new(28, 28, data).unwrap()
        })
        .collect()
}

#[test]
fn training_is_deterministic_and_checkpoints_round_trip() {
    let windows = random_images(40, 1);
    let cfg = TrainConfig { epochs: 3, batch_size: 16, seed: 4, ..TrainConfig::default() };
    let init = AutoencoderModel::init(&AutoencoderConfig::default(), 4).unwrap();
    let (a, ra) = train(init.clone(), &windows, &cfg).unwrap();
    let (b, rb) = train(init, &windows, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(ra, rb);
    assert_eq!(a.meta.epochs, 3);
    assert_eq!(a.meta.final_loss, *ra.epoch_losses.last().unwrap());
    let dir = tempfile::tempdir().unwrap();
    save_model(&a, dir.path().join("a")).unwrap();
    save_model(&b, dir.path().join("b")).unwrap();
    assert_eq!(std::fs::read(dir.path().join("a")).unwrap(), std::fs::read(dir.path().join("b")).unwrap());
    assert_eq!(load_model(dir.path().join("a")).unwrap(), a);
}

#[test]
fn single_window_training_overfits() {
    let windows = random_images(1, 8);
    let cfg = TrainConfig { epochs: 500, batch_size: 64, seed: 1, ..TrainConfig::default() };
    let (model, _) = train(AutoencoderModel::init(&AutoencoderConfig::default(), 1).unwrap(), &windows, &cfg).unwrap();
    let recon = model.reconstruct(&windows).unwrap();
    let x = Batch::<f32>::from_images(&windows).unwrap();
    let y = Batch::<f32>::from_images(&recon).unwrap();
    let mse = mse_loss(&x, &y).unwrap();
    println!("single window mse {mse:e}");
    assert!(mse < 1e-3);
}

#[test]
fn empty_training_set_rejected() {
    let model = AutoencoderModel::init(&AutoencoderConfig::default(), 1).unwrap();
    assert!(train(model, &[], &TrainConfig::default()).is_err());
}

#[test]
fn loss_curve_decreases_when_smoothed() {
    let windows = random_images(128, 3);
    let cfg = TrainConfig { epochs: 20, batch_size: 32, seed: 2, ..TrainConfig::default() };
    let start = std::time::Instant::now();
    let (_, report) = train(AutoencoderModel::init(&AutoencoderConfig::default(), 2).unwrap(), &windows, &cfg).unwrap();
    println!("20 epochs x 128 windows: {:?}", start.elapsed());
    let spans: Vec<f64> = report.epoch_losses.chunks(5).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    println!("{spans:?}");
    assert!(spans.windows(2).all(|w| w[1] <= w[0]));
}
