//! MSE loss, SGD with classical momentum, the step learning-rate
//! schedule, and the mini-batch training loop.
//!
//! Training is deterministic given the model seed and the shuffle seed:
//! one ChaCha8 stream drives every epoch's shuffle, batches are gathered
//! in shuffled index order, and the layer arithmetic is thread-count
//! invariant. Loss typically drops steeply over the first ten epochs and
//! flattens by thirty; the fixed epoch budget makes no use of that.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use ndarray::{Array3, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{
    model_backward, model_forward_train, Gradients, Model, Tensor4,
};
use crate::windowing::SampleSet;

/// The learning rate decays by `lr_decay` once per this many epochs.
pub const LR_DECAY_INTERVAL: usize = 10;

/// Optimizer and loop constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Multiplier applied to the learning rate every [`LR_DECAY_INTERVAL`]
    /// epochs.
    pub lr_decay: f64,
    pub shuffle_seed: u64,
}

impl TrainConfig {
    /// Small batches for desk-scale runs.
    pub fn desk(shuffle_seed: u64) -> Self {
        TrainConfig {
            initial_lr: 0.10,
            momentum: 0.9,
            batch_size: 16,
            epochs: 50,
            lr_decay: 0.8,
            shuffle_seed,
        }
    }

    /// Full-scale batches.
    pub fn full_scale(shuffle_seed: u64) -> Self {
        TrainConfig { batch_size: 128, ..Self::desk(shuffle_seed) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epoch count must be positive".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch size {} is below 2, the batch-norm minimum",
                self.batch_size
            )));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!("lr decay {} must lie in (0, 1]", self.lr_decay)));
        }
        if !(self.momentum >= 0.0 && self.momentum < 1.0) {
            return Err(Error::Config(format!("momentum {} must lie in [0, 1)", self.momentum)));
        }
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return Err(Error::Config(format!(
                "initial learning rate {} must be positive and finite",
                self.initial_lr
            )));
        }
        Ok(())
    }
}

/// One epoch's summary.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean squared error over all samples the epoch actually trained on.
    pub train_loss: f64,
    pub val_rmse: Option<f64>,
    pub seconds: f64,
}

/// Per-epoch records, exactly one per configured epoch.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,lr,train_loss,val_rmse,seconds\n");
        for r in &self.records {
            let val = r.val_rmse.map(|v| v.to_string()).unwrap_or_default();
            writeln!(out, "{},{},{},{},{}", r.epoch, r.lr, r.train_loss, val, r.seconds)
                .expect("writing to a String cannot fail");
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Mean squared error and its gradient with respect to the predictions.
pub fn mse_loss(pred: &Array3<f64>, target: &Array3<f64>) -> Result<(f64, Array3<f64>)> {
    if pred.dim() != target.dim() {
        return Err(Error::Shape(format!(
            "prediction dims {:?} do not match target dims {:?}",
            pred.dim(),
            target.dim()
        )));
    }
    let n = pred.len() as f64;
    let loss = pred
        .iter()
        .zip(target.iter())
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n;
    let grad = ndarray::Zip::from(pred).and(target).map_collect(|&p, &t| 2.0 * (p - t) / n);
    Ok((loss, grad))
}

/// Learning rate for a 1-based epoch:
/// initial · decay^⌊(epoch−1)/interval⌋.
pub fn lr_at_epoch(config: &TrainConfig, epoch: usize) -> Result<f64> {
    if epoch == 0 || epoch > config.epochs {
        return Err(Error::Range(format!(
            "epoch {epoch} outside schedule 1..={}",
            config.epochs
        )));
    }
    let steps = (epoch - 1) / LR_DECAY_INTERVAL;
    Ok(config.initial_lr * config.lr_decay.powi(steps as i32))
}

/// Classical momentum update on one flat parameter slice:
/// v ← μ·v − lr·g, then p ← p + v.
pub fn sgdm_step(
    params: &mut [f64],
    grads: &[f64],
    velocity: &mut [f64],
    lr: f64,
    momentum: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(Error::Shape(format!(
            "parameter slice of {} values got {} gradients and {} velocities",
            params.len(),
            grads.len(),
            velocity.len()
        )));
    }
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v - lr * g;
        *p += *v;
    }
    Ok(())
}

fn apply_update(model: &mut Model, grads: &Gradients, velocity: &mut Gradients, lr: f64, momentum: f64) -> Result<()> {
    let grad_slices = grads.as_slices();
    let vel_slices = velocity.as_slices_mut();
    let param_slices = model.learnable_params_mut();
    debug_assert_eq!(param_slices.len(), grad_slices.len());
    for ((p, g), v) in param_slices.into_iter().zip(grad_slices).zip(vel_slices) {
        sgdm_step(p, g, v, lr, momentum)?;
    }
    Ok(())
}

/// Batch index groups for one epoch: consecutive chunks of the shuffled
/// order, dropping a final ragged chunk smaller than 2 (batch norm cannot
/// normalize a single element). The shuffle varies which samples land in
/// the dropped tail, so coverage evens out across epochs.
fn epoch_batches(order: &[usize], batch_size: usize) -> impl Iterator<Item = &[usize]> {
    order.chunks(batch_size).filter(|chunk| chunk.len() >= 2)
}

fn gather_batch(samples: &SampleSet, chunk: &[usize]) -> (Tensor4, Array3<f64>) {
    let (_, channels, height, width) = samples.inputs.dim();
    let mut inputs = Tensor4::zeros((chunk.len(), channels, height, width));
    let mut targets = Array3::zeros((chunk.len(), height, width));
    for (k, &i) in chunk.iter().enumerate() {
        inputs.index_axis_mut(Axis(0), k).assign(&samples.inputs.index_axis(Axis(0), i));
        targets.index_axis_mut(Axis(0), k).assign(&samples.targets.index_axis(Axis(0), i));
    }
    (inputs, targets)
}

/// Run the full training loop on `model` in place.
pub fn train(model: &mut Model, samples: &SampleSet, config: &TrainConfig) -> Result<TrainHistory> {
    train_with_hooks(model, samples, config, None, None)
}

/// Training loop with optional per-epoch hooks: `validation` scores the
/// model after each epoch's updates (recorded as `val_rmse`), and
/// `after_epoch` runs last, for periodic checkpointing.
pub fn train_with_hooks(
    model: &mut Model,
    samples: &SampleSet,
    config: &TrainConfig,
    mut validation: Option<&mut dyn FnMut(&Model) -> Result<f64>>,
    mut after_epoch: Option<&mut dyn FnMut(usize, &Model) -> Result<()>>,
) -> Result<TrainHistory> {
    config.validate()?;
    let n = samples.len();
    if n == 0 {
        return Err(Error::Input("cannot train on an empty sample set".into()));
    }
    if config.batch_size > n {
        return Err(Error::Config(format!(
            "batch size {} exceeds the {} available samples",
            config.batch_size, n
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.shuffle_seed);
    let mut velocity = Gradients::zeros_like(model);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = TrainHistory::default();

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let lr = lr_at_epoch(config, epoch)?;
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut element_count = 0usize;
        for chunk in epoch_batches(&order, config.batch_size) {
            let (inputs, targets) = gather_batch(samples, chunk);
            let (pred, cache) = model_forward_train(model, &inputs)?;
            let (loss, grad_pred) = mse_loss(&pred, &targets)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss {loss} at epoch {epoch} is not finite"
                )));
            }
            let grads = model_backward(model, &cache, &grad_pred)?;
            apply_update(model, &grads, &mut velocity, lr, config.momentum)?;
            loss_sum += loss * chunk.len() as f64;
            element_count += chunk.len();
        }
        debug_assert!(element_count > 0, "first chunk always has batch_size >= 2 elements");
        let train_loss = loss_sum / element_count as f64;

        let val_rmse = match validation.as_mut() {
            Some(f) => Some(f(model)?),
            None => None,
        };
        if let Some(f) = after_epoch.as_mut() {
            f(epoch, model)?;
        }
        history.records.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            val_rmse,
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{NormStats, TrafficCube};
    use crate::ingest::{generate_synthetic, Hotspot, SynthConfig};
    use crate::nn::{init_model, model_forward, Mode, ModelConfig};
    use crate::windowing::{build_samples, LagSpec};
    use ndarray::Array3;
    use rand::Rng;

    fn small_config(epochs: usize, batch: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            initial_lr: 0.05,
            momentum: 0.9,
            batch_size: batch,
            epochs,
            lr_decay: 0.8,
            shuffle_seed: seed,
        }
    }

    #[test]
    fn mse_perfect_fit_is_zero_with_zero_gradient() {
        let pred = Array3::from_shape_fn((2, 3, 3), |(b, r, c)| (b + r * c) as f64);
        let (loss, grad) = mse_loss(&pred, &pred).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn mse_unit_offset_gives_unit_loss_and_uniform_gradient() {
        let target = Array3::zeros((2, 3, 3));
        let pred = target.mapv(|v: f64| v + 1.0);
        let (loss, grad) = mse_loss(&pred, &target).unwrap();
        assert!((loss - 1.0).abs() < 1e-15);
        let want = 2.0 / 18.0;
        assert!(grad.iter().all(|&g| (g - want).abs() < 1e-15));
    }

    #[test]
    fn mse_matches_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pred = Array3::from_shape_fn((2, 3, 3), |_| rng.gen_range(-2.0..2.0));
        let target = Array3::from_shape_fn((2, 3, 3), |_| rng.gen_range(-2.0..2.0));
        let (loss, grad) = mse_loss(&pred, &target).unwrap();
        let mut sum = 0.0;
        for b in 0..2 {
            for r in 0..3 {
                for c in 0..3 {
                    let d = pred[[b, r, c]] - target[[b, r, c]];
                    sum += d * d;
                    assert!((grad[[b, r, c]] - 2.0 * d / 18.0).abs() < 1e-12);
                }
            }
        }
        assert!((loss - sum / 18.0).abs() < 1e-12);
    }

    #[test]
    fn mse_rejects_shape_mismatch() {
        let a = Array3::<f64>::zeros((2, 3, 3));
        let b = Array3::<f64>::zeros((2, 3, 4));
        assert!(matches!(mse_loss(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn lr_schedule_steps_down_every_ten_epochs() {
        let cfg = TrainConfig { initial_lr: 0.10, epochs: 50, ..small_config(50, 16, 0) };
        assert!((lr_at_epoch(&cfg, 1).unwrap() - 0.10).abs() < 1e-15);
        assert!((lr_at_epoch(&cfg, 10).unwrap() - 0.10).abs() < 1e-15);
        assert!((lr_at_epoch(&cfg, 11).unwrap() - 0.08).abs() < 1e-15);
        assert!((lr_at_epoch(&cfg, 21).unwrap() - 0.064).abs() < 1e-15);
        let plateaus = [0.10, 0.08, 0.064, 0.0512, 0.04096];
        for epoch in 1..=50 {
            let want = plateaus[(epoch - 1) / 10];
            let got = lr_at_epoch(&cfg, epoch).unwrap();
            assert!((got - want).abs() < 1e-12, "epoch {epoch}: {got} vs {want}");
        }
        assert!(matches!(lr_at_epoch(&cfg, 0), Err(Error::Range(_))));
        assert!(matches!(lr_at_epoch(&cfg, 51), Err(Error::Range(_))));
    }

    #[test]
    fn sgdm_zero_gradients_are_a_fixed_point() {
        let mut p = vec![1.0, -2.0, 3.5];
        let mut v = vec![0.0; 3];
        for _ in 0..5 {
            sgdm_step(&mut p, &[0.0; 3], &mut v, 0.1, 0.9).unwrap();
        }
        assert_eq!(p, vec![1.0, -2.0, 3.5]);
        assert_eq!(v, vec![0.0; 3]);
    }

    #[test]
    fn sgdm_first_step_is_plain_sgd() {
        let mut p = vec![1.0, 2.0];
        let mut v = vec![0.0; 2];
        sgdm_step(&mut p, &[0.5, -0.25], &mut v, 0.1, 0.9).unwrap();
        assert!((p[0] - 0.95).abs() < 1e-15);
        assert!((p[1] - 2.025).abs() < 1e-15);
    }

    #[test]
    fn sgdm_matches_hand_iterated_recurrence() {
        let mut p = vec![1.0];
        let mut v = vec![0.0];
        sgdm_step(&mut p, &[1.0], &mut v, 0.1, 0.9).unwrap();
        assert!((v[0] + 0.1).abs() < 1e-15);
        assert!((p[0] - 0.9).abs() < 1e-15);
        sgdm_step(&mut p, &[1.0], &mut v, 0.1, 0.9).unwrap();
        assert!((v[0] + 0.19).abs() < 1e-15);
        assert!((p[0] - 0.71).abs() < 1e-15);
    }

    #[test]
    fn sgdm_without_momentum_is_vanilla_descent() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut q = p.clone();
        let mut v = vec![0.0; 20];
        for _ in 0..10 {
            let g: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
            sgdm_step(&mut p, &g, &mut v, 0.05, 0.0).unwrap();
            for (qi, gi) in q.iter_mut().zip(&g) {
                *qi -= 0.05 * gi;
            }
        }
        for (a, b) in p.iter().zip(&q) {
            assert!((a - b).abs() <= 1e-15 * b.abs().max(1.0));
        }
    }

    #[test]
    fn sgdm_rejects_length_mismatch() {
        let mut p = vec![0.0; 3];
        let mut v = vec![0.0; 3];
        assert!(matches!(
            sgdm_step(&mut p, &[0.0; 2], &mut v, 0.1, 0.9),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn sgdm_converges_on_a_convex_quadratic() {
        // f(p) = 1/2 Σ a_i (p_i − m_i)², an overdamped setting: both
        // characteristic roots real, so descent is monotone after the
        // deadline and geometric to the minimizer.
        let a = [0.5, 1.0];
        let m = [0.3, -0.7];
        let mut p = vec![1.3, 0.5];
        let mut v = vec![0.0; 2];
        let objective = |p: &[f64]| -> f64 {
            p.iter().zip(&a).zip(&m).map(|((pi, ai), mi)| 0.5 * ai * (pi - mi) * (pi - mi)).sum()
        };
        let mut prev = objective(&p);
        for step in 1..=200 {
            let g: Vec<f64> = p.iter().zip(&a).zip(&m).map(|((pi, ai), mi)| ai * (pi - mi)).collect();
            sgdm_step(&mut p, &g, &mut v, 0.08, 0.5).unwrap();
            let now = objective(&p);
            if step > 10 {
                assert!(now <= prev, "objective rose at step {step}: {prev} -> {now}");
            }
            prev = now;
        }
        assert!((p[0] - m[0]).abs() < 1e-6);
        assert!((p[1] - m[1]).abs() < 1e-6);
    }

    #[test]
    fn batch_partition_drops_only_sub_pair_tails() {
        let order: Vec<usize> = (0..10).collect();
        assert_eq!(epoch_batches(&order, 2).count(), 5);
        let order: Vec<usize> = (0..11).collect();
        assert_eq!(epoch_batches(&order, 2).count(), 5);
        let order: Vec<usize> = (0..7).collect();
        assert_eq!(epoch_batches(&order, 3).count(), 2);
        let order: Vec<usize> = (0..8).collect();
        let sizes: Vec<usize> = epoch_batches(&order, 3).map(|c| c.len()).collect();
        assert_eq!(sizes, vec![3, 3, 2]);
    }

    /// Two-week synthetic cube, normalized, with one-hour lag samples.
    fn training_fixture(height: usize, width: usize) -> (crate::windowing::SampleSet, TrafficCube, NormStats) {
        let synth = SynthConfig {
            height,
            width,
            weeks: 2,
            seed: 9,
            hotspots: vec![Hotspot::new(height as f64 / 2.0, width as f64 / 2.0, 6.0)],
            noise_std: 0.02,
            ..SynthConfig::default()
        };
        let cube = generate_synthetic(&synth).unwrap();
        let stats = NormStats::from_cube(&cube).unwrap();
        let normalized = crate::grid::normalize_with(&cube, &stats).unwrap();
        let spec = LagSpec::new(2, 1, 0);
        let samples = build_samples(&normalized, &spec, 26..76).unwrap();
        (samples, normalized, stats)
    }

    #[test]
    fn training_reduces_loss_on_synthetic_samples() {
        let (samples, _, _) = training_fixture(10, 10);
        assert_eq!(samples.len(), 50);
        let nn_cfg = ModelConfig {
            num_layers: 2,
            growth: 4,
            input_channels: 4,
            height: 10,
            width: 10,
            pool_size: 5,
            pool_stride: 5,
            momentum_bn: 0.9,
            epsilon: 1e-5,
        };
        let mut model = init_model(&nn_cfg, 3).unwrap();
        let history = train(&mut model, &samples, &small_config(30, 10, 4)).unwrap();
        assert_eq!(history.records.len(), 30);
        let first = history.records.first().unwrap().train_loss;
        let last = history.records.last().unwrap().train_loss;
        assert!(last < first, "loss went {first} -> {last}");
        assert!(history.records.iter().all(|r| r.train_loss.is_finite()));
    }

    #[test]
    fn identical_seeds_reproduce_training_bit_for_bit() {
        let (samples, _, _) = training_fixture(10, 10);
        let nn_cfg = ModelConfig {
            num_layers: 1,
            growth: 3,
            input_channels: 4,
            height: 10,
            width: 10,
            pool_size: 5,
            pool_stride: 5,
            momentum_bn: 0.9,
            epsilon: 1e-5,
        };
        let cfg = small_config(4, 10, 11);
        let mut model_a = init_model(&nn_cfg, 5).unwrap();
        let hist_a = train(&mut model_a, &samples, &cfg).unwrap();
        let mut model_b = init_model(&nn_cfg, 5).unwrap();
        let hist_b = train(&mut model_b, &samples, &cfg).unwrap();
        assert_eq!(model_a, model_b);
        for (a, b) in hist_a.records.iter().zip(&hist_b.records) {
            // seconds is wall clock; everything else must match exactly
            assert_eq!(a.epoch, b.epoch);
            assert_eq!(a.lr, b.lr);
            assert_eq!(a.train_loss, b.train_loss);
            assert_eq!(a.val_rmse, b.val_rmse);
        }
        let mut model_c = init_model(&nn_cfg, 5).unwrap();
        let hist_c =
            train(&mut model_c, &samples, &TrainConfig { shuffle_seed: 12, ..cfg }).unwrap();
        assert_ne!(hist_a.records[3].train_loss, hist_c.records[3].train_loss);
    }

    #[test]
    fn training_rejects_empty_or_oversized_batches() {
        let (samples, _, _) = training_fixture(10, 10);
        let nn_cfg = ModelConfig {
            num_layers: 1,
            growth: 2,
            input_channels: 4,
            height: 10,
            width: 10,
            pool_size: 5,
            pool_stride: 5,
            momentum_bn: 0.9,
            epsilon: 1e-5,
        };
        let mut model = init_model(&nn_cfg, 6).unwrap();
        let bad = TrainConfig { epochs: 0, ..small_config(1, 10, 0) };
        assert!(matches!(train(&mut model, &samples, &bad), Err(Error::Config(_))));
        let bad = TrainConfig { batch_size: 1, ..small_config(1, 10, 0) };
        assert!(matches!(train(&mut model, &samples, &bad), Err(Error::Config(_))));
        let bad = TrainConfig { batch_size: samples.len() + 1, ..small_config(1, 16, 0) };
        assert!(matches!(train(&mut model, &samples, &bad), Err(Error::Config(_))));
    }

    #[test]
    fn training_stays_finite_across_seeds_at_desk_scale() {
        let synth = SynthConfig {
            weeks: 2,
            seed: 21,
            hotspots: vec![Hotspot::new(10.0, 10.0, 8.0), Hotspot::new(4.0, 15.0, 5.0)],
            ..SynthConfig::default()
        };
        let cube = generate_synthetic(&synth).unwrap();
        let (normalized, _) = crate::grid::normalize(&cube).unwrap();
        let spec = LagSpec::new(2, 1, 0);
        let samples = build_samples(&normalized, &spec, 26..50).unwrap();
        let nn_cfg = ModelConfig::desk(4, 20, 20);
        for seed in 0..10 {
            let mut model = init_model(&nn_cfg, seed).unwrap();
            let cfg = TrainConfig { epochs: 1, batch_size: 8, ..TrainConfig::desk(seed) };
            let history = train(&mut model, &samples, &cfg).unwrap();
            assert!(history.records[0].train_loss.is_finite(), "seed {seed}");
        }
    }

    #[test]
    fn hooks_record_validation_and_run_after_each_epoch() {
        let (samples, _, _) = training_fixture(10, 10);
        let nn_cfg = ModelConfig {
            num_layers: 1,
            growth: 2,
            input_channels: 4,
            height: 10,
            width: 10,
            pool_size: 5,
            pool_stride: 5,
            momentum_bn: 0.9,
            epsilon: 1e-5,
        };
        let mut model = init_model(&nn_cfg, 7).unwrap();
        let probe_in = samples.inputs.slice(ndarray::s![..2, .., .., ..]).to_owned();
        let mut seen = Vec::new();
        let mut validation = |m: &Model| -> Result<f64> {
            let out = model_forward(m, &probe_in, Mode::Infer)?;
            Ok(out.iter().map(|v| v * v).sum::<f64>().sqrt())
        };
        let mut after = |epoch: usize, _m: &Model| -> Result<()> {
            seen.push(epoch);
            Ok(())
        };
        let history = train_with_hooks(
            &mut model,
            &samples,
            &small_config(3, 10, 8),
            Some(&mut validation),
            Some(&mut after),
        )
        .unwrap();
        assert_eq!(seen, vec![1, 2, 3]);
        assert!(history.records.iter().all(|r| r.val_rmse.is_some()));
    }

    #[test]
    fn history_csv_has_a_header_and_one_row_per_epoch() {
        let history = TrainHistory {
            records: vec![
                EpochRecord { epoch: 1, lr: 0.1, train_loss: 0.5, val_rmse: None, seconds: 0.25 },
                EpochRecord {
                    epoch: 2,
                    lr: 0.1,
                    train_loss: 0.25,
                    val_rmse: Some(12.5),
                    seconds: 0.24,
                },
            ],
        };
        let csv = history.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "epoch,lr,train_loss,val_rmse,seconds");
        assert_eq!(lines[1], "1,0.1,0.5,,0.25");
        assert_eq!(lines[2], "2,0.1,0.25,12.5,0.24");
    }
}
