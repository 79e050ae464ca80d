//! Densely connected convolutional regression network.
//!
//! Every layer applies Conv → BN → ReLU to its incoming state and appends
//! the g new channels to that state, so layer l consumes N + (l−1)·g
//! channels. The combination is channel concatenation, not addition:
//! addition would need equal channel counts, and the whole point of the
//! layout is that later layers see every earlier feature map. The layer
//! order is Conv → BN → ReLU, not the BN → ReLU → Conv used by some other
//! dense-network designs.
//!
//! The head is a non-overlapping average pool, a hidden affine layer of
//! H·W units with ReLU, and a linear regression layer back to H·W values
//! reshaped to one frame per batch element. No output activation: targets
//! live in normalized space and may be negative.

pub mod ops;

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{s, Array1, Array2, Array3, Array4, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::grid::NormStats;
use crate::windowing::{lag_set, LagSpec};

pub use ops::{
    affine_backward, affine_forward, avgpool_backward, avgpool_forward, batchnorm_backward,
    batchnorm_forward, batchnorm_infer, batchnorm_train, conv2d_backward, conv2d_forward,
    relu_backward, relu_forward, AffineGrads, AffineParams, BatchNormParams, BnStats, ConvGrads,
    ConvParams, Mode, Tensor4,
};

/// Architecture constants. `input_channels` comes from the lag set size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub num_layers: usize,
    /// Channels each dense layer appends (convolution filter count).
    pub growth: usize,
    pub input_channels: usize,
    pub height: usize,
    pub width: usize,
    pub pool_size: usize,
    pub pool_stride: usize,
    pub momentum_bn: f64,
    pub epsilon: f64,
}

impl ModelConfig {
    /// Small configuration for desk-scale grids and tests.
    pub fn desk(input_channels: usize, height: usize, width: usize) -> Self {
        ModelConfig {
            num_layers: 4,
            growth: 8,
            input_channels,
            height,
            width,
            pool_size: 5,
            pool_stride: 5,
            momentum_bn: 0.9,
            epsilon: 1e-5,
        }
    }

    /// Full-scale configuration: 32 filters per layer and a depth of 6,
    /// mirroring the first dense block of the 121-layer reference design.
    pub fn full_scale(input_channels: usize, height: usize, width: usize) -> Self {
        ModelConfig { num_layers: 6, growth: 32, ..Self::desk(input_channels, height, width) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.growth == 0 || self.input_channels == 0 {
            return Err(Error::Config(
                "num_layers, growth, and input_channels must be positive".into(),
            ));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::Config("grid dimensions must be positive".into()));
        }
        if self.pool_size == 0 || self.pool_size != self.pool_stride {
            return Err(Error::Shape(format!(
                "pooling is non-overlapping: size {} must equal stride {}",
                self.pool_size, self.pool_stride
            )));
        }
        if self.height % self.pool_stride != 0 || self.width % self.pool_stride != 0 {
            return Err(Error::Shape(format!(
                "{}×{} grid is not divisible by the {}×{} pooling window",
                self.height, self.width, self.pool_size, self.pool_size
            )));
        }
        if !(self.momentum_bn > 0.0 && self.momentum_bn < 1.0) {
            return Err(Error::Config(format!(
                "momentum {} must lie in (0, 1)",
                self.momentum_bn
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon {} must be positive", self.epsilon)));
        }
        Ok(())
    }

    /// Channels entering dense layer `l` (1-based): N + (l−1)·g.
    pub fn channels_into_layer(&self, l: usize) -> usize {
        self.input_channels + (l - 1) * self.growth
    }

    /// Channels of the final state: N + L·g.
    pub fn final_channels(&self) -> usize {
        self.input_channels + self.num_layers * self.growth
    }

    /// Feature count after pooling and flattening.
    pub fn pooled_features(&self) -> usize {
        self.final_channels() * (self.height / self.pool_stride) * (self.width / self.pool_stride)
    }

    /// Hidden and output width of the head: one unit per grid cell.
    pub fn cells(&self) -> usize {
        self.height * self.width
    }
}

/// One dense layer: convolution followed by batch normalization (ReLU has
/// no parameters).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub conv: ConvParams,
    pub bn: BatchNormParams,
}

/// The full network with its configuration and initialization seed.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub layers: Vec<DenseLayer>,
    pub fc_hidden: AffineParams,
    pub fc_out: AffineParams,
    pub rng_seed: u64,
}

/// Gradients of one dense layer's learnable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub conv: ConvGrads,
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

/// Gradients for every learnable parameter of a [`Model`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrads>,
    pub fc_hidden: AffineGrads,
    pub fc_out: AffineGrads,
}

impl Model {
    /// Learnable parameter slices in a fixed declaration order (running
    /// statistics are not learnable). The order matches
    /// [`Gradients::as_slices`].
    pub fn learnable_params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 4 + 4);
        for layer in &mut self.layers {
            out.push(layer.conv.kernels.as_slice_mut().expect("owned standard layout"));
            out.push(layer.conv.bias.as_slice_mut().expect("owned standard layout"));
            out.push(layer.bn.gamma.as_slice_mut().expect("owned standard layout"));
            out.push(layer.bn.beta.as_slice_mut().expect("owned standard layout"));
        }
        out.push(self.fc_hidden.weight.as_slice_mut().expect("owned standard layout"));
        out.push(self.fc_hidden.bias.as_slice_mut().expect("owned standard layout"));
        out.push(self.fc_out.weight.as_slice_mut().expect("owned standard layout"));
        out.push(self.fc_out.bias.as_slice_mut().expect("owned standard layout"));
        out
    }

    pub fn learnable_param_count(&self) -> usize {
        let mut n = 0;
        for layer in &self.layers {
            n += layer.conv.kernels.len() + layer.conv.bias.len();
            n += layer.bn.gamma.len() + layer.bn.beta.len();
        }
        n + self.fc_hidden.weight.len()
            + self.fc_hidden.bias.len()
            + self.fc_out.weight.len()
            + self.fc_out.bias.len()
    }
}

impl Gradients {
    /// Zero gradients shaped like a model's learnable parameters. Doubles
    /// as the velocity buffer layout for momentum updates.
    pub fn zeros_like(model: &Model) -> Self {
        let layers = model
            .layers
            .iter()
            .map(|layer| LayerGrads {
                conv: ConvGrads {
                    kernels: Array4::zeros(layer.conv.kernels.raw_dim()),
                    bias: Array1::zeros(layer.conv.bias.len()),
                },
                gamma: Array1::zeros(layer.bn.gamma.len()),
                beta: Array1::zeros(layer.bn.beta.len()),
            })
            .collect();
        Gradients {
            layers,
            fc_hidden: AffineGrads {
                weight: Array2::zeros(model.fc_hidden.weight.raw_dim()),
                bias: Array1::zeros(model.fc_hidden.bias.len()),
            },
            fc_out: AffineGrads {
                weight: Array2::zeros(model.fc_out.weight.raw_dim()),
                bias: Array1::zeros(model.fc_out.bias.len()),
            },
        }
    }

    pub fn as_slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 4 + 4);
        for layer in &self.layers {
            out.push(layer.conv.kernels.as_slice().expect("owned standard layout"));
            out.push(layer.conv.bias.as_slice().expect("owned standard layout"));
            out.push(layer.gamma.as_slice().expect("owned standard layout"));
            out.push(layer.beta.as_slice().expect("owned standard layout"));
        }
        out.push(self.fc_hidden.weight.as_slice().expect("owned standard layout"));
        out.push(self.fc_hidden.bias.as_slice().expect("owned standard layout"));
        out.push(self.fc_out.weight.as_slice().expect("owned standard layout"));
        out.push(self.fc_out.bias.as_slice().expect("owned standard layout"));
        out
    }

    pub fn as_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 4 + 4);
        for layer in &mut self.layers {
            out.push(layer.conv.kernels.as_slice_mut().expect("owned standard layout"));
            out.push(layer.conv.bias.as_slice_mut().expect("owned standard layout"));
            out.push(layer.gamma.as_slice_mut().expect("owned standard layout"));
            out.push(layer.beta.as_slice_mut().expect("owned standard layout"));
        }
        out.push(self.fc_hidden.weight.as_slice_mut().expect("owned standard layout"));
        out.push(self.fc_hidden.bias.as_slice_mut().expect("owned standard layout"));
        out.push(self.fc_out.weight.as_slice_mut().expect("owned standard layout"));
        out.push(self.fc_out.bias.as_slice_mut().expect("owned standard layout"));
        out
    }
}

fn draw_weights(rng: &mut ChaCha8Rng, n: usize, fan_in: usize) -> Vec<f64> {
    let dist = Normal::new(0.0, (1.0 / fan_in as f64).sqrt()).expect("positive std");
    (0..n).map(|_| dist.sample(rng)).collect()
}

/// Seeded initialization: zero-mean weights with variance 1/fan_in, zero
/// biases, γ = 1, β = 0, running statistics (0, 1). Identical seeds yield
/// bit-identical models.
pub fn init_model(config: &ModelConfig, seed: u64) -> Result<Model> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(config.num_layers);
    for l in 1..=config.num_layers {
        let in_c = config.channels_into_layer(l);
        let fan_in = in_c * 9;
        let kernels = Array4::from_shape_vec(
            (config.growth, in_c, 3, 3),
            draw_weights(&mut rng, config.growth * in_c * 9, fan_in),
        )
        .expect("shape matches element count");
        let conv = ConvParams::new(kernels, Array1::zeros(config.growth))?;
        let bn = BatchNormParams::new(config.growth, config.momentum_bn, config.epsilon)?;
        layers.push(DenseLayer { conv, bn });
    }
    let features = config.pooled_features();
    let cells = config.cells();
    let fc_hidden = AffineParams {
        weight: Array2::from_shape_vec(
            (cells, features),
            draw_weights(&mut rng, cells * features, features),
        )
        .expect("shape matches element count"),
        bias: Array1::zeros(cells),
    };
    let fc_out = AffineParams {
        weight: Array2::from_shape_vec(
            (cells, cells),
            draw_weights(&mut rng, cells * cells, cells),
        )
        .expect("shape matches element count"),
        bias: Array1::zeros(cells),
    };
    Ok(Model { config: *config, layers, fc_hidden, fc_out, rng_seed: seed })
}

fn concat_channels(a: &Tensor4, b: &Tensor4) -> Tensor4 {
    ndarray::concatenate(Axis(1), &[a.view(), b.view()]).expect("matching batch and spatial dims")
}

/// One dense layer: state ↦ [state, ReLU(BN(Conv(state)))].
pub fn dense_layer_forward(state: &Tensor4, layer: &DenseLayer, mode: Mode) -> Result<Tensor4> {
    let conv_out = conv2d_forward(state, &layer.conv)?;
    let bn_out = match mode {
        Mode::Train => batchnorm_train(&conv_out, &layer.bn)?.0,
        Mode::Infer => batchnorm_infer(&conv_out, &layer.bn)?,
    };
    Ok(concat_channels(state, &relu_forward(&bn_out)))
}

/// Activations recorded by a training-mode forward pass, consumed by
/// [`model_backward`] and by the running-statistics update.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// states[l] enters layer l; states[L] feeds the pooling head.
    pub states: Vec<Tensor4>,
    /// Convolution outputs per layer (batch-norm inputs).
    pub conv_outs: Vec<Tensor4>,
    /// Batch-norm outputs per layer (ReLU inputs).
    pub bn_outs: Vec<Tensor4>,
    /// Batch statistics per layer, for the running update.
    pub bn_stats: Vec<BnStats>,
    /// Pooled activations flattened to (B, features).
    pub flat: Array2<f64>,
    /// Hidden affine output before ReLU.
    pub hidden_pre: Array2<f64>,
    /// Hidden activations after ReLU.
    pub hidden: Array2<f64>,
}

fn check_input_dims(model: &Model, input: &Tensor4) -> Result<()> {
    let cfg = &model.config;
    let want = (cfg.input_channels, cfg.height, cfg.width);
    let got = (input.dim().1, input.dim().2, input.dim().3);
    if got != want {
        return Err(Error::Shape(format!(
            "input stack is {got:?} per batch element, model expects {want:?}"
        )));
    }
    Ok(())
}

/// Training-mode forward pass that records every activation needed by the
/// backward pass. Pure: running statistics are not touched.
pub fn model_forward_cached(model: &Model, input: &Tensor4) -> Result<(Array3<f64>, ForwardCache)> {
    check_input_dims(model, input)?;
    let cfg = &model.config;
    let b_n = input.dim().0;
    let mut states = Vec::with_capacity(cfg.num_layers + 1);
    let mut conv_outs = Vec::with_capacity(cfg.num_layers);
    let mut bn_outs = Vec::with_capacity(cfg.num_layers);
    let mut bn_stats = Vec::with_capacity(cfg.num_layers);
    states.push(input.clone());
    for layer in &model.layers {
        let state = states.last().expect("seeded with the input");
        let conv_out = conv2d_forward(state, &layer.conv)?;
        let (bn_out, stats) = batchnorm_train(&conv_out, &layer.bn)?;
        let next = concat_channels(state, &relu_forward(&bn_out));
        conv_outs.push(conv_out);
        bn_outs.push(bn_out);
        bn_stats.push(stats);
        states.push(next);
    }
    let pooled = avgpool_forward(states.last().unwrap(), cfg.pool_size, cfg.pool_stride)?;
    let flat = pooled
        .into_shape_with_order((b_n, cfg.pooled_features()))
        .map_err(|e| Error::Shape(format!("flatten: {e}")))?;
    let hidden_pre = affine_forward(&flat, &model.fc_hidden)?;
    let hidden = relu_forward(&hidden_pre);
    let out = affine_forward(&hidden, &model.fc_out)?;
    let predictions = out
        .into_shape_with_order((b_n, cfg.height, cfg.width))
        .map_err(|e| Error::Shape(format!("reshape predictions: {e}")))?;
    let cache = ForwardCache { states, conv_outs, bn_outs, bn_stats, flat, hidden_pre, hidden };
    Ok((predictions, cache))
}

/// Forward pass without gradient bookkeeping. Training mode normalizes
/// with batch statistics; inference mode uses the stored running
/// statistics and accepts any batch size. Both are pure.
pub fn model_forward(model: &Model, input: &Tensor4, mode: Mode) -> Result<Array3<f64>> {
    match mode {
        Mode::Train => Ok(model_forward_cached(model, input)?.0),
        Mode::Infer => {
            check_input_dims(model, input)?;
            let cfg = &model.config;
            let b_n = input.dim().0;
            let mut state = input.clone();
            for layer in &model.layers {
                state = dense_layer_forward(&state, layer, Mode::Infer)?;
            }
            let pooled = avgpool_forward(&state, cfg.pool_size, cfg.pool_stride)?;
            let flat = pooled
                .into_shape_with_order((b_n, cfg.pooled_features()))
                .map_err(|e| Error::Shape(format!("flatten: {e}")))?;
            let hidden = relu_forward(&affine_forward(&flat, &model.fc_hidden)?);
            let out = affine_forward(&hidden, &model.fc_out)?;
            out.into_shape_with_order((b_n, cfg.height, cfg.width))
                .map_err(|e| Error::Shape(format!("reshape predictions: {e}")))
        }
    }
}

/// Training forward pass that also folds each layer's batch statistics
/// into its running estimates, as training must.
pub fn model_forward_train(
    model: &mut Model,
    input: &Tensor4,
) -> Result<(Array3<f64>, ForwardCache)> {
    let (predictions, cache) = model_forward_cached(model, input)?;
    for (layer, stats) in model.layers.iter_mut().zip(&cache.bn_stats) {
        layer.bn.update_running(stats);
    }
    Ok((predictions, cache))
}

/// Exact gradients of the training-mode forward pass.
///
/// The concatenation backward splits each state cotangent into the skip
/// prefix and the layer-output suffix, then sums the convolution's input
/// gradient into the prefix: both paths share the previous state.
pub fn model_backward(
    model: &Model,
    cache: &ForwardCache,
    grad_predictions: &Array3<f64>,
) -> Result<Gradients> {
    let cfg = &model.config;
    let l_n = cfg.num_layers;
    if cache.states.len() != l_n + 1 || cache.conv_outs.len() != l_n {
        return Err(Error::State(format!(
            "cache covers {} layers, model has {l_n}",
            cache.conv_outs.len()
        )));
    }
    let b_n = cache.states[0].dim().0;
    if grad_predictions.dim() != (b_n, cfg.height, cfg.width) {
        return Err(Error::Shape(format!(
            "grad dims {:?} do not match predictions ({b_n}, {}, {})",
            grad_predictions.dim(),
            cfg.height,
            cfg.width
        )));
    }

    let grad_out_flat = grad_predictions
        .to_owned()
        .into_shape_with_order((b_n, cfg.cells()))
        .map_err(|e| Error::Shape(format!("flatten grad: {e}")))?;
    let (grad_hidden, fc_out_grads) = affine_backward(&cache.hidden, &model.fc_out, &grad_out_flat)?;
    let grad_hidden_pre = relu_backward(&cache.hidden_pre, &grad_hidden);
    let (grad_flat, fc_hidden_grads) =
        affine_backward(&cache.flat, &model.fc_hidden, &grad_hidden_pre)?;
    let pooled_dims = (
        b_n,
        cfg.final_channels(),
        cfg.height / cfg.pool_stride,
        cfg.width / cfg.pool_stride,
    );
    let grad_pooled = grad_flat
        .into_shape_with_order(pooled_dims)
        .map_err(|e| Error::Shape(format!("reshape pooled grad: {e}")))?;
    let mut grad_state = avgpool_backward(
        cache.states.last().unwrap(),
        cfg.pool_size,
        cfg.pool_stride,
        &grad_pooled,
    )?;

    let mut layer_grads_rev = Vec::with_capacity(l_n);
    for l in (0..l_n).rev() {
        let prefix_channels = cfg.input_channels + l * cfg.growth;
        let grad_prefix = grad_state.slice(s![.., ..prefix_channels, .., ..]).to_owned();
        let grad_suffix = grad_state.slice(s![.., prefix_channels.., .., ..]).to_owned();
        let grad_bn_out = relu_backward(&cache.bn_outs[l], &grad_suffix);
        let (grad_conv_out, grad_gamma, grad_beta) =
            batchnorm_backward(&cache.conv_outs[l], &model.layers[l].bn, &grad_bn_out)?;
        let (grad_layer_input, conv_grads) =
            conv2d_backward(&cache.states[l], &model.layers[l].conv, &grad_conv_out)?;
        layer_grads_rev.push(LayerGrads { conv: conv_grads, gamma: grad_gamma, beta: grad_beta });
        grad_state = grad_prefix + grad_layer_input;
    }
    layer_grads_rev.reverse();
    Ok(Gradients { layers: layer_grads_rev, fc_hidden: fc_hidden_grads, fc_out: fc_out_grads })
}

/// Normalization constants and split bookkeeping carried inside a
/// checkpoint so evaluation can reconstruct the training pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineMeta {
    pub stats: NormStats,
    pub total_weeks: u32,
    pub train_weeks: u32,
}

/// A model plus the lag spec it was trained for and optional pipeline
/// constants.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub lag_spec: LagSpec,
    pub meta: Option<PipelineMeta>,
}

const MODEL_MAGIC: &[u8; 4] = b"CGM1";

fn checkpoint_param_counts(config: &ModelConfig) -> Vec<usize> {
    let mut counts = Vec::with_capacity(config.num_layers * 6 + 4);
    for l in 1..=config.num_layers {
        let in_c = config.channels_into_layer(l);
        counts.push(config.growth * in_c * 9); // kernels
        counts.push(config.growth); // bias
        counts.push(config.growth); // gamma
        counts.push(config.growth); // beta
        counts.push(config.growth); // running_mean
        counts.push(config.growth); // running_var
    }
    counts.push(config.cells() * config.pooled_features());
    counts.push(config.cells());
    counts.push(config.cells() * config.cells());
    counts.push(config.cells());
    counts
}

fn checkpoint_tensors(model: &Model) -> Vec<&[f64]> {
    let mut out = Vec::with_capacity(model.layers.len() * 6 + 4);
    for layer in &model.layers {
        out.push(layer.conv.kernels.as_slice().expect("owned standard layout"));
        out.push(layer.conv.bias.as_slice().expect("owned standard layout"));
        out.push(layer.bn.gamma.as_slice().expect("owned standard layout"));
        out.push(layer.bn.beta.as_slice().expect("owned standard layout"));
        out.push(layer.bn.running_mean.as_slice().expect("owned standard layout"));
        out.push(layer.bn.running_var.as_slice().expect("owned standard layout"));
    }
    out.push(model.fc_hidden.weight.as_slice().expect("owned standard layout"));
    out.push(model.fc_hidden.bias.as_slice().expect("owned standard layout"));
    out.push(model.fc_out.weight.as_slice().expect("owned standard layout"));
    out.push(model.fc_out.bias.as_slice().expect("owned standard layout"));
    out
}

fn check_lag_consistency(config: &ModelConfig, spec: &LagSpec) -> Result<()> {
    let lags = lag_set(spec)?;
    if lags.len() != config.input_channels {
        return Err(Error::Config(format!(
            "lag spec {spec:?} yields {} channels, model expects {}",
            lags.len(),
            config.input_channels
        )));
    }
    Ok(())
}

/// Write a checkpoint: magic "CGM1", a fixed-layout config block, then all
/// parameter tensors in declaration order as little-endian f64. The round
/// trip through [`load_model`] is bit-exact.
pub fn save_model(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    let model = &checkpoint.model;
    model.config.validate()?;
    check_lag_consistency(&model.config, &checkpoint.lag_spec)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MODEL_MAGIC)?;
    let cfg = &model.config;
    for v in [
        cfg.num_layers,
        cfg.growth,
        cfg.input_channels,
        cfg.height,
        cfg.width,
        cfg.pool_size,
        cfg.pool_stride,
    ] {
        w.write_u32::<LittleEndian>(v as u32)?;
    }
    w.write_f64::<LittleEndian>(cfg.momentum_bn)?;
    w.write_f64::<LittleEndian>(cfg.epsilon)?;
    w.write_u64::<LittleEndian>(model.rng_seed)?;
    for v in [checkpoint.lag_spec.h, checkpoint.lag_spec.d, checkpoint.lag_spec.w] {
        w.write_u32::<LittleEndian>(v as u32)?;
    }
    match &checkpoint.meta {
        None => w.write_u8(0)?,
        Some(meta) => {
            w.write_u8(1)?;
            for v in [meta.stats.min_val, meta.stats.max_val, meta.stats.mean, meta.stats.std] {
                w.write_f64::<LittleEndian>(v)?;
            }
            w.write_u32::<LittleEndian>(meta.total_weeks)?;
            w.write_u32::<LittleEndian>(meta.train_weeks)?;
        }
    }
    for tensor in checkpoint_tensors(model) {
        for &v in tensor {
            w.write_f64::<LittleEndian>(v)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a checkpoint written by [`save_model`].
pub fn load_model(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("file too short for CGM1 header".into()))?;
    if &magic != MODEL_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected \"CGM1\"",
            String::from_utf8_lossy(&magic)
        )));
    }
    let header = |e: std::io::Error| Error::Format(format!("truncated CGM1 header: {e}"));
    let next_u32 = |r: &mut BufReader<File>| r.read_u32::<LittleEndian>().map_err(header);
    let num_layers = next_u32(&mut r)? as usize;
    let growth = next_u32(&mut r)? as usize;
    let input_channels = next_u32(&mut r)? as usize;
    let height = next_u32(&mut r)? as usize;
    let width = next_u32(&mut r)? as usize;
    let pool_size = next_u32(&mut r)? as usize;
    let pool_stride = next_u32(&mut r)? as usize;
    let momentum_bn = r.read_f64::<LittleEndian>().map_err(header)?;
    let epsilon = r.read_f64::<LittleEndian>().map_err(header)?;
    let rng_seed = r.read_u64::<LittleEndian>().map_err(header)?;
    let lag_spec = LagSpec {
        h: r.read_u32::<LittleEndian>().map_err(header)? as usize,
        d: r.read_u32::<LittleEndian>().map_err(header)? as usize,
        w: r.read_u32::<LittleEndian>().map_err(header)? as usize,
    };
    let meta = match r.read_u8().map_err(header)? {
        0 => None,
        1 => {
            let min_val = r.read_f64::<LittleEndian>().map_err(header)?;
            let max_val = r.read_f64::<LittleEndian>().map_err(header)?;
            let mean = r.read_f64::<LittleEndian>().map_err(header)?;
            let std = r.read_f64::<LittleEndian>().map_err(header)?;
            let total_weeks = r.read_u32::<LittleEndian>().map_err(header)?;
            let train_weeks = r.read_u32::<LittleEndian>().map_err(header)?;
            Some(PipelineMeta {
                stats: NormStats { min_val, max_val, mean, std },
                total_weeks,
                train_weeks,
            })
        }
        other => {
            return Err(Error::Format(format!("meta flag must be 0 or 1, got {other}")))
        }
    };

    let config = ModelConfig {
        num_layers,
        growth,
        input_channels,
        height,
        width,
        pool_size,
        pool_stride,
        momentum_bn,
        epsilon,
    };
    config.validate().map_err(|e| Error::Format(format!("config block invalid: {e}")))?;
    check_lag_consistency(&config, &lag_spec)
        .map_err(|e| Error::Format(format!("config block inconsistent: {e}")))?;

    let counts = checkpoint_param_counts(&config);
    let total: usize = counts.iter().sum();
    let expected = total * 8;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "parameter payload is {} bytes, expected {expected} ({total} f64)",
            payload.len()
        )));
    }
    let mut values = vec![0f64; total];
    LittleEndian::read_f64_into(&payload, &mut values);
    let mut cursor = values.as_slice();
    let mut take = |n: usize| -> Vec<f64> {
        let (head, tail) = cursor.split_at(n);
        cursor = tail;
        head.to_vec()
    };

    let mut layers = Vec::with_capacity(num_layers);
    for l in 1..=num_layers {
        let in_c = config.channels_into_layer(l);
        let kernels =
            Array4::from_shape_vec((growth, in_c, 3, 3), take(growth * in_c * 9))
                .expect("count matches shape");
        let bias = Array1::from(take(growth));
        let conv = ConvParams::new(kernels, bias)?;
        let mut bn = BatchNormParams::new(growth, momentum_bn, epsilon)?;
        bn.gamma = Array1::from(take(growth));
        bn.beta = Array1::from(take(growth));
        bn.running_mean = Array1::from(take(growth));
        bn.running_var = Array1::from(take(growth));
        if bn.running_var.iter().any(|&v| v < 0.0) {
            return Err(Error::Format("negative running variance in checkpoint".into()));
        }
        layers.push(DenseLayer { conv, bn });
    }
    let cells = config.cells();
    let features = config.pooled_features();
    let fc_hidden = AffineParams {
        weight: Array2::from_shape_vec((cells, features), take(cells * features))
            .expect("count matches shape"),
        bias: Array1::from(take(cells)),
    };
    let fc_out = AffineParams {
        weight: Array2::from_shape_vec((cells, cells), take(cells * cells))
            .expect("count matches shape"),
        bias: Array1::from(take(cells)),
    };
    debug_assert!(cursor.is_empty());
    Ok(Checkpoint {
        model: Model { config, layers, fc_hidden, fc_out, rng_seed },
        lag_spec,
        meta,
    })
}
