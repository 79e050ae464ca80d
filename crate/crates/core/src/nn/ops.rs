//! Layer primitives: convolution, batch normalization, ReLU, average
//! pooling, and affine maps, each with an exact analytic backward pass.
//!
//! All tensors are f64 with layout (batch, channel, row, col). Backward
//! passes accumulate in a fixed order, so results are bit-identical for any
//! rayon thread count.

use ndarray::{s, Array1, Array2, Array4, ArrayView2, Axis, Zip};
use ndarray::parallel::prelude::*;

use crate::error::{Error, Result};

/// Activation tensor indexed (batch, channel, row, col).
pub type Tensor4 = Array4<f64>;

/// Whether batch statistics (training) or running statistics (inference)
/// normalize a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// 3×3 convolution weights and per-output-channel bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    /// (out_channels, in_channels, 3, 3).
    pub kernels: Array4<f64>,
    pub bias: Array1<f64>,
}

impl ConvParams {
    pub fn new(kernels: Array4<f64>, bias: Array1<f64>) -> Result<Self> {
        let (oc, _, kh, kw) = kernels.dim();
        if (kh, kw) != (3, 3) {
            return Err(Error::Shape(format!("kernels must be 3×3, got {kh}×{kw}")));
        }
        if bias.len() != oc {
            return Err(Error::Shape(format!(
                "bias has {} entries for {oc} output channels",
                bias.len()
            )));
        }
        Ok(ConvParams { kernels, bias })
    }

    pub fn out_channels(&self) -> usize {
        self.kernels.dim().0
    }

    pub fn in_channels(&self) -> usize {
        self.kernels.dim().1
    }
}

/// Gradients of [`ConvParams`], same shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub kernels: Array4<f64>,
    pub bias: Array1<f64>,
}

/// Kernel tap (kr, kc) with padding 1 touches output rows
/// [oy0, oy1) reading input rows starting at iy0; empty when the extent
/// vanishes. Same arithmetic for columns.
fn tap_extent(k: usize, len: usize) -> (usize, usize, usize) {
    let d = k as isize - 1;
    let o0 = (-d).max(0) as usize;
    let o1 = (len as isize - d.max(0)).max(0) as usize;
    let i0 = (o0 as isize + d) as usize;
    (o0, o1, i0)
}

fn check_conv_shapes(input: &Tensor4, params: &ConvParams) -> Result<()> {
    if input.dim().1 != params.in_channels() {
        return Err(Error::Shape(format!(
            "input has {} channels, kernels expect {}",
            input.dim().1,
            params.in_channels()
        )));
    }
    Ok(())
}

/// Same-size stride-1 cross-correlation with zero padding 1.
///
/// Batch elements are independent, so the batch axis runs in parallel; each
/// output plane is written by exactly one task.
pub fn conv2d_forward(input: &Tensor4, params: &ConvParams) -> Result<Tensor4> {
    check_conv_shapes(input, params)?;
    let (b_n, _, h, w) = input.dim();
    let oc = params.out_channels();
    let mut out = Array4::<f64>::zeros((b_n, oc, h, w));
    out.axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(input.axis_iter(Axis(0)).into_par_iter())
        .for_each(|(mut out_b, in_b)| {
            for (o, mut out_plane) in out_b.outer_iter_mut().enumerate() {
                out_plane.fill(params.bias[o]);
                for (ic, in_plane) in in_b.outer_iter().enumerate() {
                    accumulate_taps(&mut out_plane, &in_plane, params, o, ic, h, w);
                }
            }
        });
    Ok(out)
}

fn accumulate_taps(
    out_plane: &mut ndarray::ArrayViewMut2<'_, f64>,
    in_plane: &ArrayView2<'_, f64>,
    params: &ConvParams,
    o: usize,
    ic: usize,
    h: usize,
    w: usize,
) {
    for kr in 0..3 {
        let (oy0, oy1, iy0) = tap_extent(kr, h);
        if oy0 >= oy1 {
            continue;
        }
        let rows = oy1 - oy0;
        for kc in 0..3 {
            let (ox0, ox1, ix0) = tap_extent(kc, w);
            if ox0 >= ox1 {
                continue;
            }
            let cols = ox1 - ox0;
            let k = params.kernels[[o, ic, kr, kc]];
            out_plane
                .slice_mut(s![oy0..oy1, ox0..ox1])
                .scaled_add(k, &in_plane.slice(s![iy0..iy0 + rows, ix0..ix0 + cols]));
        }
    }
}

/// Exact gradients of [`conv2d_forward`].
///
/// Kernel and bias gradients parallelize over output channels, the input
/// gradient over batch elements; every sum runs in a fixed order.
pub fn conv2d_backward(
    input: &Tensor4,
    params: &ConvParams,
    grad_out: &Tensor4,
) -> Result<(Tensor4, ConvGrads)> {
    check_conv_shapes(input, params)?;
    let (b_n, c_in, h, w) = input.dim();
    let oc = params.out_channels();
    if grad_out.dim() != (b_n, oc, h, w) {
        return Err(Error::Shape(format!(
            "grad_out dims {:?} do not match output dims {:?}",
            grad_out.dim(),
            (b_n, oc, h, w)
        )));
    }

    let mut grad_kernels = Array4::<f64>::zeros((oc, c_in, 3, 3));
    grad_kernels
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(o, mut gk_o)| {
            for b in 0..b_n {
                let go = grad_out.slice(s![b, o, .., ..]);
                for ic in 0..c_in {
                    let x = input.slice(s![b, ic, .., ..]);
                    for kr in 0..3 {
                        let (oy0, oy1, iy0) = tap_extent(kr, h);
                        if oy0 >= oy1 {
                            continue;
                        }
                        let rows = oy1 - oy0;
                        for kc in 0..3 {
                            let (ox0, ox1, ix0) = tap_extent(kc, w);
                            if ox0 >= ox1 {
                                continue;
                            }
                            let cols = ox1 - ox0;
                            let mut acc = 0.0;
                            Zip::from(&go.slice(s![oy0..oy1, ox0..ox1]))
                                .and(&x.slice(s![iy0..iy0 + rows, ix0..ix0 + cols]))
                                .for_each(|&g, &v| acc += g * v);
                            gk_o[[ic, kr, kc]] += acc;
                        }
                    }
                }
            }
        });

    let grad_bias: Vec<f64> = (0..oc)
        .into_par_iter()
        .map(|o| {
            let mut acc = 0.0;
            for b in 0..b_n {
                acc += grad_out.slice(s![b, o, .., ..]).sum();
            }
            acc
        })
        .collect();

    let mut grad_input = Array4::<f64>::zeros((b_n, c_in, h, w));
    grad_input
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(b, mut gi_b)| {
            for o in 0..oc {
                let go = grad_out.slice(s![b, o, .., ..]);
                for (ic, mut gi_plane) in gi_b.outer_iter_mut().enumerate() {
                    for kr in 0..3 {
                        let (oy0, oy1, iy0) = tap_extent(kr, h);
                        if oy0 >= oy1 {
                            continue;
                        }
                        let rows = oy1 - oy0;
                        for kc in 0..3 {
                            let (ox0, ox1, ix0) = tap_extent(kc, w);
                            if ox0 >= ox1 {
                                continue;
                            }
                            let cols = ox1 - ox0;
                            let k = params.kernels[[o, ic, kr, kc]];
                            gi_plane
                                .slice_mut(s![iy0..iy0 + rows, ix0..ix0 + cols])
                                .scaled_add(k, &go.slice(s![oy0..oy1, ox0..ox1]));
                        }
                    }
                }
            }
        });

    Ok((grad_input, ConvGrads { kernels: grad_kernels, bias: Array1::from(grad_bias) }))
}

/// Per-channel scale/shift with batch or running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    /// Fraction of the previous running statistic retained per update.
    pub momentum_bn: f64,
    pub epsilon: f64,
}

impl BatchNormParams {
    pub fn new(channels: usize, momentum_bn: f64, epsilon: f64) -> Result<Self> {
        if !(momentum_bn > 0.0 && momentum_bn < 1.0) {
            return Err(Error::Config(format!("momentum {momentum_bn} must lie in (0, 1)")));
        }
        if !(epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon {epsilon} must be positive")));
        }
        Ok(BatchNormParams {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            momentum_bn,
            epsilon,
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Fold one batch's statistics into the running estimates:
    /// running ← momentum·running + (1 − momentum)·batch.
    pub fn update_running(&mut self, stats: &BnStats) {
        let m = self.momentum_bn;
        Zip::from(&mut self.running_mean)
            .and(&stats.mean)
            .for_each(|r, &b| *r = m * *r + (1.0 - m) * b);
        Zip::from(&mut self.running_var)
            .and(&stats.var_unbiased)
            .for_each(|r, &b| *r = m * *r + (1.0 - m) * b);
    }
}

/// One batch's per-channel statistics, kept for the running update.
#[derive(Debug, Clone, PartialEq)]
pub struct BnStats {
    pub mean: Array1<f64>,
    /// Biased (divide by m) variance, used for normalization.
    pub var_biased: Array1<f64>,
    /// Unbiased (divide by m−1) variance, folded into running_var.
    pub var_unbiased: Array1<f64>,
}

fn check_bn_shapes(input: &Tensor4, params: &BatchNormParams) -> Result<()> {
    if input.dim().1 != params.channels() {
        return Err(Error::Shape(format!(
            "input has {} channels, batch norm expects {}",
            input.dim().1,
            params.channels()
        )));
    }
    Ok(())
}

fn batch_stats(input: &Tensor4) -> BnStats {
    let c_n = input.dim().1;
    let m = (input.dim().0 * input.dim().2 * input.dim().3) as f64;
    let mut mean = Array1::zeros(c_n);
    let mut var_biased = Array1::zeros(c_n);
    for c in 0..c_n {
        let plane = input.index_axis(Axis(1), c);
        let mu = plane.sum() / m;
        let mut ss = 0.0;
        plane.for_each(|&x| {
            let d = x - mu;
            ss += d * d;
        });
        mean[c] = mu;
        var_biased[c] = ss / m;
    }
    let var_unbiased = &var_biased * (m / (m - 1.0));
    BnStats { mean, var_biased, var_unbiased }
}

/// Pure training-mode normalization: batch statistics, no state mutation.
/// The returned stats feed [`BatchNormParams::update_running`].
pub fn batchnorm_train(input: &Tensor4, params: &BatchNormParams) -> Result<(Tensor4, BnStats)> {
    check_bn_shapes(input, params)?;
    if input.dim().0 < 2 {
        return Err(Error::BatchSize(format!(
            "training-mode batch norm needs at least 2 elements, got {}",
            input.dim().0
        )));
    }
    let stats = batch_stats(input);
    let mut out = input.clone();
    for c in 0..params.channels() {
        let inv_std = 1.0 / (stats.var_biased[c] + params.epsilon).sqrt();
        let scale = params.gamma[c] * inv_std;
        let shift = params.beta[c] - scale * stats.mean[c];
        out.index_axis_mut(Axis(1), c).mapv_inplace(|x| scale * x + shift);
    }
    Ok((out, stats))
}

/// Pure inference-mode normalization with running statistics.
pub fn batchnorm_infer(input: &Tensor4, params: &BatchNormParams) -> Result<Tensor4> {
    check_bn_shapes(input, params)?;
    let mut out = input.clone();
    for c in 0..params.channels() {
        let inv_std = 1.0 / (params.running_var[c] + params.epsilon).sqrt();
        let scale = params.gamma[c] * inv_std;
        let shift = params.beta[c] - scale * params.running_mean[c];
        out.index_axis_mut(Axis(1), c).mapv_inplace(|x| scale * x + shift);
    }
    Ok(out)
}

/// Mode-dispatching entry point. Training mode folds the batch statistics
/// into the running estimates; inference mode never mutates.
pub fn batchnorm_forward(
    input: &Tensor4,
    params: &mut BatchNormParams,
    mode: Mode,
) -> Result<Tensor4> {
    match mode {
        Mode::Train => {
            let (out, stats) = batchnorm_train(input, params)?;
            params.update_running(&stats);
            Ok(out)
        }
        Mode::Infer => batchnorm_infer(input, params),
    }
}

/// Exact gradients of training-mode normalization with respect to the
/// input, gamma, and beta.
pub fn batchnorm_backward(
    input: &Tensor4,
    params: &BatchNormParams,
    grad_out: &Tensor4,
) -> Result<(Tensor4, Array1<f64>, Array1<f64>)> {
    check_bn_shapes(input, params)?;
    if grad_out.dim() != input.dim() {
        return Err(Error::Shape(format!(
            "grad_out dims {:?} do not match input dims {:?}",
            grad_out.dim(),
            input.dim()
        )));
    }
    if input.dim().0 < 2 {
        return Err(Error::BatchSize("backward needs the training batch size ≥ 2".into()));
    }
    let stats = batch_stats(input);
    let c_n = params.channels();
    let m = (input.dim().0 * input.dim().2 * input.dim().3) as f64;
    let mut grad_input = Tensor4::zeros(input.raw_dim());
    let mut grad_gamma = Array1::zeros(c_n);
    let mut grad_beta = Array1::zeros(c_n);
    for c in 0..c_n {
        let inv_std = 1.0 / (stats.var_biased[c] + params.epsilon).sqrt();
        let mu = stats.mean[c];
        let x = input.index_axis(Axis(1), c);
        let g = grad_out.index_axis(Axis(1), c);
        let mut sum_g = 0.0;
        let mut sum_gx = 0.0;
        Zip::from(&x).and(&g).for_each(|&xv, &gv| {
            sum_g += gv;
            sum_gx += gv * (xv - mu) * inv_std;
        });
        grad_beta[c] = sum_g;
        grad_gamma[c] = sum_gx;
        // dx = γ/σ̃ · (g − mean(g) − x̂ · mean(g·x̂))
        let scale = params.gamma[c] * inv_std;
        let mean_g = sum_g / m;
        let mean_gx = sum_gx / m;
        let mut gi = grad_input.index_axis_mut(Axis(1), c);
        Zip::from(&mut gi).and(&x).and(&g).for_each(|d, &xv, &gv| {
            let x_hat = (xv - mu) * inv_std;
            *d = scale * (gv - mean_g - x_hat * mean_gx);
        });
    }
    Ok((grad_input, grad_gamma, grad_beta))
}

/// Element-wise max(x, 0).
pub fn relu_forward<D: ndarray::Dimension>(input: &ndarray::Array<f64, D>) -> ndarray::Array<f64, D> {
    input.mapv(|v| v.max(0.0))
}

/// Gradient mask of [`relu_forward`]: passes where the input was positive.
pub fn relu_backward<D: ndarray::Dimension>(
    input: &ndarray::Array<f64, D>,
    grad_out: &ndarray::Array<f64, D>,
) -> ndarray::Array<f64, D> {
    debug_assert_eq!(input.raw_dim(), grad_out.raw_dim());
    let mut out = grad_out.clone();
    Zip::from(&mut out).and(input).for_each(|g, &x| {
        if x <= 0.0 {
            *g = 0.0;
        }
    });
    out
}

fn check_pool_geometry(input: &Tensor4, size: usize, stride: usize) -> Result<(usize, usize)> {
    if size == 0 || size != stride {
        return Err(Error::Shape(format!(
            "pooling is non-overlapping: size {size} must equal stride {stride} and be positive"
        )));
    }
    let (_, _, h, w) = input.dim();
    if h % size != 0 || w % size != 0 {
        return Err(Error::Shape(format!(
            "{h}×{w} input is not divisible by {size}×{size} pooling"
        )));
    }
    Ok((h / size, w / size))
}

/// Non-overlapping average pooling.
pub fn avgpool_forward(input: &Tensor4, size: usize, stride: usize) -> Result<Tensor4> {
    let (ph, pw) = check_pool_geometry(input, size, stride)?;
    let (b_n, c_n, _, _) = input.dim();
    let area = (size * size) as f64;
    let mut out = Array4::<f64>::zeros((b_n, c_n, ph, pw));
    for b in 0..b_n {
        for c in 0..c_n {
            let plane = input.slice(s![b, c, .., ..]);
            for py in 0..ph {
                for px in 0..pw {
                    let block =
                        plane.slice(s![py * size..(py + 1) * size, px * size..(px + 1) * size]);
                    out[[b, c, py, px]] = block.sum() / area;
                }
            }
        }
    }
    Ok(out)
}

/// Gradient of [`avgpool_forward`]: spreads each cotangent evenly over its
/// source block.
pub fn avgpool_backward(input: &Tensor4, size: usize, stride: usize, grad_out: &Tensor4) -> Result<Tensor4> {
    let (ph, pw) = check_pool_geometry(input, size, stride)?;
    let (b_n, c_n, _, _) = input.dim();
    if grad_out.dim() != (b_n, c_n, ph, pw) {
        return Err(Error::Shape(format!(
            "grad_out dims {:?} do not match pooled dims {:?}",
            grad_out.dim(),
            (b_n, c_n, ph, pw)
        )));
    }
    let area = (size * size) as f64;
    let mut grad_input = Tensor4::zeros(input.raw_dim());
    for b in 0..b_n {
        for c in 0..c_n {
            for py in 0..ph {
                for px in 0..pw {
                    let g = grad_out[[b, c, py, px]] / area;
                    grad_input
                        .slice_mut(s![b, c, py * size..(py + 1) * size, px * size..(px + 1) * size])
                        .fill(g);
                }
            }
        }
    }
    Ok(grad_input)
}

/// Fully connected map y = x·Wᵀ + b.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineParams {
    /// (out_features, in_features).
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Gradients of [`AffineParams`], same shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineGrads {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

fn check_affine_shapes(input: &Array2<f64>, params: &AffineParams) -> Result<()> {
    if input.dim().1 != params.weight.dim().1 {
        return Err(Error::Shape(format!(
            "input has {} features, weights expect {}",
            input.dim().1,
            params.weight.dim().1
        )));
    }
    if params.bias.len() != params.weight.dim().0 {
        return Err(Error::Shape(format!(
            "bias has {} entries for {} output features",
            params.bias.len(),
            params.weight.dim().0
        )));
    }
    Ok(())
}

pub fn affine_forward(input: &Array2<f64>, params: &AffineParams) -> Result<Array2<f64>> {
    check_affine_shapes(input, params)?;
    let mut out = input.dot(&params.weight.t());
    out += &params.bias;
    Ok(out)
}

pub fn affine_backward(
    input: &Array2<f64>,
    params: &AffineParams,
    grad_out: &Array2<f64>,
) -> Result<(Array2<f64>, AffineGrads)> {
    check_affine_shapes(input, params)?;
    if grad_out.dim() != (input.dim().0, params.weight.dim().0) {
        return Err(Error::Shape(format!(
            "grad_out dims {:?} do not match output dims {:?}",
            grad_out.dim(),
            (input.dim().0, params.weight.dim().0)
        )));
    }
    let grad_input = grad_out.dot(&params.weight);
    let grad_weight = grad_out.t().dot(input);
    let grad_bias = grad_out.sum_axis(Axis(0));
    Ok((grad_input, AffineGrads { weight: grad_weight, bias: grad_bias }))
}
