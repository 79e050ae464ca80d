//! RMSE scoring, reference baselines, the (h, d, w) grid search, hotspot
//! trajectory comparison, and intensity-map export.
//!
//! All RMSE numbers are in original traffic units: predictions and truth
//! are unscaled back before scoring. Every report flows through one
//! scoring path, so a predictor stub that emits the lag-1 frame produces
//! bit-identically the persistence baseline's report.

use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;
use std::time::Instant;

use ndarray::{Array2, Array3, ArrayView2, Axis, Zip};
use rayon::prelude::*;

use crate::correlation::hotspot;
use crate::error::{Error, Result};
use crate::grid::{normalize_with, NormStats, ServiceKind, TrafficCube, TrafficFrame};
use crate::nn::{init_model, model_forward, Mode, Model, ModelConfig, Tensor4};
use crate::trainer::{train, TrainConfig};
use crate::windowing::{build_samples, lag_set, split_weeks, LagSpec};

/// Per-slot and averaged RMSE for one predictor on one service.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// (absolute slot, RMSE at that slot), in slot order.
    pub per_slot_rmse: Vec<(usize, f64)>,
    /// Arithmetic mean of the per-slot values.
    pub average_rmse: f64,
    pub service: ServiceKind,
    pub model_id: String,
}

impl EvalReport {
    fn from_pairs(pairs: Vec<(usize, f64)>, service: ServiceKind, model_id: &str) -> Self {
        debug_assert!(!pairs.is_empty());
        let average_rmse = pairs.iter().map(|(_, v)| v).sum::<f64>() / pairs.len() as f64;
        EvalReport { per_slot_rmse: pairs, average_rmse, service, model_id: model_id.to_string() }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,rmse\n");
        for (t, rmse) in &self.per_slot_rmse {
            writeln!(out, "{t},{rmse}").expect("writing to a String cannot fail");
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

fn rmse_arrays(pred: &ArrayView2<f64>, truth: &ArrayView2<f64>) -> f64 {
    let n = pred.len() as f64;
    let sum = Zip::from(pred).and(truth).fold(0.0, |acc, &p, &t| acc + (p - t) * (p - t));
    (sum / n).sqrt()
}

/// Root mean square error over all cells of one frame pair, both in
/// original units.
pub fn rmse_slot(pred: &TrafficFrame, truth: &TrafficFrame) -> Result<f64> {
    if pred.values.dim() != truth.values.dim() {
        return Err(Error::Shape(format!(
            "prediction frame is {:?}, truth frame is {:?}",
            pred.values.dim(),
            truth.values.dim()
        )));
    }
    Ok(rmse_arrays(&pred.values.view(), &truth.values.view()))
}

fn check_eval_range(range: &Range<usize>, len: usize, floor: usize) -> Result<()> {
    if range.is_empty() {
        return Err(Error::Range(format!("evaluation range {range:?} is empty")));
    }
    if range.end > len {
        return Err(Error::Range(format!(
            "evaluation range {range:?} exceeds the cube length {len}"
        )));
    }
    if range.start < floor {
        return Err(Error::Range(format!(
            "evaluation range {range:?} starts before slot {floor}, the first predictable slot"
        )));
    }
    Ok(())
}

/// Score normalized predictions against a normalized cube: both are
/// unscaled back to original units and each target slot gets one RMSE.
///
/// `predictions` holds one frame per entry of `target_slots`. This is the
/// single scoring path every evaluation in this module goes through.
pub fn evaluate_predictions(
    predictions: &Array3<f64>,
    target_slots: &[usize],
    cube: &TrafficCube,
    stats: &NormStats,
    model_id: &str,
) -> Result<EvalReport> {
    if !cube.is_normalized() {
        return Err(Error::State("scoring expects a normalized cube with its stats".into()));
    }
    if predictions.dim().0 != target_slots.len() {
        return Err(Error::Shape(format!(
            "{} prediction frames for {} target slots",
            predictions.dim().0,
            target_slots.len()
        )));
    }
    if (predictions.dim().1, predictions.dim().2) != (cube.height(), cube.width()) {
        return Err(Error::Shape(format!(
            "prediction frames are {}×{}, cube is {}×{}",
            predictions.dim().1,
            predictions.dim().2,
            cube.height(),
            cube.width()
        )));
    }
    if target_slots.is_empty() {
        return Err(Error::Range("no target slots to score".into()));
    }
    if let Some(&bad) = target_slots.iter().find(|&&t| t >= cube.len()) {
        return Err(Error::Range(format!(
            "target slot {bad} exceeds the cube length {}",
            cube.len()
        )));
    }

    let pairs: Vec<(usize, f64)> = target_slots
        .par_iter()
        .enumerate()
        .map(|(k, &t)| {
            let pred = predictions.index_axis(Axis(0), k).mapv(|z| stats.invert(z));
            let truth = cube.frame(t).mapv(|z| stats.invert(z));
            (t, rmse_arrays(&pred.view(), &truth.view()))
        })
        .collect();
    Ok(EvalReport::from_pairs(pairs, cube.service(), model_id))
}

/// Evaluate a trained model over a test range of a normalized cube.
///
/// Input stacks are built exactly as in training, predictions run in
/// inference mode, and scoring is in original units.
pub fn evaluate_model(
    model: &Model,
    cube: &TrafficCube,
    stats: &NormStats,
    spec: &LagSpec,
    test_range: Range<usize>,
) -> Result<EvalReport> {
    let lags = lag_set(spec)?;
    if lags.len() != model.config.input_channels {
        return Err(Error::Config(format!(
            "lag spec {spec:?} yields {} channels, model expects {}",
            lags.len(),
            model.config.input_channels
        )));
    }
    if (cube.height(), cube.width()) != (model.config.height, model.config.width) {
        return Err(Error::Config(format!(
            "cube is {}×{}, model expects {}×{}",
            cube.height(),
            cube.width(),
            model.config.height,
            model.config.width
        )));
    }
    let samples = build_samples(cube, spec, test_range)?;
    let n = samples.len();
    let (height, width) = (cube.height(), cube.width());
    let mut predictions = Array3::zeros((n, height, width));
    // bounded batches keep memory flat on long test ranges
    for start in (0..n).step_by(32) {
        let end = (start + 32).min(n);
        let inputs: Tensor4 = samples.inputs.slice(ndarray::s![start..end, .., .., ..]).to_owned();
        let out = model_forward(model, &inputs, Mode::Infer)?;
        predictions.slice_mut(ndarray::s![start..end, .., ..]).assign(&out);
    }
    let model_id = format!(
        "dense-l{}g{}-seed{}",
        model.config.num_layers, model.config.growth, model.rng_seed
    );
    evaluate_predictions(&predictions, &samples.target_slots, cube, stats, &model_id)
}

fn check_baseline_cube(cube: &TrafficCube) -> Result<()> {
    if cube.is_normalized() {
        return Err(Error::State(
            "baselines score original units; denormalize the cube first".into(),
        ));
    }
    Ok(())
}

/// Previous-frame predictor: the forecast for slot t is frame t−1.
pub fn baseline_persistence(cube: &TrafficCube, test_range: Range<usize>) -> Result<EvalReport> {
    check_baseline_cube(cube)?;
    check_eval_range(&test_range, cube.len(), 1)?;
    let pairs: Vec<(usize, f64)> = test_range
        .into_par_iter()
        .map(|t| (t, rmse_arrays(&cube.frame(t - 1), &cube.frame(t))))
        .collect();
    Ok(EvalReport::from_pairs(pairs, cube.service(), "persistence"))
}

/// Seasonal-naive predictor: the forecast for slot t is frame t−period.
/// Period 24 tracks the daily cycle, 168 the weekly one.
pub fn baseline_seasonal(
    cube: &TrafficCube,
    period: usize,
    test_range: Range<usize>,
) -> Result<EvalReport> {
    check_baseline_cube(cube)?;
    if period == 0 {
        return Err(Error::Range("seasonal period must be positive".into()));
    }
    check_eval_range(&test_range, cube.len(), period)?;
    let pairs: Vec<(usize, f64)> = test_range
        .into_par_iter()
        .map(|t| (t, rmse_arrays(&cube.frame(t - period), &cube.frame(t))))
        .collect();
    Ok(EvalReport::from_pairs(pairs, cube.service(), &format!("seasonal-{period}")))
}

/// Template for one grid-search run: everything except the lag spec.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSearchConfig {
    pub num_layers: usize,
    pub growth: usize,
    pub pool_size: usize,
    pub momentum_bn: f64,
    pub epsilon: f64,
    pub train: TrainConfig,
    pub total_weeks: u32,
    pub train_weeks: u32,
    /// Mixed with each spec into that spec's model and shuffle seeds, so
    /// results do not depend on the order specs are listed in.
    pub base_seed: u64,
}

impl GridSearchConfig {
    pub fn desk(total_weeks: u32, train_weeks: u32, base_seed: u64) -> Self {
        GridSearchConfig {
            num_layers: 4,
            growth: 8,
            pool_size: 5,
            momentum_bn: 0.9,
            epsilon: 1e-5,
            train: TrainConfig::desk(0),
            total_weeks,
            train_weeks,
            base_seed,
        }
    }
}

/// One grid-search row. A failed spec keeps its error text and no RMSE.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSearchEntry {
    pub spec: LagSpec,
    pub avg_rmse: Option<f64>,
    pub train_seconds: f64,
    pub failure: Option<String>,
}

/// All grid-search rows in input order plus the index of the best row.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSearchResult {
    pub entries: Vec<GridSearchEntry>,
    /// Lowest average RMSE; ties go to the smaller channel count. None
    /// when every spec failed.
    pub best: Option<usize>,
}

impl GridSearchResult {
    pub fn best_entry(&self) -> Option<&GridSearchEntry> {
        self.best.map(|i| &self.entries[i])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("h,d,w,avg_rmse,train_s\n");
        for e in &self.entries {
            let rmse = e.avg_rmse.map(|v| v.to_string()).unwrap_or_default();
            writeln!(out, "{},{},{},{},{}", e.spec.h, e.spec.d, e.spec.w, rmse, e.train_seconds)
                .expect("writing to a String cannot fail");
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Deterministic per-spec seed, independent of list order.
fn spec_seed(base: u64, spec: &LagSpec) -> u64 {
    let mut x = base ^ 0x9E37_79B9_7F4A_7C15;
    for v in [spec.h as u64, spec.d as u64, spec.w as u64] {
        x ^= v.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(x << 6).wrapping_add(x >> 2);
        x = x.wrapping_mul(0x0000_0100_0000_01B3);
    }
    x
}

fn run_search_spec(
    cube: &TrafficCube,
    spec: &LagSpec,
    config: &GridSearchConfig,
    train_range: &Range<usize>,
    test_range: &Range<usize>,
) -> Result<(f64, f64)> {
    let lags = lag_set(spec)?;
    let max_lag = *lags.last().expect("lag sets are non-empty");
    if max_lag >= train_range.end {
        return Err(Error::HistoryUnderflow(format!(
            "maximum lag {max_lag} leaves no training targets before slot {}",
            train_range.end
        )));
    }
    // leakage-free scaling: statistics come from the training slots only
    let stats = NormStats::from_slots(cube, train_range.clone())?;
    let normalized = normalize_with(cube, &stats)?;
    // targets earlier than the deepest lag have no full history
    let samples = build_samples(&normalized, spec, max_lag.max(train_range.start)..train_range.end)?;
    let model_config = ModelConfig {
        num_layers: config.num_layers,
        growth: config.growth,
        input_channels: lags.len(),
        height: cube.height(),
        width: cube.width(),
        pool_size: config.pool_size,
        pool_stride: config.pool_size,
        momentum_bn: config.momentum_bn,
        epsilon: config.epsilon,
    };
    let seed = spec_seed(config.base_seed, spec);
    let mut model = init_model(&model_config, seed)?;
    let train_config = TrainConfig { shuffle_seed: seed.rotate_left(17), ..config.train };
    let started = Instant::now();
    train(&mut model, &samples, &train_config)?;
    let seconds = started.elapsed().as_secs_f64();
    let report = evaluate_model(&model, &normalized, &stats, spec, test_range.clone())?;
    Ok((report.average_rmse, seconds))
}

/// Train and score one fresh model per lag spec on a weekly train/test
/// split of an original-units cube. Invalid specs become failed rows;
/// the search continues.
pub fn grid_search(
    cube: &TrafficCube,
    specs: &[LagSpec],
    config: &GridSearchConfig,
) -> Result<GridSearchResult> {
    check_baseline_cube(cube)?;
    if specs.is_empty() {
        return Err(Error::Input("grid search needs at least one lag spec".into()));
    }
    let (train_range, test_range) =
        split_weeks(cube, config.total_weeks as usize, config.train_weeks as usize)?;
    let mut entries = Vec::with_capacity(specs.len());
    for spec in specs {
        match run_search_spec(cube, spec, config, &train_range, &test_range) {
            Ok((avg_rmse, train_seconds)) => entries.push(GridSearchEntry {
                spec: *spec,
                avg_rmse: Some(avg_rmse),
                train_seconds,
                failure: None,
            }),
            Err(e) => entries.push(GridSearchEntry {
                spec: *spec,
                avg_rmse: None,
                train_seconds: 0.0,
                failure: Some(e.to_string()),
            }),
        }
    }
    let mut best: Option<usize> = None;
    for (i, entry) in entries.iter().enumerate() {
        let Some(rmse) = entry.avg_rmse else { continue };
        let better = match best {
            None => true,
            Some(j) => {
                let current = entries[j].avg_rmse.expect("best rows always score");
                rmse < current
                    || (rmse == current
                        && entry.spec.channel_count() < entries[j].spec.channel_count())
            }
        };
        if better {
            best = Some(i);
        }
    }
    Ok(GridSearchResult { entries, best })
}

/// One slot of a hotspot-track comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct HotspotComparison {
    pub slot: usize,
    pub predicted: (usize, usize),
    pub actual: (usize, usize),
    /// Chebyshev (king-move) grid distance between the two cells.
    pub distance: usize,
    /// Absolute difference between the two peak values.
    pub value_error: f64,
}

/// Per-slot comparisons plus the fraction of exact hits.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackComparison {
    pub entries: Vec<HotspotComparison>,
    /// Fraction of slots where predicted and actual hotspot coincide.
    pub hit_rate: f64,
}

fn chebyshev(a: (usize, usize), b: (usize, usize)) -> usize {
    let dr = a.0.abs_diff(b.0);
    let dc = a.1.abs_diff(b.1);
    dr.max(dc)
}

/// Compare the busiest-cell trajectory of a predicted cube against the
/// observed one over a slot range.
pub fn compare_hotspot_tracks(
    predicted: &TrafficCube,
    truth: &TrafficCube,
    range: Range<usize>,
) -> Result<TrackComparison> {
    if (predicted.height(), predicted.width()) != (truth.height(), truth.width()) {
        return Err(Error::Shape(format!(
            "predicted grid is {}×{}, truth is {}×{}",
            predicted.height(),
            predicted.width(),
            truth.height(),
            truth.width()
        )));
    }
    check_eval_range(&range, predicted.len().min(truth.len()), 0)?;
    let mut entries = Vec::with_capacity(range.len());
    let mut hits = 0usize;
    for t in range {
        let p_frame = predicted.frame_owned(t);
        let t_frame = truth.frame_owned(t);
        let p_cell = hotspot(&p_frame)?;
        let t_cell = hotspot(&t_frame)?;
        let distance = chebyshev(p_cell, t_cell);
        if distance == 0 {
            hits += 1;
        }
        entries.push(HotspotComparison {
            slot: t,
            predicted: p_cell,
            actual: t_cell,
            distance,
            value_error: (p_frame.values[[p_cell.0, p_cell.1]]
                - t_frame.values[[t_cell.0, t_cell.1]])
                .abs(),
        });
    }
    let hit_rate = hits as f64 / entries.len() as f64;
    Ok(TrackComparison { entries, hit_rate })
}

/// Intensity-map output encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapFormat {
    /// Raw values, one row per line. Values round-trip exactly.
    Csv,
    /// Binary 8-bit PGM ("P5"), min-max scaled per frame; a constant
    /// frame renders mid-gray.
    Pgm,
}

fn frame_to_csv(values: &Array2<f64>) -> String {
    let mut out = String::new();
    for row in values.rows() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

fn frame_to_pgm(values: &Array2<f64>) -> Vec<u8> {
    let (height, width) = values.dim();
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &v in values {
        min = min.min(v);
        max = max.max(v);
    }
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    if max > min {
        let scale = 255.0 / (max - min);
        bytes.extend(values.iter().map(|&v| ((v - min) * scale).round() as u8));
    } else {
        bytes.extend(std::iter::repeat(128u8).take(height * width));
    }
    bytes
}

/// Write one frame as a grayscale intensity map.
pub fn export_intensity_map(frame: &TrafficFrame, path: &Path, format: MapFormat) -> Result<()> {
    if let Some(bad) = frame.values.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("frame contains non-finite value {bad}")));
    }
    match format {
        MapFormat::Csv => std::fs::write(path, frame_to_csv(&frame.values))?,
        MapFormat::Pgm => std::fs::write(path, frame_to_pgm(&frame.values))?,
    }
    Ok(())
}
