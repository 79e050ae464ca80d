//! Batch command-line surface over the cellgrid library.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error,
//! 3 numeric failure (training diverged to NaN or infinity).
//!
//! Every command is deterministic given its seeds. Output files carrying
//! values (cubes, checkpoints, RMSE reports, analysis CSVs, PGM frames)
//! are byte-stable across reruns; only wall-clock columns in training
//! history and grid-search tables vary.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ndarray::Axis;

use cellgrid::correlation::{atvr_profile, correlation_map, hotspot_trajectory};
use cellgrid::error::Error;
use cellgrid::evaluation::{
    baseline_persistence, baseline_seasonal, compare_hotspot_tracks, evaluate_model,
    export_intensity_map, grid_search, GridSearchConfig, MapFormat,
};
use cellgrid::grid::{
    aggregate_hourly, combine_services, normalize_with, NormStats, ServiceKind, TrafficCube,
    TrafficFrame,
};
use cellgrid::ingest::{
    assemble_cube, generate_synthetic, load_cube, parse_cdr_file, save_cube, CdrRecord, Hotspot,
    SynthConfig,
};
use cellgrid::nn::{
    init_model, load_model, model_forward, save_model, Checkpoint, Mode, ModelConfig,
    PipelineMeta,
};
use cellgrid::trainer::{train, TrainConfig};
use cellgrid::windowing::{build_samples, lag_set, split_weeks, LagSpec};

/// Gridded cellular-traffic forecasting: ingest, synthesize, analyze,
/// train, predict, evaluate, and search lag configurations.
#[derive(Parser)]
#[command(name = "cellgrid", version)]
struct Cli {
    /// Worker threads for array math (1 = sequential, 0 = all cores).
    /// Results are identical for any thread count.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse raw call-detail records into a CGF1 traffic cube.
    Ingest(IngestArgs),
    /// Generate a seeded synthetic traffic cube.
    Synth(SynthArgs),
    /// Emit temporal-ratio, spatial-correlation, or hotspot CSVs.
    Analyze(AnalyzeArgs),
    /// Train a forecasting model and write a CGM1 checkpoint.
    Train(TrainArgs),
    /// Forecast a single frame with a trained model.
    Predict(PredictArgs),
    /// Score a trained model on its held-out range.
    Evaluate(EvaluateArgs),
    /// Train and score one model per (h, d, w) lag combination.
    Gridsearch(GridsearchArgs),
}

fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("'{s}' is not HxW, e.g. 20x20"))?;
    let h: usize = h.trim().parse().map_err(|_| format!("grid height '{h}' is not a number"))?;
    let w: usize = w.trim().parse().map_err(|_| format!("grid width '{w}' is not a number"))?;
    if h == 0 || w == 0 {
        return Err("grid dimensions must be positive".into());
    }
    Ok((h, w))
}

fn parse_cell(s: &str) -> Result<(usize, usize), String> {
    let (r, c) = s.split_once(',').ok_or_else(|| format!("'{s}' is not ROW,COL"))?;
    let r = r.trim().parse().map_err(|_| format!("row '{r}' is not a number"))?;
    let c = c.trim().parse().map_err(|_| format!("column '{c}' is not a number"))?;
    Ok((r, c))
}

fn parse_service(s: &str) -> Result<ServiceKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// row,col,peak with an optional fourth field: the phase of the daily
/// cycle in radians.
fn parse_hotspot(s: &str) -> Result<Hotspot, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 && parts.len() != 4 {
        return Err(format!("'{s}' is not ROW,COL,PEAK or ROW,COL,PEAK,PHASE"));
    }
    let mut values = [0.0f64; 4];
    for (v, part) in values.iter_mut().zip(&parts) {
        *v = part
            .trim()
            .parse()
            .map_err(|_| format!("hotspot field '{part}' is not a number"))?;
    }
    Ok(Hotspot { row: values[0], col: values[1], peak: values[2], phase: values[3] })
}

/// "a..b" inclusive on both ends, or a single value "a".
fn parse_inclusive_range(s: &str) -> Result<(usize, usize), String> {
    let (lo, hi) = match s.split_once("..") {
        Some((lo, hi)) => {
            let lo = lo.trim().parse().map_err(|_| format!("range start '{lo}' is not a number"))?;
            let hi = hi.trim().parse().map_err(|_| format!("range end '{hi}' is not a number"))?;
            (lo, hi)
        }
        None => {
            let v = s.trim().parse().map_err(|_| format!("'{s}' is not a number or a..b range"))?;
            (v, v)
        }
    };
    if lo > hi {
        return Err(format!("range {lo}..{hi} is empty"));
    }
    Ok((lo, hi))
}

#[derive(Debug, Clone)]
enum BaselineKind {
    Persistence,
    Seasonal(usize),
}

fn parse_baseline(s: &str) -> Result<BaselineKind, String> {
    if s == "persistence" {
        return Ok(BaselineKind::Persistence);
    }
    if let Some(period) = s.strip_prefix("seasonal:") {
        let period: usize =
            period.parse().map_err(|_| format!("seasonal period '{period}' is not a number"))?;
        if period == 0 {
            return Err("seasonal period must be positive".into());
        }
        return Ok(BaselineKind::Seasonal(period));
    }
    Err(format!("'{s}' is not 'persistence' or 'seasonal:PERIOD'"))
}

#[derive(Args)]
struct IngestArgs {
    /// Tab-separated record files: square_id, timestamp_ms, country_code,
    /// sms_in, sms_out, call_in, call_out, internet.
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    /// One of sms_in, sms_out, call_in, call_out, internet, sms_combined,
    /// call_combined, total.
    #[arg(long, value_parser = parse_service)]
    service: ServiceKind,
    /// Grid dimensions as HxW; square ids are 1-based row-major.
    #[arg(long, value_parser = parse_grid)]
    grid: (usize, usize),
    /// Slot length of the raw records in seconds.
    #[arg(long, default_value_t = 600)]
    slot_duration: u32,
    /// Sum slots up to hourly resolution after assembly.
    #[arg(long)]
    hourly: bool,
    /// Output cube path (CGF1).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// Cube length in weeks of hourly slots (168 each), starting Monday
    /// midnight.
    #[arg(long)]
    weeks: usize,
    #[arg(long, value_parser = parse_grid, default_value = "20x20")]
    grid: (usize, usize),
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Traffic center as ROW,COL,PEAK[,PHASE]; repeatable. Two fixed
    /// centers are used when omitted.
    #[arg(long = "hotspot", value_parser = parse_hotspot)]
    hotspots: Vec<Hotspot>,
    /// City-wide activity floor.
    #[arg(long, default_value_t = 1.0)]
    base_level: f64,
    /// Strength of the daily sinusoid.
    #[arg(long, default_value_t = 0.5)]
    daily_amplitude: f64,
    /// Multiplier on Saturday/Sunday slots; 1 removes the weekly dip.
    #[arg(long, default_value_t = 0.7)]
    weekend_factor: f64,
    /// Gaussian noise level; 0 makes the cube exactly periodic.
    #[arg(long, default_value_t = 0.05)]
    noise_std: f64,
    /// Spatial spread of each hotspot in cells.
    #[arg(long, default_value_t = 2.0)]
    kernel_sigma: f64,
    /// Unix timestamp of slot 0.
    #[arg(long, default_value_t = 1_383_523_200)]
    start_time: i64,
    /// Output cube path (CGF1).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
#[command(group(
    clap::ArgGroup::new("analysis").required(true).multiple(true)
        .args(["atvr", "pearson", "hotspots"])
))]
struct AnalyzeArgs {
    #[arg(long)]
    cube: PathBuf,
    /// Emit the volume-ratio profile over lags 1..=TAU_MAX
    /// (<prefix>atvr.csv).
    #[arg(long, value_name = "TAU_MAX")]
    atvr: Option<usize>,
    /// Emit the correlation map around this cell
    /// (<prefix>correlation.csv).
    #[arg(long, value_parser = parse_cell, value_name = "ROW,COL", requires = "radius")]
    pearson: Option<(usize, usize)>,
    /// Window radius for --pearson; the map spans (2·RADIUS+1)² cells.
    #[arg(long, requires = "pearson")]
    radius: Option<usize>,
    /// Emit the per-slot busiest-cell track (<prefix>hotspots.csv).
    #[arg(long)]
    hotspots: bool,
    /// Output path prefix.
    #[arg(long)]
    out: String,
}

#[derive(Args)]
struct TrainArgs {
    /// Input cube in original units (CGF1, hourly).
    #[arg(long)]
    cube: PathBuf,
    /// Hourly lag depth.
    #[arg(long)]
    h: usize,
    /// Daily lag depth.
    #[arg(long)]
    d: usize,
    /// Weekly lag depth.
    #[arg(long)]
    w: usize,
    /// Total weeks of the cube to use.
    #[arg(long)]
    weeks: u32,
    /// Leading weeks that form the training range; the rest is held out.
    #[arg(long)]
    train_weeks: u32,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 0.10)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    /// Learning-rate multiplier applied every 10 epochs.
    #[arg(long, default_value_t = 0.8)]
    decay: f64,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    /// Dense layers in the network.
    #[arg(long, default_value_t = 4)]
    layers: usize,
    /// Channels each dense layer adds.
    #[arg(long, default_value_t = 8)]
    growth: usize,
    /// Average-pooling window (also the stride).
    #[arg(long, default_value_t = 5)]
    pool: usize,
    /// Seeds both initialization and batch shuffling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output checkpoint path (CGM1).
    #[arg(long)]
    out: PathBuf,
    /// Optional per-epoch loss CSV.
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    /// Cube in original units supplying the lag history.
    #[arg(long)]
    cube: PathBuf,
    /// Trained checkpoint (CGM1).
    #[arg(long)]
    model: PathBuf,
    /// Slot to forecast; inputs come from strictly earlier slots.
    #[arg(long)]
    slot: usize,
    /// Forecast frame as CSV, original units.
    #[arg(long)]
    out: PathBuf,
    /// Optional grayscale rendering of the same frame.
    #[arg(long)]
    pgm: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Cube in original units; the checkpoint's split selects the
    /// held-out range.
    #[arg(long)]
    cube: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Per-slot RMSE report (t,rmse).
    #[arg(long)]
    out: PathBuf,
    /// Also score a reference predictor: persistence or seasonal:PERIOD.
    #[arg(long, value_parser = parse_baseline, requires = "baseline_out")]
    baseline: Option<BaselineKind>,
    /// Per-slot RMSE report of the baseline.
    #[arg(long, requires = "baseline")]
    baseline_out: Option<PathBuf>,
    /// Per-slot hotspot comparison of model vs truth.
    #[arg(long)]
    hotspot_track: Option<PathBuf>,
    /// Prefix for paired <prefix>pred-T.pgm / <prefix>truth-T.pgm frames.
    #[arg(long, requires = "map_slots")]
    maps: Option<String>,
    /// Held-out slots to render, comma separated.
    #[arg(long, value_delimiter = ',', requires = "maps")]
    map_slots: Vec<usize>,
}

#[derive(Args)]
struct GridsearchArgs {
    /// Input cube in original units (CGF1, hourly).
    #[arg(long)]
    cube: PathBuf,
    /// Hourly depths, inclusive (e.g. 2..7 or 3).
    #[arg(long, value_parser = parse_inclusive_range, default_value = "2..7")]
    h_range: (usize, usize),
    /// Daily depths, inclusive.
    #[arg(long, value_parser = parse_inclusive_range, default_value = "2..7")]
    d_range: (usize, usize),
    /// Weekly depths, inclusive.
    #[arg(long, value_parser = parse_inclusive_range, default_value = "0..3")]
    w_range: (usize, usize),
    /// Total weeks of the cube to use.
    #[arg(long)]
    weeks: u32,
    /// Leading weeks that form each run's training range.
    #[arg(long)]
    train_weeks: u32,
    /// Epochs per candidate model.
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    /// Initial learning rate per candidate model.
    #[arg(long, default_value_t = 0.10)]
    lr: f64,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    /// Dense layers per candidate model.
    #[arg(long, default_value_t = 4)]
    layers: usize,
    /// Channels each dense layer adds.
    #[arg(long, default_value_t = 8)]
    growth: usize,
    /// Average-pooling window (also the stride).
    #[arg(long, default_value_t = 5)]
    pool: usize,
    /// Mixed with each (h,d,w) into that run's seeds.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Results table: h,d,w,avg_rmse,train_s,status,best.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version land here too; they are not errors
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::DegenerateSpec(_) => 1,
        Error::NonFinite(_) => 3,
        _ => 2,
    }
}

fn run(cli: Cli) -> cellgrid::Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    match cli.command {
        Command::Ingest(args) => run_ingest(args),
        Command::Synth(args) => run_synth(args),
        Command::Analyze(args) => run_analyze(args),
        Command::Train(args) => run_train(args),
        Command::Predict(args) => run_predict(args),
        Command::Evaluate(args) => run_evaluate(args),
        Command::Gridsearch(args) => run_gridsearch(args),
    }
}

/// Combined services are sums of raw cubes, never raw record fields.
fn assemble_any(
    records: &[CdrRecord],
    height: usize,
    width: usize,
    service: ServiceKind,
    slot_duration: u32,
) -> cellgrid::Result<TrafficCube> {
    let parts: &[ServiceKind] = match service {
        ServiceKind::SmsCombined => &[ServiceKind::SmsIn, ServiceKind::SmsOut],
        ServiceKind::CallCombined => &[ServiceKind::CallIn, ServiceKind::CallOut],
        ServiceKind::Total => &[
            ServiceKind::SmsIn,
            ServiceKind::SmsOut,
            ServiceKind::CallIn,
            ServiceKind::CallOut,
            ServiceKind::Internet,
        ],
        raw => return assemble_cube(records, height, width, raw, slot_duration),
    };
    let mut acc: Option<TrafficCube> = None;
    for part in parts {
        let cube = assemble_cube(records, height, width, *part, slot_duration)?;
        acc = Some(match acc {
            None => cube,
            Some(prev) => combine_services(&prev, &cube)?,
        });
    }
    Ok(acc.expect("every combined service has parts"))
}

fn run_ingest(args: IngestArgs) -> cellgrid::Result<()> {
    let mut records = Vec::new();
    for path in &args.input {
        let batch = parse_cdr_file(path).map_err(|e| match e {
            Error::Parse { line, msg } => {
                Error::Parse { line, msg: format!("{}: {msg}", path.display()) }
            }
            other => other,
        })?;
        records.extend(batch);
    }
    let (height, width) = args.grid;
    let mut cube = assemble_any(&records, height, width, args.service, args.slot_duration)?;
    if args.hourly {
        cube = aggregate_hourly(&cube)?;
    }
    save_cube(&cube, &args.out)?;
    println!(
        "wrote {} slots of {}x{} '{}' traffic to {}",
        cube.len(),
        height,
        width,
        cube.service(),
        args.out.display()
    );
    Ok(())
}

fn run_synth(args: SynthArgs) -> cellgrid::Result<()> {
    let (height, width) = args.grid;
    let hotspots = if args.hotspots.is_empty() {
        vec![
            Hotspot::new(height as f64 / 3.0, width as f64 / 3.0, 8.0),
            Hotspot::new(2.0 * height as f64 / 3.0, 2.0 * width as f64 / 3.0, 5.0),
        ]
    } else {
        args.hotspots
    };
    let cube = generate_synthetic(&SynthConfig {
        height,
        width,
        weeks: args.weeks,
        seed: args.seed,
        hotspots,
        base_level: args.base_level,
        daily_amplitude: args.daily_amplitude,
        weekly_weekend_factor: args.weekend_factor,
        noise_std: args.noise_std,
        kernel_sigma: args.kernel_sigma,
        start_time: args.start_time,
    })?;
    save_cube(&cube, &args.out)?;
    println!("wrote {} hourly slots ({}x{}) to {}", cube.len(), height, width, args.out.display());
    Ok(())
}

fn run_analyze(args: AnalyzeArgs) -> cellgrid::Result<()> {
    let cube = load_cube(&args.cube)?;
    if let Some(tau_max) = args.atvr {
        let profile = atvr_profile(&cube, tau_max)?;
        let mut out = String::from("tau,atvr\n");
        for (tau, value) in profile.taus.iter().zip(&profile.values) {
            writeln!(out, "{tau},{value}").expect("writing to a String cannot fail");
        }
        let path = format!("{}atvr.csv", args.out);
        std::fs::write(&path, out)?;
        println!("wrote {path}");
    }
    if let Some(center) = args.pearson {
        let radius = args.radius.expect("clap enforces --radius with --pearson");
        let map = correlation_map(&cube, center, radius)?;
        let mut out = String::new();
        for row in map.values.rows() {
            let cells: Vec<String> = row
                .iter()
                .map(|v| v.map(|r| r.to_string()).unwrap_or_default())
                .collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        let path = format!("{}correlation.csv", args.out);
        std::fs::write(&path, out)?;
        println!("wrote {path}");
    }
    if args.hotspots {
        let track = hotspot_trajectory(&cube);
        let mut out = String::from("t,row,col,value\n");
        for e in &track.entries {
            writeln!(out, "{},{},{},{}", e.slot, e.cell.0, e.cell.1, e.value)
                .expect("writing to a String cannot fail");
        }
        let path = format!("{}hotspots.csv", args.out);
        std::fs::write(&path, out)?;
        println!("wrote {path}");
    }
    Ok(())
}

fn run_train(args: TrainArgs) -> cellgrid::Result<()> {
    let cube = load_cube(&args.cube)?;
    let spec = LagSpec::new(args.h, args.d, args.w);
    let lags = lag_set(&spec)?;
    let (train_range, _) = split_weeks(&cube, args.weeks as usize, args.train_weeks as usize)?;
    let stats = NormStats::from_slots(&cube, train_range.clone())?;
    let normalized = normalize_with(&cube, &stats)?;
    let max_lag = *lags.last().expect("lag sets are non-empty");
    if max_lag >= train_range.end {
        return Err(Error::HistoryUnderflow(format!(
            "maximum lag {max_lag} leaves no training targets in the first {} slots",
            train_range.end
        )));
    }
    let samples = build_samples(&normalized, &spec, max_lag..train_range.end)?;
    let config = ModelConfig {
        num_layers: args.layers,
        growth: args.growth,
        input_channels: lags.len(),
        height: cube.height(),
        width: cube.width(),
        pool_size: args.pool,
        pool_stride: args.pool,
        momentum_bn: 0.9,
        epsilon: 1e-5,
    };
    let mut model = init_model(&config, args.seed)?;
    let train_config = TrainConfig {
        initial_lr: args.lr,
        momentum: args.momentum,
        batch_size: args.batch,
        epochs: args.epochs,
        lr_decay: args.decay,
        shuffle_seed: args.seed.rotate_left(17),
    };
    let history = train(&mut model, &samples, &train_config)?;
    let checkpoint = Checkpoint {
        model,
        lag_spec: spec,
        meta: Some(PipelineMeta {
            stats,
            total_weeks: args.weeks,
            train_weeks: args.train_weeks,
        }),
    };
    save_model(&checkpoint, &args.out)?;
    if let Some(path) = &args.history {
        history.write_csv(path)?;
    }
    let last = history.records.last().expect("at least one epoch");
    println!(
        "trained {} epochs on {} samples; final loss {}; wrote {}",
        last.epoch,
        samples.len(),
        last.train_loss,
        args.out.display()
    );
    Ok(())
}

fn required_meta(checkpoint: &Checkpoint) -> cellgrid::Result<PipelineMeta> {
    checkpoint.meta.ok_or_else(|| {
        Error::Format(
            "checkpoint carries no normalization statistics; re-train to embed them".into(),
        )
    })
}

fn run_predict(args: PredictArgs) -> cellgrid::Result<()> {
    let cube = load_cube(&args.cube)?;
    let checkpoint = load_model(&args.model)?;
    let meta = required_meta(&checkpoint)?;
    let normalized = normalize_with(&cube, &meta.stats)?;
    let samples = build_samples(&normalized, &checkpoint.lag_spec, args.slot..args.slot + 1)?;
    let prediction = model_forward(&checkpoint.model, &samples.inputs, Mode::Infer)?;
    let frame = TrafficFrame {
        values: prediction.index_axis(Axis(0), 0).mapv(|z| meta.stats.invert(z)),
        slot: args.slot,
    };
    export_intensity_map(&frame, &args.out, MapFormat::Csv)?;
    if let Some(path) = &args.pgm {
        export_intensity_map(&frame, path, MapFormat::Pgm)?;
    }
    println!("forecast for slot {} written to {}", args.slot, args.out.display());
    Ok(())
}

fn run_evaluate(args: EvaluateArgs) -> cellgrid::Result<()> {
    let cube = load_cube(&args.cube)?;
    let checkpoint = load_model(&args.model)?;
    let meta = required_meta(&checkpoint)?;
    let (_, test_range) =
        split_weeks(&cube, meta.total_weeks as usize, meta.train_weeks as usize)?;
    let normalized = normalize_with(&cube, &meta.stats)?;
    let report = evaluate_model(
        &checkpoint.model,
        &normalized,
        &meta.stats,
        &checkpoint.lag_spec,
        test_range.clone(),
    )?;
    report.write_csv(&args.out)?;
    println!(
        "average RMSE {} over held-out slots {}..{}",
        report.average_rmse, test_range.start, test_range.end
    );

    if let Some(kind) = &args.baseline {
        let baseline = match kind {
            BaselineKind::Persistence => baseline_persistence(&cube, test_range.clone())?,
            BaselineKind::Seasonal(period) => {
                baseline_seasonal(&cube, *period, test_range.clone())?
            }
        };
        let path = args.baseline_out.as_ref().expect("clap ties --baseline-out to --baseline");
        baseline.write_csv(path)?;
        println!("{} average RMSE {}", baseline.model_id, baseline.average_rmse);
    }

    if args.hotspot_track.is_some() || args.maps.is_some() {
        let samples = build_samples(&normalized, &checkpoint.lag_spec, test_range.clone())?;
        // truth everywhere except the held-out slots, which hold forecasts
        let mut predicted_data = cube.data().clone();
        let n = samples.len();
        for start in (0..n).step_by(32) {
            let end = (start + 32).min(n);
            let inputs = samples.inputs.slice(ndarray::s![start..end, .., .., ..]).to_owned();
            let out = model_forward(&checkpoint.model, &inputs, Mode::Infer)?;
            for k in start..end {
                let frame = out.index_axis(Axis(0), k - start).mapv(|z| meta.stats.invert(z));
                predicted_data
                    .index_axis_mut(Axis(0), samples.target_slots[k])
                    .assign(&frame);
            }
        }
        let predicted = TrafficCube::new(
            predicted_data,
            cube.start_time(),
            cube.slot_duration(),
            cube.service(),
            false,
        )?;

        if let Some(path) = &args.hotspot_track {
            let track = compare_hotspot_tracks(&predicted, &cube, test_range.clone())?;
            let mut out =
                String::from("t,pred_row,pred_col,true_row,true_col,distance,value_error\n");
            for e in &track.entries {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    e.slot,
                    e.predicted.0,
                    e.predicted.1,
                    e.actual.0,
                    e.actual.1,
                    e.distance,
                    e.value_error
                )
                .expect("writing to a String cannot fail");
            }
            std::fs::write(path, out)?;
            println!("hotspot hit rate {}", track.hit_rate);
        }

        if let Some(prefix) = &args.maps {
            for &slot in &args.map_slots {
                if !test_range.contains(&slot) {
                    return Err(Error::Range(format!(
                        "slot {slot} is outside the held-out range {}..{}",
                        test_range.start, test_range.end
                    )));
                }
                export_intensity_map(
                    &predicted.frame_owned(slot),
                    std::path::Path::new(&format!("{prefix}pred-{slot}.pgm")),
                    MapFormat::Pgm,
                )?;
                export_intensity_map(
                    &cube.frame_owned(slot),
                    std::path::Path::new(&format!("{prefix}truth-{slot}.pgm")),
                    MapFormat::Pgm,
                )?;
            }
        }
    }
    Ok(())
}

fn run_gridsearch(args: GridsearchArgs) -> cellgrid::Result<()> {
    let cube = load_cube(&args.cube)?;
    let mut specs = Vec::new();
    for h in args.h_range.0..=args.h_range.1 {
        for d in args.d_range.0..=args.d_range.1 {
            for w in args.w_range.0..=args.w_range.1 {
                specs.push(LagSpec::new(h, d, w));
            }
        }
    }
    let config = GridSearchConfig {
        num_layers: args.layers,
        growth: args.growth,
        pool_size: args.pool,
        momentum_bn: 0.9,
        epsilon: 1e-5,
        train: TrainConfig {
            initial_lr: args.lr,
            momentum: 0.9,
            batch_size: args.batch,
            epochs: args.epochs,
            lr_decay: 0.8,
            shuffle_seed: 0,
        },
        total_weeks: args.weeks,
        train_weeks: args.train_weeks,
        base_seed: args.seed,
    };
    let result = grid_search(&cube, &specs, &config)?;
    let mut out = String::from("h,d,w,avg_rmse,train_s,status,best\n");
    for (i, e) in result.entries.iter().enumerate() {
        let rmse = e.avg_rmse.map(|v| v.to_string()).unwrap_or_default();
        let status = if e.failure.is_some() { "failed" } else { "ok" };
        let best = usize::from(result.best == Some(i));
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            e.spec.h, e.spec.d, e.spec.w, rmse, e.train_seconds, status, best
        )
        .expect("writing to a String cannot fail");
    }
    std::fs::write(&args.out, out)?;
    match result.best_entry() {
        Some(best) => println!(
            "best (h,d,w) = ({},{},{}) with average RMSE {}",
            best.spec.h,
            best.spec.d,
            best.spec.w,
            best.avg_rmse.expect("best rows always score")
        ),
        None => println!("every spec failed; see {}", args.out.display()),
    }
    Ok(())
}
