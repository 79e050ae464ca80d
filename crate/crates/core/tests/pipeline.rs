//! Whole-pipeline flows exercised through the public API, the way the
//! binary drives them: synthesize, normalize, window, train, checkpoint,
//! reload, and score.

use cellgrid::evaluation::{baseline_persistence, baseline_seasonal, evaluate_model};
use cellgrid::grid::{normalize_with, NormStats};
use cellgrid::ingest::{
    assemble_cube, generate_synthetic, load_cube, parse_cdr_line, save_cube, Hotspot,
    SynthConfig,
};
use cellgrid::nn::{init_model, load_model, save_model, Checkpoint, ModelConfig, PipelineMeta};
use cellgrid::trainer::{train, TrainConfig};
use cellgrid::windowing::{build_samples, lag_set, split_weeks, LagSpec};

fn city(weeks: usize, seed: u64) -> cellgrid::grid::TrafficCube {
    generate_synthetic(&SynthConfig {
        height: 10,
        width: 10,
        weeks,
        seed,
        hotspots: vec![Hotspot::new(3.0, 3.0, 6.0), Hotspot::new(7.0, 6.0, 4.0)],
        noise_std: 0.05,
        ..SynthConfig::default()
    })
    .unwrap()
}

#[test]
fn train_checkpoint_reload_and_score() {
    let dir = tempfile::tempdir().unwrap();
    let cube = city(3, 42);

    // leakage-free preprocessing: scale comes from the training range only
    let spec = LagSpec::new(2, 1, 0);
    let lags = lag_set(&spec).unwrap();
    let max_lag = *lags.last().unwrap();
    let (train_range, test_range) = split_weeks(&cube, 3, 2).unwrap();
    let stats = NormStats::from_slots(&cube, train_range.clone()).unwrap();
    let normalized = normalize_with(&cube, &stats).unwrap();
    let samples = build_samples(&normalized, &spec, max_lag..train_range.end).unwrap();

    let config = ModelConfig {
        num_layers: 2,
        growth: 4,
        input_channels: lags.len(),
        height: 10,
        width: 10,
        pool_size: 5,
        pool_stride: 5,
        momentum_bn: 0.9,
        epsilon: 1e-5,
    };
    let mut model = init_model(&config, 7).unwrap();
    let train_config = TrainConfig {
        epochs: 8,
        batch_size: 16,
        ..TrainConfig::desk(7)
    };
    let history = train(&mut model, &samples, &train_config).unwrap();
    assert_eq!(history.records.len(), 8);
    assert!(
        history.records[7].train_loss < history.records[0].train_loss,
        "loss should fall: {} -> {}",
        history.records[0].train_loss,
        history.records[7].train_loss
    );

    // round-trip the checkpoint and verify the reloaded model scores the same
    let path = dir.path().join("model.cgm");
    let checkpoint = Checkpoint {
        model,
        lag_spec: spec,
        meta: Some(PipelineMeta { stats, total_weeks: 3, train_weeks: 2 }),
    };
    save_model(&checkpoint, &path).unwrap();
    let reloaded = load_model(&path).unwrap();
    assert_eq!(reloaded.lag_spec, spec);
    let meta = reloaded.meta.unwrap();
    assert_eq!((meta.total_weeks, meta.train_weeks), (3, 2));

    let direct = evaluate_model(
        &checkpoint.model,
        &normalized,
        &meta.stats,
        &spec,
        test_range.clone(),
    )
    .unwrap();
    let from_disk =
        evaluate_model(&reloaded.model, &normalized, &meta.stats, &spec, test_range.clone())
            .unwrap();
    assert_eq!(direct.per_slot_rmse, from_disk.per_slot_rmse, "reload must not change scores");

    // a briefly trained model should at least see finite, positive error
    assert!(direct.average_rmse.is_finite() && direct.average_rmse > 0.0);

    // and the baselines bracket sanity: seasonal-168 beats persistence on
    // strongly weekly-periodic traffic
    let persistence = baseline_persistence(&cube, test_range.clone()).unwrap();
    let seasonal = baseline_seasonal(&cube, 168, test_range).unwrap();
    assert!(
        seasonal.average_rmse < persistence.average_rmse,
        "weekly repeat {} should beat last-hour repeat {}",
        seasonal.average_rmse,
        persistence.average_rmse
    );
}

#[test]
fn ingested_records_flow_to_saved_cube() {
    let dir = tempfile::tempdir().unwrap();

    // four ten-minute records over two slots on a 2x3 grid
    let lines = [
        "1\t1383523200000\t39\t0.5\t0.25\t\t\t2.0",
        "5\t1383523200000\t39\t\t\t1.0\t0.5\t4.0",
        "1\t1383523800000\t39\t1.5\t\t\t\t1.0",
        "6\t1383523800000\t39\t\t\t\t\t0.25",
    ];
    let records: Vec<_> = lines
        .iter()
        .enumerate()
        .map(|(i, l)| parse_cdr_line(l, i + 1).unwrap())
        .collect();

    let cube = assemble_cube(&records, 2, 3, cellgrid::grid::ServiceKind::Internet, 600).unwrap();
    assert_eq!(cube.len(), 2);
    assert_eq!(cube.data()[[0, 0, 0]], 2.0);
    assert_eq!(cube.data()[[0, 1, 1]], 4.0, "square 5 maps to row 1, col 1");
    assert_eq!(cube.data()[[1, 0, 0]], 1.0);
    assert_eq!(cube.data()[[1, 1, 2]], 0.25);

    let path = dir.path().join("city.cgf");
    save_cube(&cube, &path).unwrap();
    let reloaded = load_cube(&path).unwrap();
    assert_eq!(&reloaded, &cube, "storage round trip is exact");
}

#[test]
fn windowed_samples_align_with_source_frames() {
    let cube = city(2, 5);
    let (normalized, _) = cellgrid::grid::normalize(&cube).unwrap();
    let spec = LagSpec::new(2, 1, 0);
    let lags = lag_set(&spec).unwrap();
    assert_eq!(lags, vec![1, 2, 24, 25]);

    let samples = build_samples(&normalized, &spec, 30..40).unwrap();
    assert_eq!(samples.len(), 10);
    assert_eq!(samples.inputs.dim(), (10, 4, 10, 10));

    // channel k of sample t must be the frame at t - lags[k]
    for (k, lag) in lags.iter().enumerate() {
        for (s, &t) in samples.target_slots.iter().enumerate() {
            let channel = samples.inputs.index_axis(ndarray::Axis(0), s);
            let channel = channel.index_axis(ndarray::Axis(0), k);
            let source = normalized.data().index_axis(ndarray::Axis(0), t - lag);
            assert_eq!(channel, source, "sample {s}, lag {lag}");
        }
    }
}
