//! Multi-scale lag sets and supervised sample construction.
//!
//! Forecasting one frame from its history uses three lag families measured
//! in hours: the immediately preceding h frames, the same hours on the d
//! previous days, and the same hours around the same weekday on the w
//! previous weeks. Samples stack the lagged frames as channels of one
//! image-like input; the target is the frame itself.

use ndarray::{Array3, Array4, Axis};
use ndarray::parallel::prelude::*;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::grid::TrafficCube;

/// Lag-family sizes: `h` recent hours, `d` previous days, `w` previous
/// weeks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LagSpec {
    pub h: usize,
    pub d: usize,
    pub w: usize,
}

impl LagSpec {
    pub fn new(h: usize, d: usize, w: usize) -> Self {
        LagSpec { h, d, w }
    }

    /// Number of lags the spec generates when the families are disjoint.
    pub fn channel_count(&self) -> usize {
        self.h * (self.d + 1) * (self.w + 1)
    }
}

/// Supervised samples cut from one cube.
///
/// `inputs` has shape (n, N, H, W) with channels ordered by ascending lag;
/// channel c of sample i is the cube frame at `target_slots[i] − lags[c]`.
/// `targets` has shape (n, H, W).
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub inputs: Array4<f64>,
    pub targets: Array3<f64>,
    pub lag_spec: LagSpec,
    /// Ascending lag per input channel.
    pub lags: Vec<usize>,
    /// Absolute slot index of each target frame.
    pub target_slots: Vec<usize>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.target_slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target_slots.is_empty()
    }
}

/// Derive the sorted lag set of a spec.
///
/// Families: recent {i : i = 1..h}, daily {24j + i : j = 1..d, i = 0..h−1},
/// weekly {168k − 24j + i : k = 1..w, j = 0..d, i = 0..h−1}. Specs whose
/// families overlap or reach lag ≤ 0 are rejected outright: a silent
/// dedup would shrink the channel count and corrupt comparisons across
/// specs, and lag 0 would leak the target itself.
pub fn lag_set(spec: &LagSpec) -> Result<Vec<usize>> {
    if spec.h == 0 {
        return Err(Error::DegenerateSpec("h must be at least 1".into()));
    }
    let mut lags: Vec<usize> = Vec::with_capacity(spec.channel_count());
    for i in 1..=spec.h {
        lags.push(i);
    }
    for j in 1..=spec.d {
        for i in 0..spec.h {
            lags.push(24 * j + i);
        }
    }
    for k in 1..=spec.w {
        for j in 0..=spec.d {
            for i in 0..spec.h {
                let lag = 168 * (k as i64) - 24 * (j as i64) + i as i64;
                if lag <= 0 {
                    return Err(Error::DegenerateSpec(format!(
                        "weekly lag 168·{k} − 24·{j} + {i} = {lag} is not positive"
                    )));
                }
                lags.push(lag as usize);
            }
        }
    }
    lags.sort_unstable();
    if let Some(dup) = lags.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::DegenerateSpec(format!(
            "lag {} is generated by two families; spec {spec:?} is ambiguous",
            dup[0]
        )));
    }
    Ok(lags)
}

/// Build one sample per slot of `slot_range` (half-open).
///
/// Requires a normalized hourly cube with enough history before the first
/// target slot to reach the largest lag.
pub fn build_samples(
    cube: &TrafficCube,
    spec: &LagSpec,
    slot_range: Range<usize>,
) -> Result<SampleSet> {
    if !cube.is_normalized() {
        return Err(Error::State("samples must be cut from a normalized cube".into()));
    }
    if cube.slot_duration() != 3600 {
        return Err(Error::State(format!(
            "lags are hourly; cube slots are {} s",
            cube.slot_duration()
        )));
    }
    let lags = lag_set(spec)?;
    let max_lag = *lags.last().expect("h ≥ 1 guarantees a lag");
    if slot_range.start >= slot_range.end {
        return Err(Error::Range(format!("empty slot range {slot_range:?}")));
    }
    if slot_range.end > cube.len() {
        return Err(Error::Range(format!(
            "slot range {slot_range:?} exceeds cube length {}",
            cube.len()
        )));
    }
    if slot_range.start < max_lag {
        return Err(Error::HistoryUnderflow(format!(
            "first target slot {} needs {max_lag} slots of history",
            slot_range.start
        )));
    }
    let target_slots: Vec<usize> = slot_range.collect();
    let n = target_slots.len();
    let (height, width) = (cube.height(), cube.width());
    let mut inputs = Array4::<f64>::zeros((n, lags.len(), height, width));
    let mut targets = Array3::<f64>::zeros((n, height, width));
    inputs
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(targets.axis_iter_mut(Axis(0)).into_par_iter())
        .zip(target_slots.par_iter())
        .for_each(|((mut input, mut target), &slot)| {
            for (c, &lag) in lags.iter().enumerate() {
                input.index_axis_mut(Axis(0), c).assign(&cube.frame(slot - lag));
            }
            target.assign(&cube.frame(slot));
        });
    Ok(SampleSet { inputs, targets, lag_spec: *spec, lags, target_slots })
}

/// Split the first `total_weeks` of an hourly cube into a leading training
/// range and a trailing test range, both half-open and week-aligned.
pub fn split_weeks(
    cube: &TrafficCube,
    total_weeks: usize,
    train_weeks: usize,
) -> Result<(Range<usize>, Range<usize>)> {
    if cube.slot_duration() != 3600 {
        return Err(Error::State(format!(
            "weekly split needs an hourly cube; slots are {} s",
            cube.slot_duration()
        )));
    }
    if train_weeks == 0 || train_weeks >= total_weeks {
        return Err(Error::Range(format!(
            "need 1 ≤ train weeks < total weeks, got {train_weeks}/{total_weeks}"
        )));
    }
    let needed = total_weeks * 168;
    if cube.len() < needed {
        return Err(Error::Range(format!(
            "cube has {} slots, {total_weeks} weeks need {needed}",
            cube.len()
        )));
    }
    let boundary = train_weeks * 168;
    Ok((0..boundary, boundary..needed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{normalize, ServiceKind};
    use ndarray::Array3 as A3;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    fn normalized_cube(seed: u64, t: usize, h: usize, w: usize) -> TrafficCube {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = A3::from_shape_fn((t, h, w), |_| rng.gen_range(0.0..100.0));
        let cube = TrafficCube::new(data, 0, 3600, ServiceKind::Internet, false).unwrap();
        normalize(&cube).unwrap().0
    }

    /// Set-based enumeration of the three families, independent of lag_set.
    fn family_oracle(spec: &LagSpec) -> BTreeSet<i64> {
        let mut set = BTreeSet::new();
        for i in 1..=spec.h as i64 {
            set.insert(i);
        }
        for j in 1..=spec.d as i64 {
            for i in 0..spec.h as i64 {
                set.insert(24 * j + i);
            }
        }
        for k in 1..=spec.w as i64 {
            for j in 0..=spec.d as i64 {
                for i in 0..spec.h as i64 {
                    set.insert(168 * k - 24 * j + i);
                }
            }
        }
        set
    }

    #[test]
    fn reference_spec_produces_the_twelve_known_lags() {
        let lags = lag_set(&LagSpec::new(2, 2, 1)).unwrap();
        assert_eq!(lags, vec![1, 2, 24, 25, 48, 49, 120, 121, 144, 145, 168, 169]);
    }

    #[test]
    fn minimal_spec_is_single_lag() {
        assert_eq!(lag_set(&LagSpec::new(1, 0, 0)).unwrap(), vec![1]);
    }

    #[test]
    fn count_formula_holds_for_best_reported_spec() {
        let spec = LagSpec::new(3, 3, 1);
        let lags = lag_set(&spec).unwrap();
        assert_eq!(lags.len(), 24);
        assert_eq!(lags.len(), spec.channel_count());
        let oracle: Vec<usize> = family_oracle(&spec).into_iter().map(|v| v as usize).collect();
        assert_eq!(lags, oracle);
    }

    #[test]
    fn colliding_families_are_rejected() {
        // 168 − 24·3 = 96 = 24·4: weekly and daily families meet
        let err = lag_set(&LagSpec::new(1, 4, 1)).unwrap_err();
        assert!(matches!(err, Error::DegenerateSpec(_)), "{err:?}");
        assert!(lag_set(&LagSpec::new(1, 5, 1)).is_err());
    }

    #[test]
    fn non_positive_lags_are_rejected_with_coordinates() {
        // 168 − 24·7 + 0 = 0 leaks the target
        let err = lag_set(&LagSpec::new(1, 7, 1)).unwrap_err();
        match err {
            Error::DegenerateSpec(msg) => {
                assert!(msg.contains("168·1 − 24·7 + 0"), "{msg}");
            }
            other => panic!("expected degenerate spec, got {other:?}"),
        }
        assert!(lag_set(&LagSpec::new(1, 0, 0)).is_ok());
        assert!(lag_set(&LagSpec::new(0, 0, 0)).is_err());
    }

    proptest! {
        #[test]
        fn lag_sets_are_sorted_positive_and_counted(
            h in 1usize..6, d in 0usize..4, w in 0usize..3
        ) {
            let spec = LagSpec::new(h, d, w);
            let lags = lag_set(&spec).unwrap();
            prop_assert_eq!(lags.len(), spec.channel_count());
            prop_assert!(lags.windows(2).all(|p| p[0] < p[1]));
            prop_assert!(lags[0] >= 1);
            if w == 0 && d <= 6 {
                prop_assert!(lags.iter().all(|&l| l < 168));
            }
            let oracle: Vec<usize> =
                family_oracle(&spec).into_iter().map(|v| v as usize).collect();
            prop_assert_eq!(lags, oracle);
        }
    }

    #[test]
    fn single_lag_samples_are_previous_frames() {
        let cube = normalized_cube(1, 30, 3, 3);
        let set = build_samples(&cube, &LagSpec::new(1, 0, 0), 1..30).unwrap();
        assert_eq!(set.len(), 29);
        for (i, &slot) in set.target_slots.iter().enumerate() {
            assert_eq!(set.inputs.index_axis(Axis(0), i).index_axis(Axis(0), 0), cube.frame(slot - 1));
            assert_eq!(set.targets.index_axis(Axis(0), i), cube.frame(slot));
        }
    }

    #[test]
    fn twelve_channel_sample_reads_exact_frame_indices() {
        let cube = normalized_cube(2, 176, 4, 4);
        let set = build_samples(&cube, &LagSpec::new(2, 2, 1), 169..170).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.lags, vec![1, 2, 24, 25, 48, 49, 120, 121, 144, 145, 168, 169]);
        let input = set.inputs.index_axis(Axis(0), 0);
        for (c, &lag) in set.lags.iter().enumerate() {
            let frame_index = 169 - lag;
            assert_eq!(
                input.index_axis(Axis(0), c),
                cube.frame(frame_index),
                "channel {c} should be frame {frame_index}"
            );
        }
        assert_eq!(set.targets.index_axis(Axis(0), 0), cube.frame(169));
    }

    #[test]
    fn missing_history_is_an_underflow_error() {
        let cube = normalized_cube(3, 176, 3, 3);
        let err = build_samples(&cube, &LagSpec::new(2, 2, 1), 100..150).unwrap_err();
        assert!(matches!(err, Error::HistoryUnderflow(_)), "{err:?}");
        assert!(build_samples(&cube, &LagSpec::new(2, 2, 1), 169..200).is_err());
        assert!(build_samples(&cube, &LagSpec::new(2, 2, 1), 170..170).is_err());
    }

    #[test]
    fn samples_require_normalized_hourly_cube() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data = A3::from_shape_fn((30, 2, 2), |_| rng.gen_range(0.0..1.0));
        let raw = TrafficCube::new(data.clone(), 0, 3600, ServiceKind::Internet, false).unwrap();
        assert!(matches!(
            build_samples(&raw, &LagSpec::new(1, 0, 0), 1..5),
            Err(Error::State(_))
        ));
        let ten_minute = TrafficCube::new(data, 0, 600, ServiceKind::Internet, true).unwrap();
        assert!(matches!(
            build_samples(&ten_minute, &LagSpec::new(1, 0, 0), 1..5),
            Err(Error::State(_))
        ));
    }

    proptest! {
        #[test]
        fn no_channel_reads_at_or_after_its_target(
            h in 1usize..4, d in 0usize..3, w in 0usize..2, seed in 0u64..32
        ) {
            let spec = LagSpec::new(h, d, w);
            let lags = lag_set(&spec).unwrap();
            let max_lag = *lags.last().unwrap();
            let cube = normalized_cube(seed, max_lag + 8, 2, 2);
            let set = build_samples(&cube, &spec, max_lag..max_lag + 8).unwrap();
            for (i, &slot) in set.target_slots.iter().enumerate() {
                for (c, &lag) in set.lags.iter().enumerate() {
                    prop_assert!(slot - lag < slot, "causality");
                    let channel = set.inputs.index_axis(Axis(0), i);
                    prop_assert_eq!(
                        channel.index_axis(Axis(0), c),
                        cube.frame(slot - lag)
                    );
                }
            }
        }
    }

    #[test]
    fn weekly_split_matches_flagship_configuration() {
        let cube = normalized_cube(5, 7 * 168, 2, 2);
        let (train, test) = split_weeks(&cube, 7, 6).unwrap();
        assert_eq!(train, 0..1008);
        assert_eq!(test, 1008..1176);
    }

    #[test]
    fn weekly_split_minimal_and_errors() {
        let cube = normalized_cube(6, 2 * 168, 2, 2);
        let (train, test) = split_weeks(&cube, 2, 1).unwrap();
        assert_eq!(train, 0..168);
        assert_eq!(test, 168..336);
        assert!(matches!(split_weeks(&cube, 3, 2), Err(Error::Range(_))));
        assert!(matches!(split_weeks(&cube, 2, 2), Err(Error::Range(_))));
        assert!(matches!(split_weeks(&cube, 2, 0), Err(Error::Range(_))));
    }

    #[test]
    fn test_samples_keep_targets_inside_test_range() {
        let cube = normalized_cube(7, 2 * 168, 2, 2);
        let (train, test) = split_weeks(&cube, 2, 1).unwrap();
        let spec = LagSpec::new(2, 2, 0);
        let set = build_samples(&cube, &spec, test.clone()).unwrap();
        for &slot in &set.target_slots {
            assert!(test.contains(&slot));
            assert!(!train.contains(&slot));
        }
        // history legitimately reaches back into the training range
        let max_lag = *set.lags.last().unwrap();
        assert!(set.target_slots[0] - max_lag < train.end);
    }
}
