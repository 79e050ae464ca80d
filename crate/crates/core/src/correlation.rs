//! Temporal and spatial correlation diagnostics plus hotspot extraction.
//!
//! The temporal statistic is the average traffic volume ratio: the mean of
//! x_t/x_{t−τ} over all slots t ≥ τ and all cells. The spatial statistic is
//! the Pearson coefficient between per-cell time series. Hotspots are
//! per-frame argmax cells.

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{TrafficCube, TrafficFrame};

/// Average traffic volume ratio per lag.
#[derive(Debug, Clone, PartialEq)]
pub struct AtvrProfile {
    /// Lags in slots, 1..=tau_max.
    pub taus: Vec<usize>,
    /// Ratio at each lag. 1 means the cube repeats exactly at that lag.
    pub values: Vec<f64>,
}

/// Pearson coefficients between a center cell and its square neighborhood.
///
/// `values[[i, j]]` belongs to cell
/// `(center.0 − radius + i, center.1 − radius + j)`; `None` marks neighbors
/// whose series is constant, so the coefficient is undefined.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMap {
    pub center: (usize, usize),
    pub radius: usize,
    pub values: Array2<Option<f64>>,
}

/// One hotspot observation: the frame's maximum-activity cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HotspotEntry {
    pub slot: usize,
    pub cell: (usize, usize),
    pub value: f64,
}

/// Per-slot hotspot positions of a cube.
#[derive(Debug, Clone, PartialEq)]
pub struct HotspotTrack {
    pub entries: Vec<HotspotEntry>,
}

/// Average traffic volume ratio of a cube at lag `tau` slots.
///
/// Terms whose denominator x_{t−τ} is zero are excluded from both the sum
/// and the divisor count, which keeps the ratio finite on sparse traffic.
pub fn atvr(cube: &TrafficCube, tau: usize) -> Result<f64> {
    let t_len = cube.len();
    if tau == 0 || tau >= t_len {
        return Err(Error::Range(format!(
            "lag {tau} outside [1, {}) for a cube of length {t_len}",
            t_len
        )));
    }
    let mut sum = 0.0;
    let mut count = 0u64;
    for t in tau..t_len {
        let cur = cube.frame(t);
        let prev = cube.frame(t - tau);
        for (x, x_prev) in cur.iter().zip(prev.iter()) {
            if *x_prev != 0.0 {
                sum += x / x_prev;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::UndefinedRatio(format!(
            "every denominator at lag {tau} is zero"
        )));
    }
    Ok(sum / count as f64)
}

/// Ratio profile over lags 1..=tau_max. Lags are independent, so they are
/// evaluated in parallel; the result order is fixed by the lag order.
pub fn atvr_profile(cube: &TrafficCube, tau_max: usize) -> Result<AtvrProfile> {
    if tau_max == 0 || tau_max >= cube.len() {
        return Err(Error::Range(format!(
            "tau_max {tau_max} outside [1, {}) for a cube of length {}",
            cube.len(),
            cube.len()
        )));
    }
    let taus: Vec<usize> = (1..=tau_max).collect();
    let values = taus
        .par_iter()
        .map(|&tau| atvr(cube, tau))
        .collect::<Result<Vec<f64>>>()?;
    Ok(AtvrProfile { taus, values })
}

fn cell_series(cube: &TrafficCube, cell: (usize, usize)) -> Result<Vec<f64>> {
    if cell.0 >= cube.height() || cell.1 >= cube.width() {
        return Err(Error::Index(format!(
            "cell {cell:?} outside {}×{} grid",
            cube.height(),
            cube.width()
        )));
    }
    Ok((0..cube.len()).map(|t| cube.frame(t)[[cell.0, cell.1]]).collect())
}

fn is_constant(series: &[f64]) -> bool {
    series.windows(2).all(|w| w[0] == w[1])
}

/// Pearson correlation of the time series of two cells.
///
/// Symmetric in its arguments and invariant under positive affine rescaling
/// of either series. Self-correlation of a non-constant cell is exactly 1.
pub fn pearson(cube: &TrafficCube, cell_a: (usize, usize), cell_b: (usize, usize)) -> Result<f64> {
    let a = cell_series(cube, cell_a)?;
    let b = cell_series(cube, cell_b)?;
    if is_constant(&a) {
        return Err(Error::UndefinedCorrelation(format!(
            "series of cell {cell_a:?} is constant"
        )));
    }
    if is_constant(&b) {
        return Err(Error::UndefinedCorrelation(format!(
            "series of cell {cell_b:?} is constant"
        )));
    }
    if cell_a == cell_b {
        return Ok(1.0);
    }
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for (x, y) in a.iter().zip(&b) {
        let da = x - mean_a;
        let db = y - mean_b;
        cov += da * db;
        var_a += da * da;
        var_b += db * db;
    }
    Ok(cov / (var_a.sqrt() * var_b.sqrt()))
}

/// Pearson map of a (2·radius+1)² window centered on `center`.
///
/// Neighbors with constant series produce `None` entries rather than being
/// silently zeroed.
pub fn correlation_map(
    cube: &TrafficCube,
    center: (usize, usize),
    radius: usize,
) -> Result<CorrelationMap> {
    let side = 2 * radius + 1;
    if center.0 < radius
        || center.1 < radius
        || center.0 + radius >= cube.height()
        || center.1 + radius >= cube.width()
    {
        return Err(Error::Range(format!(
            "{side}×{side} window at {center:?} does not fit a {}×{} grid",
            cube.height(),
            cube.width()
        )));
    }
    let mut values = Array2::from_elem((side, side), None);
    for i in 0..side {
        for j in 0..side {
            let neighbor = (center.0 - radius + i, center.1 - radius + j);
            match pearson(cube, center, neighbor) {
                Ok(r) => values[[i, j]] = Some(r),
                Err(Error::UndefinedCorrelation(_)) => {}
                Err(other) => return Err(other),
            }
        }
    }
    Ok(CorrelationMap { center, radius, values })
}

/// Cell of maximum activity; ties break to the smallest row, then column.
pub fn hotspot(frame: &TrafficFrame) -> Result<(usize, usize)> {
    if frame.values.is_empty() {
        return Err(Error::Input("empty frame has no hotspot".into()));
    }
    let mut best = (0usize, 0usize);
    let mut best_val = f64::NEG_INFINITY;
    for ((r, c), &v) in frame.values.indexed_iter() {
        // strict inequality keeps the first (smallest row, col) maximum
        if v > best_val {
            best_val = v;
            best = (r, c);
        }
    }
    Ok(best)
}

/// Hotspot of every frame, in slot order.
pub fn hotspot_trajectory(cube: &TrafficCube) -> HotspotTrack {
    let entries = (0..cube.len())
        .map(|t| {
            let frame = cube.frame_owned(t);
            let cell = hotspot(&frame).expect("cube frames are non-empty");
            HotspotEntry { slot: t, cell, value: frame.values[[cell.0, cell.1]] }
        })
        .collect();
    HotspotTrack { entries }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::ServiceKind;
    use crate::ingest::{generate_synthetic, Hotspot, SynthConfig};
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cube_from(data: Array3<f64>) -> TrafficCube {
        TrafficCube::new(data, 0, 3600, ServiceKind::Internet, false).unwrap()
    }

    fn random_cube(seed: u64, t: usize, h: usize, w: usize, zeros: bool) -> TrafficCube {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = Array3::from_shape_fn((t, h, w), |_| {
            if zeros && rng.gen_bool(0.2) {
                0.0
            } else {
                rng.gen_range(0.1..10.0)
            }
        });
        cube_from(data)
    }

    /// Brute-force ratio mean with the same zero-denominator exclusion.
    fn atvr_oracle(cube: &TrafficCube, tau: usize) -> Option<f64> {
        let mut sum = 0.0;
        let mut count = 0.0;
        for t in tau..cube.len() {
            for a in 0..cube.height() {
                for b in 0..cube.width() {
                    let denom = cube.frame(t - tau)[[a, b]];
                    if denom != 0.0 {
                        sum += cube.frame(t)[[a, b]] / denom;
                        count += 1.0;
                    }
                }
            }
        }
        (count > 0.0).then(|| sum / count)
    }

    #[test]
    fn atvr_of_time_invariant_cube_is_exactly_one() {
        let frame = ndarray::arr2(&[[1.0, 2.5], [0.5, 9.0]]);
        let mut data = Array3::zeros((10, 2, 2));
        for t in 0..10 {
            data.index_axis_mut(ndarray::Axis(0), t).assign(&frame);
        }
        let cube = cube_from(data);
        for tau in 1..10 {
            assert_eq!(atvr(&cube, tau).unwrap(), 1.0);
        }
    }

    #[test]
    fn atvr_of_doubling_cube_is_exactly_two() {
        let mut data = Array3::zeros((10, 2, 2));
        for t in 0..10 {
            data.index_axis_mut(ndarray::Axis(0), t).fill((1u64 << t) as f64);
        }
        let cube = cube_from(data);
        assert_eq!(atvr(&cube, 1).unwrap(), 2.0);
        assert_eq!(atvr(&cube, 2).unwrap(), 4.0);
    }

    #[test]
    fn atvr_matches_bruteforce_oracle() {
        for seed in 0..5 {
            let cube = random_cube(seed, 10, 3, 3, seed % 2 == 0);
            for tau in [1, 2, 5, 9] {
                let got = atvr(&cube, tau).unwrap();
                let want = atvr_oracle(&cube, tau).unwrap();
                assert!(
                    (got - want).abs() / want.abs() < 1e-12,
                    "seed {seed} tau {tau}: {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn atvr_rejects_bad_lags_and_all_zero_history() {
        let cube = random_cube(1, 6, 2, 2, false);
        assert!(matches!(atvr(&cube, 0), Err(Error::Range(_))));
        assert!(matches!(atvr(&cube, 6), Err(Error::Range(_))));
        assert!(matches!(atvr(&cube, 7), Err(Error::Range(_))));
        let zeros = cube_from(Array3::zeros((4, 2, 2)));
        assert!(matches!(atvr(&zeros, 1), Err(Error::UndefinedRatio(_))));
    }

    #[test]
    fn profile_lag_24_is_one_for_daily_periodic_cube() {
        let cube = generate_synthetic(&SynthConfig {
            height: 6,
            width: 6,
            weeks: 1,
            seed: 0,
            hotspots: vec![Hotspot::new(2.5, 2.5, 8.0)],
            noise_std: 0.0,
            weekly_weekend_factor: 1.0,
            ..SynthConfig::default()
        })
        .unwrap();
        let profile = atvr_profile(&cube, 48).unwrap();
        assert_eq!(profile.taus.len(), 48);
        assert!((profile.values[23] - 1.0).abs() < 1e-9, "tau = 24");
        assert!((profile.values[47] - 1.0).abs() < 1e-9, "tau = 48");
    }

    #[test]
    fn profile_deviates_from_ideal_exactly_at_weekend_crossing_day_lags() {
        // Noise-free weekly pattern: at whole-day lags the diurnal factor
        // cancels, so the ratio is 1 unless the lag maps weekday slots onto
        // weekend slots. Those crossings are the correlation minima: the
        // points farthest from the ideal ratio 1.
        let cube = generate_synthetic(&SynthConfig {
            height: 5,
            width: 5,
            weeks: 4,
            seed: 0,
            hotspots: vec![Hotspot::new(2.0, 2.0, 8.0)],
            noise_std: 0.0,
            weekly_weekend_factor: 0.6,
            ..SynthConfig::default()
        })
        .unwrap();
        let profile = atvr_profile(&cube, 504).unwrap();
        for k in 1..=21usize {
            let value = profile.values[24 * k - 1];
            if k % 7 == 0 {
                assert!(
                    (value - 1.0).abs() < 1e-9,
                    "whole-week lag {k} days should be ideal, got {value}"
                );
            } else {
                assert!(
                    (value - 1.0).abs() > 1e-3,
                    "weekend-crossing lag {k} days should deviate, got {value}"
                );
            }
        }
    }

    #[test]
    fn pearson_self_correlation_is_exactly_one() {
        let cube = random_cube(3, 24, 4, 4, false);
        assert_eq!(pearson(&cube, (2, 3), (2, 3)).unwrap(), 1.0);
    }

    #[test]
    fn pearson_detects_perfect_anticorrelation() {
        let mut data = Array3::zeros((12, 1, 2));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for t in 0..12 {
            let v = rng.gen_range(1.0..5.0);
            data[[t, 0, 0]] = v;
            data[[t, 0, 1]] = 100.0 - v;
        }
        let cube = cube_from(data);
        let r = pearson(&cube, (0, 0), (0, 1)).unwrap();
        assert!((r + 1.0).abs() < 1e-12, "expected −1, got {r}");
    }

    #[test]
    fn pearson_is_affine_invariant() {
        let mut data = Array3::zeros((12, 1, 2));
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for t in 0..12 {
            let v = rng.gen_range(1.0..5.0);
            data[[t, 0, 0]] = v;
            data[[t, 0, 1]] = 5.0 * v + 3.0;
        }
        let cube = cube_from(data);
        let r = pearson(&cube, (0, 0), (0, 1)).unwrap();
        assert!((r - 1.0).abs() < 1e-12, "expected 1, got {r}");
    }

    #[test]
    fn pearson_is_symmetric_and_bounded() {
        let cube = random_cube(7, 20, 4, 4, false);
        for (a, b) in [((0, 0), (3, 3)), ((1, 2), (2, 1)), ((0, 3), (3, 0))] {
            let ab = pearson(&cube, a, b).unwrap();
            let ba = pearson(&cube, b, a).unwrap();
            assert_eq!(ab, ba);
            assert!(ab.abs() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn pearson_rejects_constant_series_and_bad_cells() {
        let mut data = Array3::zeros((6, 2, 2));
        for t in 0..6 {
            data[[t, 0, 0]] = t as f64;
            data[[t, 0, 1]] = 4.2; // constant
            data[[t, 1, 0]] = (t * t) as f64;
            data[[t, 1, 1]] = 1.0 + t as f64;
        }
        let cube = cube_from(data);
        assert!(matches!(
            pearson(&cube, (0, 0), (0, 1)),
            Err(Error::UndefinedCorrelation(_))
        ));
        assert!(matches!(
            pearson(&cube, (0, 1), (0, 1)),
            Err(Error::UndefinedCorrelation(_))
        ));
        assert!(matches!(pearson(&cube, (0, 0), (2, 0)), Err(Error::Index(_))));
    }

    #[test]
    fn map_window_geometry_and_center() {
        let cube = random_cube(11, 20, 64, 64, false);
        let map = correlation_map(&cube, (59, 50), 4).unwrap();
        assert_eq!(map.values.dim(), (9, 9));
        assert_eq!(map.values[[4, 4]], Some(1.0));
        let corner = pearson(&cube, (59, 50), (55, 46)).unwrap();
        assert_eq!(map.values[[0, 0]], Some(corner));
        assert!(matches!(correlation_map(&cube, (3, 50), 4), Err(Error::Range(_))));
        assert!(matches!(correlation_map(&cube, (59, 61), 4), Err(Error::Range(_))));
    }

    #[test]
    fn map_of_rescaled_common_series_is_all_ones() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let series: Vec<f64> = (0..20).map(|_| rng.gen_range(0.5..3.0)).collect();
        let scale = ndarray::Array2::from_shape_fn((5, 5), |_| rng.gen_range(0.1..4.0));
        let data = Array3::from_shape_fn((20, 5, 5), |(t, r, c)| series[t] * scale[[r, c]]);
        let cube = cube_from(data);
        let map = correlation_map(&cube, (2, 2), 2).unwrap();
        for v in map.values.iter() {
            let r = v.expect("no constant series here");
            assert!((r - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn map_matches_per_entry_oracle_and_flags_undefined() {
        let mut cube = random_cube(17, 16, 6, 6, false);
        // force one neighbor constant
        let mut data = cube.data().clone();
        for t in 0..16 {
            data[[t, 1, 2]] = 7.0;
        }
        cube = cube_from(data);
        let map = correlation_map(&cube, (2, 2), 2).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let neighbor = (i, j);
                let want = match pearson(&cube, (2, 2), neighbor) {
                    Ok(r) => Some(r),
                    Err(Error::UndefinedCorrelation(_)) => None,
                    Err(e) => panic!("unexpected error {e:?}"),
                };
                assert_eq!(map.values[[i, j]], want, "entry ({i},{j})");
            }
        }
        assert_eq!(map.values[[1, 2]], None);
    }

    #[test]
    fn hotspot_finds_strict_maximum() {
        let mut values = ndarray::Array2::zeros((4, 5));
        values[[2, 3]] = 9.0;
        let frame = TrafficFrame { values, slot: 0 };
        assert_eq!(hotspot(&frame).unwrap(), (2, 3));
    }

    #[test]
    fn hotspot_tie_breaks_to_first_cell_row_major() {
        let frame = TrafficFrame { values: ndarray::Array2::from_elem((3, 3), 2.0), slot: 0 };
        assert_eq!(hotspot(&frame).unwrap(), (0, 0));
        let mut values = ndarray::Array2::zeros((3, 3));
        values[[1, 2]] = 5.0;
        values[[2, 0]] = 5.0;
        let frame = TrafficFrame { values, slot: 0 };
        assert_eq!(hotspot(&frame).unwrap(), (1, 2));
    }

    #[test]
    fn hotspot_matches_exhaustive_scan_and_is_monotone_invariant() {
        for seed in 0..10 {
            let cube = random_cube(seed + 50, 1, 6, 7, false);
            let frame = cube.frame_owned(0);
            let got = hotspot(&frame).unwrap();
            // exhaustive scan with explicit lexicographic tie-break
            let mut want = (0, 0);
            for r in 0..6 {
                for c in 0..7 {
                    if frame.values[[r, c]] > frame.values[[want.0, want.1]] {
                        want = (r, c);
                    }
                }
            }
            assert_eq!(got, want);
            let transformed = TrafficFrame { values: frame.values.mapv(f64::exp), slot: 0 };
            assert_eq!(hotspot(&transformed).unwrap(), got);
        }
    }

    #[test]
    fn trajectory_of_time_invariant_cube_is_constant() {
        let frame = ndarray::arr2(&[[0.0, 3.0], [1.0, 2.0]]);
        let mut data = Array3::zeros((5, 2, 2));
        for t in 0..5 {
            data.index_axis_mut(ndarray::Axis(0), t).assign(&frame);
        }
        let track = hotspot_trajectory(&cube_from(data));
        assert_eq!(track.entries.len(), 5);
        for (t, e) in track.entries.iter().enumerate() {
            assert_eq!(e.slot, t);
            assert_eq!(e.cell, (0, 1));
            assert_eq!(e.value, 3.0);
        }
    }

    #[test]
    fn trajectory_alternates_between_phase_opposed_hotspots() {
        // Two bumps half a day out of phase: the first dominates while its
        // sinusoid is positive, the second for the opposite half.
        let cube = generate_synthetic(&SynthConfig {
            height: 10,
            width: 10,
            weeks: 1,
            seed: 0,
            hotspots: vec![
                Hotspot { row: 2.0, col: 2.0, peak: 10.0, phase: 0.0 },
                Hotspot { row: 7.0, col: 7.0, peak: 10.0, phase: std::f64::consts::PI },
            ],
            noise_std: 0.0,
            weekly_weekend_factor: 1.0,
            kernel_sigma: 1.0,
            ..SynthConfig::default()
        })
        .unwrap();
        let track = hotspot_trajectory(&cube);
        for e in &track.entries {
            let hod = e.slot % 24;
            if hod >= 1 && hod <= 11 {
                assert_eq!(e.cell, (2, 2), "hour {hod}");
            } else if hod >= 13 && hod <= 23 {
                assert_eq!(e.cell, (7, 7), "hour {hod}");
            }
        }
    }

    #[test]
    fn trajectory_on_length_one_cube() {
        let data = Array3::from_shape_fn((1, 2, 2), |(_, r, c)| (r * 2 + c) as f64);
        let track = hotspot_trajectory(&cube_from(data));
        assert_eq!(track.entries.len(), 1);
        assert_eq!(track.entries[0].cell, (1, 1));
    }
}
