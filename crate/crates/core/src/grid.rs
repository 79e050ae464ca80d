//! Core gridded-traffic data types, temporal aggregation, and reversible
//! normalization.
//!
//! A [`TrafficCube`] is a time-ordered stack of H×W activity frames for one
//! service. All arithmetic is f64. Cubes are immutable after construction;
//! every operation here is a pure function returning a new cube.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use ndarray::{Array3, ArrayView2};

use crate::error::{Error, Result};

/// Traffic service carried by a cube.
///
/// Combined tags are only produced by [`combine_services`], never by
/// ingestion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ServiceKind {
    SmsIn,
    SmsOut,
    CallIn,
    CallOut,
    Internet,
    SmsCombined,
    CallCombined,
    Total,
}

impl ServiceKind {
    pub fn is_combined(self) -> bool {
        matches!(
            self,
            ServiceKind::SmsCombined | ServiceKind::CallCombined | ServiceKind::Total
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ServiceKind::SmsIn => "sms_in",
            ServiceKind::SmsOut => "sms_out",
            ServiceKind::CallIn => "call_in",
            ServiceKind::CallOut => "call_out",
            ServiceKind::Internet => "internet",
            ServiceKind::SmsCombined => "sms_combined",
            ServiceKind::CallCombined => "call_combined",
            ServiceKind::Total => "total",
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            ServiceKind::SmsIn => 0,
            ServiceKind::SmsOut => 1,
            ServiceKind::CallIn => 2,
            ServiceKind::CallOut => 3,
            ServiceKind::Internet => 4,
            ServiceKind::SmsCombined => 5,
            ServiceKind::CallCombined => 6,
            ServiceKind::Total => 7,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Result<Self> {
        Ok(match tag {
            0 => ServiceKind::SmsIn,
            1 => ServiceKind::SmsOut,
            2 => ServiceKind::CallIn,
            3 => ServiceKind::CallOut,
            4 => ServiceKind::Internet,
            5 => ServiceKind::SmsCombined,
            6 => ServiceKind::CallCombined,
            7 => ServiceKind::Total,
            other => return Err(Error::Format(format!("unknown service tag {other}"))),
        })
    }

    /// Tag of the element-wise sum of two cubes.
    fn combined_with(self, other: ServiceKind) -> ServiceKind {
        use ServiceKind::*;
        match (self, other) {
            (SmsIn, SmsOut) | (SmsOut, SmsIn) => SmsCombined,
            (CallIn, CallOut) | (CallOut, CallIn) => CallCombined,
            _ => Total,
        }
    }
}

impl fmt::Display for ServiceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ServiceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "sms_in" => ServiceKind::SmsIn,
            "sms_out" => ServiceKind::SmsOut,
            "call_in" => ServiceKind::CallIn,
            "call_out" => ServiceKind::CallOut,
            "internet" => ServiceKind::Internet,
            "sms_combined" => ServiceKind::SmsCombined,
            "call_combined" => ServiceKind::CallCombined,
            "total" => ServiceKind::Total,
            other => return Err(Error::Input(format!("unknown service kind '{other}'"))),
        })
    }
}

/// One spatial frame of a cube together with its slot index.
#[derive(Debug, Clone)]
pub struct TrafficFrame {
    pub values: ndarray::Array2<f64>,
    pub slot: usize,
}

/// Time-ordered sequence of H×W non-negative activity frames for one service.
///
/// Frame `t` covers `start_time + t * slot_duration`. Stored dense as a
/// `(T, H, W)` array.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficCube {
    data: Array3<f64>,
    start_time: i64,
    slot_duration: u32,
    service: ServiceKind,
    normalized: bool,
}

impl TrafficCube {
    /// Build a cube from a `(T, H, W)` array, validating dimensions and
    /// finiteness. Non-negativity is guaranteed by the ingestion and
    /// synthesis paths; algebraic outputs (denormalized predictions) may
    /// carry values of any sign.
    pub fn new(
        data: Array3<f64>,
        start_time: i64,
        slot_duration: u32,
        service: ServiceKind,
        normalized: bool,
    ) -> Result<Self> {
        let (t, h, w) = data.dim();
        if t == 0 || h == 0 || w == 0 {
            return Err(Error::Shape(format!(
                "cube dimensions must be positive, got ({t}, {h}, {w})"
            )));
        }
        if slot_duration == 0 {
            return Err(Error::Input("slot duration must be positive".into()));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("cube contains {bad}")));
        }
        Ok(TrafficCube { data, start_time, slot_duration, service, normalized })
    }

    pub fn len(&self) -> usize {
        self.data.dim().0
    }

    pub fn is_empty(&self) -> bool {
        false // T >= 1 by construction
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn start_time(&self) -> i64 {
        self.start_time
    }

    pub fn slot_duration(&self) -> u32 {
        self.slot_duration
    }

    pub fn service(&self) -> ServiceKind {
        self.service
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// View of frame `t`. Panics if `t >= len()`.
    pub fn frame(&self, t: usize) -> ArrayView2<'_, f64> {
        self.data.index_axis(ndarray::Axis(0), t)
    }

    /// Owned copy of frame `t` with its slot index.
    pub fn frame_owned(&self, t: usize) -> TrafficFrame {
        TrafficFrame { values: self.frame(t).to_owned(), slot: t }
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    fn assert_compatible(&self, other: &TrafficCube) -> Result<()> {
        if self.data.dim() != other.data.dim() {
            return Err(Error::Shape(format!(
                "cube dimensions differ: {:?} vs {:?}",
                self.data.dim(),
                other.data.dim()
            )));
        }
        if self.start_time != other.start_time || self.slot_duration != other.slot_duration {
            return Err(Error::Shape(format!(
                "cube time axes differ: start {} / {} s vs start {} / {} s",
                self.start_time, self.slot_duration, other.start_time, other.slot_duration
            )));
        }
        Ok(())
    }
}

/// Element-wise sum of two compatible un-normalized cubes.
///
/// `sms_in + sms_out` yields `sms_combined`, `call_in + call_out` yields
/// `call_combined`; any other pairing yields `total`.
pub fn combine_services(a: &TrafficCube, b: &TrafficCube) -> Result<TrafficCube> {
    a.assert_compatible(b)?;
    if a.normalized || b.normalized {
        return Err(Error::State("cannot combine normalized cubes".into()));
    }
    let data = &a.data + &b.data;
    Ok(TrafficCube {
        data,
        start_time: a.start_time,
        slot_duration: a.slot_duration,
        service: a.service.combined_with(b.service),
        normalized: false,
    })
}

/// Sum consecutive slots into hourly frames. Total volume is conserved.
///
/// Requires the slot duration to divide one hour evenly and the cube length
/// to be a whole number of hours.
pub fn aggregate_hourly(cube: &TrafficCube) -> Result<TrafficCube> {
    if cube.normalized {
        return Err(Error::State("cannot aggregate a normalized cube".into()));
    }
    if 3600 % cube.slot_duration != 0 {
        return Err(Error::Aggregation(format!(
            "slot duration {} s does not divide 3600 s",
            cube.slot_duration
        )));
    }
    let per_hour = (3600 / cube.slot_duration) as usize;
    let t = cube.len();
    if t % per_hour != 0 {
        return Err(Error::Aggregation(format!(
            "{t} slots of {} s leave a ragged trailing hour ({} slots per hour)",
            cube.slot_duration, per_hour
        )));
    }
    let hours = t / per_hour;
    let (h, w) = (cube.height(), cube.width());
    let mut data = Array3::<f64>::zeros((hours, h, w));
    for hour in 0..hours {
        let mut out = data.index_axis_mut(ndarray::Axis(0), hour);
        for s in 0..per_hour {
            out += &cube.frame(hour * per_hour + s);
        }
    }
    Ok(TrafficCube {
        data,
        start_time: cube.start_time,
        slot_duration: 3600,
        service: cube.service,
        normalized: false,
    })
}

/// Constants of the two-stage normalization: min-max to [0, 1] first, then a
/// z-score using the mean/std of the scaled values. All four constants are
/// required to invert the map exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormStats {
    pub min_val: f64,
    pub max_val: f64,
    pub mean: f64,
    pub std: f64,
}

impl NormStats {
    /// Stats over the whole cube.
    pub fn from_cube(cube: &TrafficCube) -> Result<Self> {
        Self::from_slots(cube, 0..cube.len())
    }

    /// Stats over slots `[range.start, range.end)` only. Training pipelines
    /// pass the training range here so no test data leaks into the scale.
    pub fn from_slots(cube: &TrafficCube, range: Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > cube.len() {
            return Err(Error::Range(format!(
                "slot range {range:?} invalid for cube of length {}",
                cube.len()
            )));
        }
        let slice = cube.data.slice(ndarray::s![range.clone(), .., ..]);
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let mut sum = 0.0;
        for &v in slice.iter() {
            min = min.min(v);
            max = max.max(v);
            sum += v;
        }
        if max <= min {
            return Err(Error::DegenerateScale(format!(
                "constant cube (min = max = {min}), nothing to normalize"
            )));
        }
        let n = slice.len() as f64;
        let range_w = max - min;
        // Mean/variance of the min-max-scaled values, via the raw moments.
        let raw_mean = sum / n;
        let mut var_sum = 0.0;
        for &v in slice.iter() {
            let d = v - raw_mean;
            var_sum += d * d;
        }
        let mean = (raw_mean - min) / range_w;
        let std = (var_sum / n).sqrt() / range_w;
        if std <= 0.0 {
            return Err(Error::DegenerateScale("zero variance after min-max scaling".into()));
        }
        Ok(NormStats { min_val: min, max_val: max, mean, std })
    }

    fn scale_checked(&self) -> Result<(f64, f64)> {
        let range = self.max_val - self.min_val;
        if range <= 0.0 || self.std <= 0.0 {
            return Err(Error::DegenerateScale(format!(
                "stats are not invertible (range {range}, std {})",
                self.std
            )));
        }
        Ok((range, self.std))
    }

    /// Forward map of a single value.
    pub fn apply(&self, x: f64) -> f64 {
        ((x - self.min_val) / (self.max_val - self.min_val) - self.mean) / self.std
    }

    /// Inverse map of a single value.
    pub fn invert(&self, z: f64) -> f64 {
        (z * self.std + self.mean) * (self.max_val - self.min_val) + self.min_val
    }
}

/// Normalize a cube with stats computed over the entire cube.
pub fn normalize(cube: &TrafficCube) -> Result<(TrafficCube, NormStats)> {
    let stats = NormStats::from_cube(cube)?;
    Ok((normalize_with(cube, &stats)?, stats))
}

/// Normalize a cube with caller-provided stats (e.g., training-range stats).
pub fn normalize_with(cube: &TrafficCube, stats: &NormStats) -> Result<TrafficCube> {
    if cube.normalized {
        return Err(Error::State("cube is already normalized".into()));
    }
    stats.scale_checked()?;
    let data = cube.data.mapv(|x| stats.apply(x));
    Ok(TrafficCube {
        data,
        start_time: cube.start_time,
        slot_duration: cube.slot_duration,
        service: cube.service,
        normalized: true,
    })
}

/// Exact algebraic inverse of [`normalize_with`].
pub fn denormalize(cube: &TrafficCube, stats: &NormStats) -> Result<TrafficCube> {
    if !cube.normalized {
        return Err(Error::State("cube is not normalized".into()));
    }
    stats.scale_checked()?;
    let data = cube.data.mapv(|z| stats.invert(z));
    Ok(TrafficCube {
        data,
        start_time: cube.start_time,
        slot_duration: cube.slot_duration,
        service: cube.service,
        normalized: false,
    })
}
