//! Raw-record ingestion, binary cube persistence, and seeded synthetic
//! traffic generation.
//!
//! Raw activity exports are tab-separated text, one record per line. Records
//! are parsed individually, then assembled into a dense [`TrafficCube`]
//! spanning the observed time range. Cubes persist in the "CGF1" binary
//! format with a bit-exact round trip.

use std::f64::consts::TAU;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::grid::{ServiceKind, TrafficCube};

/// One parsed activity record. Absent numeric fields are zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CdrRecord {
    /// 1-based cell index into the H×W grid, row-major.
    pub square_id: u32,
    /// Epoch milliseconds of the slot start.
    pub timestamp_ms: i64,
    pub sms_in: f64,
    pub sms_out: f64,
    pub call_in: f64,
    pub call_out: f64,
    pub internet: f64,
}

impl CdrRecord {
    fn activity(&self, service: ServiceKind) -> Result<f64> {
        Ok(match service {
            ServiceKind::SmsIn => self.sms_in,
            ServiceKind::SmsOut => self.sms_out,
            ServiceKind::CallIn => self.call_in,
            ServiceKind::CallOut => self.call_out,
            ServiceKind::Internet => self.internet,
            combined => {
                return Err(Error::Input(format!(
                    "service '{combined}' is not a raw record field; combine cubes instead"
                )))
            }
        })
    }
}

fn parse_activity(field: &str, name: &str, line_no: usize) -> Result<f64> {
    if field.is_empty() {
        return Ok(0.0);
    }
    let v: f64 = field.parse().map_err(|_| Error::Parse {
        line: line_no,
        msg: format!("{name} field '{field}' is not a number"),
    })?;
    if !v.is_finite() || v < 0.0 {
        return Err(Error::Parse {
            line: line_no,
            msg: format!("{name} field {v} is not a non-negative finite number"),
        });
    }
    Ok(v)
}

/// Parse one tab-separated record line.
///
/// Field order: square_id, timestamp_ms, country_code, sms_in, sms_out,
/// call_in, call_out, internet. The country code is read and discarded;
/// activity is summed over country codes during assembly. Empty numeric
/// fields mean zero.
pub fn parse_cdr_line(line: &str, line_no: usize) -> Result<CdrRecord> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 8 {
        return Err(Error::Parse {
            line: line_no,
            msg: format!("expected 8 tab-separated fields, got {}", fields.len()),
        });
    }
    let square_id: u32 = fields[0].parse().map_err(|_| Error::Parse {
        line: line_no,
        msg: format!("square_id '{}' is not a positive integer", fields[0]),
    })?;
    if square_id == 0 {
        return Err(Error::Parse { line: line_no, msg: "square_id must be 1-based".into() });
    }
    let timestamp_ms: i64 = fields[1].parse().map_err(|_| Error::Parse {
        line: line_no,
        msg: format!("timestamp '{}' is not an integer", fields[1]),
    })?;
    // fields[2] is the country code: validated as present, otherwise ignored
    Ok(CdrRecord {
        square_id,
        timestamp_ms,
        sms_in: parse_activity(fields[3], "sms_in", line_no)?,
        sms_out: parse_activity(fields[4], "sms_out", line_no)?,
        call_in: parse_activity(fields[5], "call_in", line_no)?,
        call_out: parse_activity(fields[6], "call_out", line_no)?,
        internet: parse_activity(fields[7], "internet", line_no)?,
    })
}

/// Assemble records into a dense cube spanning the observed time range.
///
/// The slot grid origin is the earliest record. Absent (cell, slot) pairs
/// are zero; multiple records for the same (cell, slot) are summed in a
/// fixed order, so any permutation of `records` yields a bit-identical cube.
pub fn assemble_cube(
    records: &[CdrRecord],
    height: usize,
    width: usize,
    service: ServiceKind,
    slot_duration: u32,
) -> Result<TrafficCube> {
    if records.is_empty() {
        return Err(Error::Input("no records: time range is undefined".into()));
    }
    if height == 0 || width == 0 {
        return Err(Error::Input("grid dimensions must be positive".into()));
    }
    if slot_duration == 0 {
        return Err(Error::Input("slot duration must be positive".into()));
    }
    let n_cells = (height * width) as u64;
    let slot_ms = i64::from(slot_duration) * 1000;

    let min_ts = records.iter().map(|r| r.timestamp_ms).min().unwrap();
    let max_ts = records.iter().map(|r| r.timestamp_ms).max().unwrap();
    if min_ts % 1000 != 0 {
        return Err(Error::Alignment(format!(
            "earliest timestamp {min_ts} ms is not on a whole second"
        )));
    }

    // (slot, row, col, value) tuples sorted into a canonical order before
    // accumulation, so summation order never depends on input order.
    let mut placed: Vec<(usize, usize, usize, f64)> = Vec::with_capacity(records.len());
    for r in records {
        if u64::from(r.square_id) > n_cells {
            return Err(Error::Index(format!(
                "square_id {} exceeds {height}×{width} grid",
                r.square_id
            )));
        }
        let offset = r.timestamp_ms - min_ts;
        if offset % slot_ms != 0 {
            return Err(Error::Alignment(format!(
                "timestamp {} ms is not aligned to the {slot_duration} s slot grid",
                r.timestamp_ms
            )));
        }
        let t = (offset / slot_ms) as usize;
        let idx = (r.square_id - 1) as usize;
        placed.push((t, idx / width, idx % width, r.activity(service)?));
    }
    placed.sort_by(|a, b| {
        (a.0, a.1, a.2).cmp(&(b.0, b.1, b.2)).then_with(|| a.3.total_cmp(&b.3))
    });

    let t_len = ((max_ts - min_ts) / slot_ms) as usize + 1;
    let mut data = Array3::<f64>::zeros((t_len, height, width));
    for (t, row, col, v) in placed {
        data[[t, row, col]] += v;
    }
    TrafficCube::new(data, min_ts / 1000, slot_duration, service, false)
}

const CUBE_MAGIC: &[u8; 4] = b"CGF1";

/// Write a cube in the CGF1 binary format.
///
/// Layout, little-endian: magic "CGF1", H: u32, W: u32, T: u64,
/// slot_duration: u32, start_time: i64, service tag: u8, normalized: u8,
/// then T·H·W f64 payload in (t, row, col) order.
pub fn save_cube(cube: &TrafficCube, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CUBE_MAGIC)?;
    w.write_u32::<LittleEndian>(cube.height() as u32)?;
    w.write_u32::<LittleEndian>(cube.width() as u32)?;
    w.write_u64::<LittleEndian>(cube.len() as u64)?;
    w.write_u32::<LittleEndian>(cube.slot_duration())?;
    w.write_i64::<LittleEndian>(cube.start_time())?;
    w.write_u8(cube.service().tag())?;
    w.write_u8(u8::from(cube.is_normalized()))?;
    for &v in cube.data().iter() {
        w.write_f64::<LittleEndian>(v)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a cube written by [`save_cube`]. The round trip is bit-exact.
pub fn load_cube(path: &Path) -> Result<TrafficCube> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("file too short for CGF1 header".into()))?;
    if &magic != CUBE_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected \"CGF1\"",
            String::from_utf8_lossy(&magic)
        )));
    }
    let header = |e: std::io::Error| Error::Format(format!("truncated CGF1 header: {e}"));
    let h = r.read_u32::<LittleEndian>().map_err(header)? as usize;
    let w = r.read_u32::<LittleEndian>().map_err(header)? as usize;
    let t = r.read_u64::<LittleEndian>().map_err(header)? as usize;
    let slot_duration = r.read_u32::<LittleEndian>().map_err(header)?;
    let start_time = r.read_i64::<LittleEndian>().map_err(header)?;
    let service = ServiceKind::from_tag(r.read_u8().map_err(header)?)?;
    let normalized = match r.read_u8().map_err(header)? {
        0 => false,
        1 => true,
        other => return Err(Error::Format(format!("normalized flag must be 0 or 1, got {other}"))),
    };
    let n = t
        .checked_mul(h)
        .and_then(|x| x.checked_mul(w))
        .ok_or_else(|| Error::Format("header dimensions overflow".into()))?;
    let expected = n
        .checked_mul(8)
        .ok_or_else(|| Error::Format("payload size overflows".into()))?;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "payload is {} bytes, expected {expected} ({t}×{h}×{w} f64)",
            payload.len()
        )));
    }
    let mut values = vec![0f64; n];
    byteorder::LittleEndian::read_f64_into(&payload, &mut values);
    let data = Array3::from_shape_vec((t, h, w), values)
        .map_err(|e| Error::Format(format!("payload shape: {e}")))?;
    TrafficCube::new(data, start_time, slot_duration, service, normalized)
}

/// One synthetic traffic hotspot: a Gaussian spatial bump whose diurnal
/// cycle can be phase-shifted relative to the others.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hotspot {
    pub row: f64,
    pub col: f64,
    pub peak: f64,
    /// Phase offset of the daily sinusoid, radians.
    pub phase: f64,
}

impl Hotspot {
    pub fn new(row: f64, col: f64, peak: f64) -> Self {
        Hotspot { row, col, peak, phase: 0.0 }
    }
}

/// Configuration for [`generate_synthetic`].
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub weeks: usize,
    pub seed: u64,
    pub hotspots: Vec<Hotspot>,
    /// Baseline of the diurnal factor before the sinusoid is added.
    pub base_level: f64,
    pub daily_amplitude: f64,
    /// Multiplier applied on Saturday and Sunday, in (0, 1].
    pub weekly_weekend_factor: f64,
    pub noise_std: f64,
    /// Width of the Gaussian spatial kernel, cells.
    pub kernel_sigma: f64,
    /// Epoch seconds stamped on the cube. Frame 0 is always treated as
    /// Monday 00:00 for the weekend pattern.
    pub start_time: i64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            height: 20,
            width: 20,
            weeks: 7,
            seed: 0,
            hotspots: Vec::new(),
            base_level: 1.0,
            daily_amplitude: 0.5,
            weekly_weekend_factor: 0.7,
            noise_std: 0.05,
            kernel_sigma: 2.0,
            // 2013-11-04 00:00 UTC, a Monday
            start_time: 1_383_523_200,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.hotspots.is_empty() {
            return Err(Error::Config("at least one hotspot is required".into()));
        }
        if self.height == 0 || self.width == 0 || self.weeks == 0 {
            return Err(Error::Config("grid dimensions and week count must be positive".into()));
        }
        if !(self.weekly_weekend_factor > 0.0 && self.weekly_weekend_factor <= 1.0) {
            return Err(Error::Config(format!(
                "weekend factor {} must lie in (0, 1]",
                self.weekly_weekend_factor
            )));
        }
        if self.noise_std < 0.0 || !self.noise_std.is_finite() {
            return Err(Error::Config(format!("noise std {} must be ≥ 0", self.noise_std)));
        }
        if self.kernel_sigma <= 0.0 || !self.kernel_sigma.is_finite() {
            return Err(Error::Config(format!(
                "kernel sigma {} must be positive",
                self.kernel_sigma
            )));
        }
        for hs in &self.hotspots {
            if !(hs.row.is_finite() && hs.col.is_finite() && hs.phase.is_finite()) {
                return Err(Error::Config("hotspot coordinates must be finite".into()));
            }
            if !(hs.peak.is_finite() && hs.peak >= 0.0) {
                return Err(Error::Config(format!("hotspot peak {} must be ≥ 0", hs.peak)));
            }
        }
        Ok(())
    }
}

/// Generate an hourly cube of length weeks·168 with known structure.
///
/// Cell value at hour t:
///   Σ over hotspots of
///     peak · exp(−d²/(2σ²)) · (base + daily_amplitude·sin(2π·hod/24 + phase))
///   × (weekend factor on Sat/Sun, else 1) + Gaussian noise, clamped at 0.
///
/// Identical seeds give bit-identical cubes.
pub fn generate_synthetic(config: &SynthConfig) -> Result<TrafficCube> {
    config.validate()?;
    let t_total = config.weeks * 168;
    let (h, w) = (config.height, config.width);
    let two_sigma_sq = 2.0 * config.kernel_sigma * config.kernel_sigma;

    // Spatial kernels are time-invariant; precompute one plane per hotspot.
    let kernels: Vec<ndarray::Array2<f64>> = config
        .hotspots
        .iter()
        .map(|hs| {
            ndarray::Array2::from_shape_fn((h, w), |(r, c)| {
                let dr = r as f64 - hs.row;
                let dc = c as f64 - hs.col;
                hs.peak * (-(dr * dr + dc * dc) / two_sigma_sq).exp()
            })
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let noise = if config.noise_std > 0.0 {
        Some(Normal::new(0.0, config.noise_std).expect("validated std"))
    } else {
        None
    };

    let mut data = Array3::<f64>::zeros((t_total, h, w));
    for t in 0..t_total {
        let hod = (t % 24) as f64;
        let day_factor = if t % 168 >= 120 { config.weekly_weekend_factor } else { 1.0 };
        let diurnal: Vec<f64> = config
            .hotspots
            .iter()
            .map(|hs| config.base_level + config.daily_amplitude * (TAU * hod / 24.0 + hs.phase).sin())
            .collect();
        let mut frame = data.index_axis_mut(ndarray::Axis(0), t);
        for r in 0..h {
            for c in 0..w {
                let mut v = 0.0;
                for (kernel, df) in kernels.iter().zip(&diurnal) {
                    v += kernel[[r, c]] * df;
                }
                v *= day_factor;
                if let Some(n) = &noise {
                    v += n.sample(&mut rng);
                }
                frame[[r, c]] = v.max(0.0);
            }
        }
    }
    TrafficCube::new(data, config.start_time, 3600, ServiceKind::Internet, false)
}

/// Convenience: parse every line of a record file, skipping blank lines.
pub fn parse_cdr_file(path: &Path) -> Result<Vec<CdrRecord>> {
    let text = std::fs::read_to_string(path)?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        records.push(parse_cdr_line(line, i + 1)?);
    }
    Ok(records)
}
