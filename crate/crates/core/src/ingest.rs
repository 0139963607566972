//! Binary CSI record streams and their reduction to training-ready samples.
//!
//! The stream format (`CSIR`) is little-endian: magic `CSIR`, `u16` version
//! (currently 1), `u32` record count, then fixed 249-byte records of
//! `[u64 timestamp_us, u8 pair_id, 30 × (f32 re, f32 im)]`. Sample files
//! (`CSIW`) are little-endian `CSIW`, `u16` version, `u8` label, `u16`
//! domain_id, `u32` rows, `u32` cols, then row-major `f32` data; the
//! canonical pipeline emits 500×60.

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::autodiff::Tensor;

/// Subcarriers captured per antenna pair.
pub const SUBCARRIERS: usize = 30;
/// Antenna pairs concatenated column-wise.
pub const PAIRS: usize = 2;
/// Window length in seconds.
pub const WINDOW_SECS: u64 = 10;
/// Canonical capture rate.
pub const RATE_HZ: u32 = 1000;
/// Canonical block-mean decimation factor (10000 → 500 rows).
pub const DOWNSAMPLE_FACTOR: usize = 20;
/// Canonical sample shape.
pub const SAMPLE_ROWS: usize = 500;
pub const SAMPLE_COLS: usize = PAIRS * SUBCARRIERS;

const STREAM_MAGIC: [u8; 4] = *b"CSIR";
const SAMPLE_MAGIC: [u8; 4] = *b"CSIW";
const FORMAT_VERSION: u16 = 1;
const RECORD_BYTES: usize = 8 + 1 + SUBCARRIERS * 8;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported format version {0}")]
    BadVersion(u16),
    #[error("stream truncated")]
    Truncated,
    #[error("{0} trailing bytes after the declared payload")]
    TrailingBytes(usize),
    #[error("pair_id {0} out of range (expected 0 or 1)")]
    BadPairId(u8),
    #[error("non-finite value in payload")]
    NonFinite,
    #[error("label {0} out of range (expected 0 or 1)")]
    BadLabel(u8),
    #[error("pair {0} has no records")]
    MissingPair(u8),
    #[error("no records to window")]
    EmptyInput,
    #[error("rate {0} Hz does not divide 1 MHz")]
    BadRate(u32),
    #[error("{rows} rows not divisible by factor {factor}")]
    BadFactor { rows: usize, factor: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One complex subcarrier response.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Subcarrier {
    pub re: f32,
    pub im: f32,
}

/// One timestamped CSI reading for one antenna pair.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiRecord {
    pub timestamp_us: u64,
    /// Transmit→receive antenna pair, 0 or 1.
    pub pair_id: u8,
    pub subcarriers: [Subcarrier; SUBCARRIERS],
}

impl CsiRecord {
    /// Per-subcarrier magnitude `sqrt(re² + im²)`, computed in 64-bit to
    /// dodge overflow in the squares.
    pub fn amplitude(&self) -> [f32; SUBCARRIERS] {
        let mut out = [0.0f32; SUBCARRIERS];
        for (o, s) in out.iter_mut().zip(&self.subcarriers) {
            let re = s.re as f64;
            let im = s.im as f64;
            *o = (re * re + im * im).sqrt() as f32;
        }
        out
    }

    /// Per-subcarrier phase `atan2(im, re)`, normalized to (−π, π]; the
    /// origin maps to 0.
    pub fn phase(&self) -> [f32; SUBCARRIERS] {
        let mut out = [0.0f32; SUBCARRIERS];
        for (o, s) in out.iter_mut().zip(&self.subcarriers) {
            let p = s.im.atan2(s.re);
            *o = if p == -std::f32::consts::PI {
                std::f32::consts::PI
            } else {
                p
            };
        }
        out
    }
}

/// A resampled, pair-concatenated 10-second window before decimation.
/// Column `j < 30` is pair 0's subcarrier `j`; column `j ≥ 30` is pair 1's
/// subcarrier `j − 30`. The canonical 1000 Hz pipeline yields 10000 rows.
#[derive(Debug, Clone, PartialEq)]
pub struct RawWindow {
    pub data: Tensor,
    pub start_us: u64,
}

/// One labeled training/evaluation matrix. The standard pipeline produces
/// 500×60 amplitudes; scaled-down experiments may carry smaller matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    data: Tensor,
    label: u8,
    domain_id: u16,
}

impl Sample {
    /// Validates the label and that every entry is finite; `data` must be
    /// 2-D.
    pub fn new(data: Tensor, label: u8, domain_id: u16) -> Result<Sample, IngestError> {
        if label > 1 {
            return Err(IngestError::BadLabel(label));
        }
        if data.shape().len() != 2 {
            return Err(IngestError::NonFinite);
        }
        if !data.iter_finite() {
            return Err(IngestError::NonFinite);
        }
        Ok(Sample {
            data,
            label,
            domain_id,
        })
    }

    pub fn data(&self) -> &Tensor {
        &self.data
    }

    pub fn label(&self) -> u8 {
        self.label
    }

    pub fn domain_id(&self) -> u16 {
        self.domain_id
    }

    pub fn rows(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn cols(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn is_canonical_shape(&self) -> bool {
        self.data.shape() == [SAMPLE_ROWS, SAMPLE_COLS]
    }
}

/// Serializes records into the stream format; `parse_record_stream` inverts
/// this byte for byte.
pub fn encode_record_stream(records: &[CsiRecord]) -> Vec<u8> {
    let mut out = Vec::with_capacity(10 + records.len() * RECORD_BYTES);
    out.extend_from_slice(&STREAM_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for r in records {
        out.extend_from_slice(&r.timestamp_us.to_le_bytes());
        out.push(r.pair_id);
        for s in &r.subcarriers {
            out.extend_from_slice(&s.re.to_le_bytes());
            out.extend_from_slice(&s.im.to_le_bytes());
        }
    }
    out
}

fn split<'a>(buf: &mut &'a [u8], n: usize) -> Result<&'a [u8], IngestError> {
    if buf.len() < n {
        return Err(IngestError::Truncated);
    }
    let (head, rest) = buf.split_at(n);
    *buf = rest;
    Ok(head)
}

/// Parses an entire stream. The declared record count must consume every
/// byte; values must be finite and pair ids in range.
pub fn parse_record_stream(bytes: &[u8]) -> Result<Vec<CsiRecord>, IngestError> {
    let mut buf = bytes;
    if split(&mut buf, 4)? != STREAM_MAGIC {
        return Err(IngestError::BadMagic);
    }
    let version = u16::from_le_bytes(split(&mut buf, 2)?.try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(IngestError::BadVersion(version));
    }
    let count = u32::from_le_bytes(split(&mut buf, 4)?.try_into().unwrap()) as usize;

    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let ts = u64::from_le_bytes(split(&mut buf, 8)?.try_into().unwrap());
        let pair_id = split(&mut buf, 1)?[0];
        if pair_id > 1 {
            return Err(IngestError::BadPairId(pair_id));
        }
        let mut subcarriers = [Subcarrier::default(); SUBCARRIERS];
        for s in &mut subcarriers {
            let re = f32::from_le_bytes(split(&mut buf, 4)?.try_into().unwrap());
            let im = f32::from_le_bytes(split(&mut buf, 4)?.try_into().unwrap());
            if !re.is_finite() || !im.is_finite() {
                return Err(IngestError::NonFinite);
            }
            *s = Subcarrier { re, im };
        }
        records.push(CsiRecord {
            timestamp_us: ts,
            pair_id,
            subcarriers,
        });
    }
    if !buf.is_empty() {
        return Err(IngestError::TrailingBytes(buf.len()));
    }
    Ok(records)
}

/// Resamples each pair's amplitude series onto a uniform `rate_hz` grid
/// (linear interpolation between neighboring records; for duplicate
/// timestamps the last record wins), slices the overlapping span into
/// non-overlapping 10-second windows, and concatenates pair 0 | pair 1
/// column-wise. Trailing partial windows are dropped; a span shorter than
/// one window yields an empty list.
pub fn build_windows(records: &[CsiRecord], rate_hz: u32) -> Result<Vec<RawWindow>, IngestError> {
    if records.is_empty() {
        return Err(IngestError::EmptyInput);
    }
    if rate_hz == 0 || 1_000_000 % rate_hz != 0 {
        return Err(IngestError::BadRate(rate_hz));
    }
    let period_us = (1_000_000 / rate_hz) as u64;
    let rows_per_window = (rate_hz as u64 * WINDOW_SECS) as usize;

    let mut series: [Vec<(u64, [f32; SUBCARRIERS])>; PAIRS] = [Vec::new(), Vec::new()];
    for r in records {
        series[r.pair_id as usize].push((r.timestamp_us, r.amplitude()));
    }
    for (pair, s) in series.iter().enumerate() {
        if s.is_empty() {
            return Err(IngestError::MissingPair(pair as u8));
        }
    }

    let start = series.iter().map(|s| s[0].0).max().unwrap();
    let end = series.iter().map(|s| s.last().unwrap().0).min().unwrap();
    if end < start {
        return Ok(Vec::new());
    }
    let grid_len = ((end - start) / period_us + 1) as usize;
    let window_count = grid_len / rows_per_window;
    if window_count == 0 {
        return Ok(Vec::new());
    }
    let used = window_count * rows_per_window;

    // One resampled row per grid point, both pairs side by side.
    let mut resampled = vec![0.0f32; used * SAMPLE_COLS];
    for (pair, s) in series.iter().enumerate() {
        let mut idx = 0usize;
        for k in 0..used {
            let t = start + k as u64 * period_us;
            while idx + 1 < s.len() && s[idx + 1].0 <= t {
                idx += 1;
            }
            let row = &mut resampled[k * SAMPLE_COLS + pair * SUBCARRIERS..];
            if s[idx].0 >= t || idx + 1 == s.len() {
                row[..SUBCARRIERS].copy_from_slice(&s[idx].1);
            } else {
                let (t0, ref a0) = s[idx];
                let (t1, ref a1) = s[idx + 1];
                let w = (t - t0) as f64 / (t1 - t0) as f64;
                for j in 0..SUBCARRIERS {
                    row[j] = (a0[j] as f64 + (a1[j] as f64 - a0[j] as f64) * w) as f32;
                }
            }
        }
    }

    let mut windows = Vec::with_capacity(window_count);
    for w in 0..window_count {
        let begin = w * rows_per_window * SAMPLE_COLS;
        let data = Tensor::from_vec(
            &[rows_per_window, SAMPLE_COLS],
            resampled[begin..begin + rows_per_window * SAMPLE_COLS].to_vec(),
        )
        .expect("window slice matches shape");
        windows.push(RawWindow {
            data,
            start_us: start + (w * rows_per_window) as u64 * period_us,
        });
    }
    Ok(windows)
}

/// Block-mean decimation: output row `r` is the mean of input rows
/// `[factor·r, factor·r + factor)`, accumulated in 64-bit. The canonical
/// factor 20 turns 10000×60 windows into 500×60 matrices.
pub fn downsample(window: &RawWindow, factor: usize) -> Result<Tensor, IngestError> {
    let rows = window.data.shape()[0];
    let cols = window.data.shape()[1];
    if factor == 0 || rows % factor != 0 {
        return Err(IngestError::BadFactor { rows, factor });
    }
    let out_rows = rows / factor;
    let src = window.data.data();
    let mut out = vec![0.0f32; out_rows * cols];
    let inv = 1.0f64 / factor as f64;
    for r in 0..out_rows {
        for c in 0..cols {
            let mut acc = 0.0f64;
            for k in 0..factor {
                acc += src[(r * factor + k) * cols + c] as f64;
            }
            out[r * cols + c] = (acc * inv) as f32;
        }
    }
    Ok(Tensor::from_vec(&[out_rows, cols], out).expect("downsample shape"))
}

/// Writes one sample in the `CSIW` layout.
pub fn write_sample<W: Write>(mut out: W, sample: &Sample) -> Result<(), IngestError> {
    out.write_all(&SAMPLE_MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&[sample.label])?;
    out.write_all(&sample.domain_id.to_le_bytes())?;
    out.write_all(&(sample.rows() as u32).to_le_bytes())?;
    out.write_all(&(sample.cols() as u32).to_le_bytes())?;
    for v in sample.data.data() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Reads one `CSIW` sample; the stream must end exactly at the payload.
pub fn read_sample<R: Read>(mut input: R) -> Result<Sample, IngestError> {
    let mut raw = Vec::new();
    input.read_to_end(&mut raw)?;
    let mut buf = raw.as_slice();
    if split(&mut buf, 4)? != SAMPLE_MAGIC {
        return Err(IngestError::BadMagic);
    }
    let version = u16::from_le_bytes(split(&mut buf, 2)?.try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(IngestError::BadVersion(version));
    }
    let label = split(&mut buf, 1)?[0];
    let domain_id = u16::from_le_bytes(split(&mut buf, 2)?.try_into().unwrap());
    let rows = u32::from_le_bytes(split(&mut buf, 4)?.try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(split(&mut buf, 4)?.try_into().unwrap()) as usize;
    let payload = split(&mut buf, rows * cols * 4)?;
    if !buf.is_empty() {
        return Err(IngestError::TrailingBytes(buf.len()));
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let tensor = Tensor::from_vec(&[rows, cols], data).expect("payload length checked");
    Sample::new(tensor, label, domain_id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(ts: u64, pair: u8, fill: impl Fn(usize) -> (f32, f32)) -> CsiRecord {
        let mut subcarriers = [Subcarrier::default(); SUBCARRIERS];
        for (i, s) in subcarriers.iter_mut().enumerate() {
            let (re, im) = fill(i);
            *s = Subcarrier { re, im };
        }
        CsiRecord {
            timestamp_us: ts,
            pair_id: pair,
            subcarriers,
        }
    }

    fn constant_stream(per_pair: usize, amp: f32) -> Vec<CsiRecord> {
        let mut records = Vec::new();
        for k in 0..per_pair {
            for pair in 0..PAIRS as u8 {
                records.push(record(k as u64 * 1000, pair, |_| (amp, 0.0)));
            }
        }
        records
    }

    #[test]
    fn parse_empty_stream() {
        let bytes = encode_record_stream(&[]);
        assert_eq!(bytes.len(), 10);
        assert!(parse_record_stream(&bytes).unwrap().is_empty());
    }

    #[test]
    fn parse_hand_encoded_record() {
        let r = record(42, 0, |i| if i == 0 { (3.0, 4.0) } else { (0.0, 0.0) });
        let bytes = encode_record_stream(std::slice::from_ref(&r));
        assert_eq!(bytes.len(), 10 + 249);
        let parsed = parse_record_stream(&bytes).unwrap();
        assert_eq!(parsed, vec![r]);
        assert_eq!(encode_record_stream(&parsed), bytes);
    }

    #[test]
    fn truncation_mid_record() {
        let r = record(1, 0, |_| (1.0, 2.0));
        let bytes = encode_record_stream(&[r]);
        for cut in [0, 3, 9, 15, bytes.len() - 1] {
            assert!(matches!(
                parse_record_stream(&bytes[..cut]),
                Err(IngestError::Truncated)
            ));
        }
    }

    #[test]
    fn rejects_bad_magic_pair_and_nan() {
        let r = record(1, 0, |_| (1.0, 2.0));
        let good = encode_record_stream(&[r]);

        let mut wrong = good.clone();
        wrong[0] = b'X';
        assert!(matches!(
            parse_record_stream(&wrong),
            Err(IngestError::BadMagic)
        ));

        let mut bad_pair = good.clone();
        bad_pair[10 + 8] = 2;
        assert!(matches!(
            parse_record_stream(&bad_pair),
            Err(IngestError::BadPairId(2))
        ));

        let mut nan = good.clone();
        nan[10 + 9..10 + 13].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            parse_record_stream(&nan),
            Err(IngestError::NonFinite)
        ));

        let mut trailing = good;
        trailing.push(7);
        assert!(matches!(
            parse_record_stream(&trailing),
            Err(IngestError::TrailingBytes(1))
        ));
    }

    #[test]
    fn amplitude_triangle_zero_and_diagonal() {
        let r = record(0, 0, |i| match i {
            0 => (3.0, 4.0),
            1 => (0.0, 0.0),
            _ => (1.0, 1.0),
        });
        let a = r.amplitude();
        assert_eq!(a[0], 5.0);
        assert_eq!(a[1], 0.0);
        assert!((a[2] - 2.0f32.sqrt()).abs() < 1e-7);
        for (s, v) in r.subcarriers.iter().zip(&a) {
            let lhs = (*v as f64) * (*v as f64);
            let rhs = (s.re as f64) * (s.re as f64) + (s.im as f64) * (s.im as f64);
            assert!((lhs - rhs).abs() <= 1e-6 * rhs.max(1e-12));
        }
    }

    #[test]
    fn phase_axes_and_branch_cut() {
        let r = record(0, 0, |i| match i {
            0 => (1.0, 0.0),
            1 => (0.0, 1.0),
            2 => (-1.0, 0.0),
            _ => (0.0, 0.0),
        });
        let p = r.phase();
        assert_eq!(p[0], 0.0);
        assert!((p[1] - std::f32::consts::FRAC_PI_2).abs() < 1e-7);
        assert_eq!(p[2], std::f32::consts::PI);
        assert_eq!(p[3], 0.0);
    }

    #[test]
    fn windows_constant_signal() {
        let records = constant_stream(10_000, 1.0);
        let windows = build_windows(&records, RATE_HZ).unwrap();
        assert_eq!(windows.len(), 1);
        assert_eq!(windows[0].data.shape(), &[10_000, 60]);
        assert_eq!(windows[0].start_us, 0);
        assert!(windows[0].data.data().iter().all(|v| *v == 1.0));
    }

    #[test]
    fn windows_drop_trailing_remainder() {
        let records = constant_stream(25_000, 2.0);
        let windows = build_windows(&records, RATE_HZ).unwrap();
        assert_eq!(windows.len(), 2);
        assert_eq!(windows[1].start_us, 10_000_000);
    }

    #[test]
    fn windows_missing_pair_and_empty() {
        let records: Vec<CsiRecord> = (0..10_000)
            .map(|k| record(k * 1000, 0, |_| (1.0, 0.0)))
            .collect();
        assert!(matches!(
            build_windows(&records, RATE_HZ),
            Err(IngestError::MissingPair(1))
        ));
        assert!(matches!(
            build_windows(&[], RATE_HZ),
            Err(IngestError::EmptyInput)
        ));
    }

    #[test]
    fn windows_interpolate_between_records() {
        // Pair records every 2 ms ramping 0→20; the 1 ms grid midpoints land
        // exactly between neighbors.
        let mut records = Vec::new();
        for k in 0..=10_000u64 {
            for pair in 0..PAIRS as u8 {
                records.push(record(k * 2000, pair, |_| (k as f32, 0.0)));
            }
        }
        let windows = build_windows(&records, RATE_HZ).unwrap();
        assert_eq!(windows.len(), 2);
        let d = &windows[0].data;
        assert_eq!(d.row(0)[0], 0.0);
        assert_eq!(d.row(1)[0], 0.5);
        assert_eq!(d.row(2)[0], 1.0);
        assert_eq!(d.row(3)[30], 1.5);
    }

    #[test]
    fn windows_pair1_owns_upper_columns() {
        let base = constant_stream(10_000, 1.0);
        let mut bumped = base.clone();
        for r in bumped.iter_mut().filter(|r| r.pair_id == 1) {
            for s in r.subcarriers.iter_mut() {
                s.re += 1.0;
            }
        }
        let w0 = &build_windows(&base, RATE_HZ).unwrap()[0];
        let w1 = &build_windows(&bumped, RATE_HZ).unwrap()[0];
        for row in 0..w0.data.shape()[0] {
            let (a, b) = (w0.data.row(row), w1.data.row(row));
            assert_eq!(a[..30], b[..30]);
            assert!(a[30..].iter().zip(&b[30..]).all(|(x, y)| *y == *x + 1.0));
        }
    }

    #[test]
    fn downsample_constant_and_ramp() {
        let constant = RawWindow {
            data: Tensor::filled(&[10_000, 60], 7.0),
            start_us: 0,
        };
        let down = downsample(&constant, DOWNSAMPLE_FACTOR).unwrap();
        assert_eq!(down.shape(), &[500, 60]);
        assert!(down.data().iter().all(|v| *v == 7.0));

        let mut ramp = vec![0.0f32; 40 * 60];
        for r in 0..20 {
            for c in 0..60 {
                ramp[r * 60 + c] = r as f32;
            }
        }
        let window = RawWindow {
            data: Tensor::from_vec(&[40, 60], ramp).unwrap(),
            start_us: 0,
        };
        let down = downsample(&window, 20).unwrap();
        assert_eq!(down.row(0)[0], 9.5);
        assert_eq!(down.row(1)[0], 0.0);
    }

    #[test]
    fn downsample_rejects_indivisible_rows() {
        let window = RawWindow {
            data: Tensor::zeros(&[30, 4]),
            start_us: 0,
        };
        assert!(matches!(
            downsample(&window, 20),
            Err(IngestError::BadFactor { rows: 30, factor: 20 })
        ));
    }

    #[test]
    fn downsample_is_linear_and_mean_preserving() {
        let mut x = vec![0.0f32; 40 * 6];
        let mut y = vec![0.0f32; 40 * 6];
        for (i, (xv, yv)) in x.iter_mut().zip(y.iter_mut()).enumerate() {
            *xv = (i as f32 * 0.37).sin();
            *yv = (i as f32 * 0.11).cos();
        }
        let wx = RawWindow { data: Tensor::from_vec(&[40, 6], x.clone()).unwrap(), start_us: 0 };
        let wy = RawWindow { data: Tensor::from_vec(&[40, 6], y.clone()).unwrap(), start_us: 0 };
        let combo: Vec<f32> = x.iter().zip(&y).map(|(a, b)| 2.0 * a - 3.0 * b).collect();
        let wc = RawWindow { data: Tensor::from_vec(&[40, 6], combo).unwrap(), start_us: 0 };

        let dx = downsample(&wx, 10).unwrap();
        let dy = downsample(&wy, 10).unwrap();
        let dc = downsample(&wc, 10).unwrap();
        for ((a, b), c) in dx.data().iter().zip(dy.data()).zip(dc.data()) {
            let expect = 2.0 * *a - 3.0 * *b;
            assert!((c - expect).abs() <= 1e-5 * expect.abs().max(1.0));
        }

        // Per-column global mean survives decimation.
        for c in 0..6 {
            let before: f64 = (0..40).map(|r| x[r * 6 + c] as f64).sum::<f64>() / 40.0;
            let after: f64 = (0..4).map(|r| dx.row(r)[c] as f64).sum::<f64>() / 4.0;
            assert!((before - after).abs() <= 1e-6 * before.abs().max(1e-6));
        }
    }

    #[test]
    fn sample_validation() {
        let t = Tensor::zeros(&[4, 6]);
        assert!(Sample::new(t.clone(), 2, 0).is_err());
        let nan = Tensor::from_vec(&[1, 2], vec![f32::NAN, 0.0]).unwrap();
        assert!(Sample::new(nan, 0, 0).is_err());
        let s = Sample::new(t, 1, 3).unwrap();
        assert_eq!((s.label(), s.domain_id(), s.rows(), s.cols()), (1, 3, 4, 6));
        assert!(!s.is_canonical_shape());
    }

    #[test]
    fn sample_file_round_trip() {
        let data = Tensor::from_vec(&[2, 3], vec![0.0, 1.5, -2.25, 3.0, 4.5, 6.75]).unwrap();
        let sample = Sample::new(data, 1, 7).unwrap();
        let mut bytes = Vec::new();
        write_sample(&mut bytes, &sample).unwrap();
        let parsed = read_sample(bytes.as_slice()).unwrap();
        assert_eq!(parsed, sample);

        let mut again = Vec::new();
        write_sample(&mut again, &parsed).unwrap();
        assert_eq!(bytes, again);

        bytes.push(0);
        assert!(matches!(
            read_sample(bytes.as_slice()),
            Err(IngestError::TrailingBytes(1))
        ));
    }

    fn record_strategy() -> impl Strategy<Value = CsiRecord> {
        (
            any::<u64>(),
            0u8..=1,
            prop::collection::vec((-1e6f32..1e6, -1e6f32..1e6), SUBCARRIERS),
        )
            .prop_map(|(ts, pair, subs)| {
                let mut subcarriers = [Subcarrier::default(); SUBCARRIERS];
                for (s, (re, im)) in subcarriers.iter_mut().zip(subs) {
                    *s = Subcarrier { re, im };
                }
                CsiRecord {
                    timestamp_us: ts,
                    pair_id: pair,
                    subcarriers,
                }
            })
    }

    proptest! {
        #[test]
        fn stream_round_trip(records in prop::collection::vec(record_strategy(), 0..20)) {
            let bytes = encode_record_stream(&records);
            let parsed = parse_record_stream(&bytes).unwrap();
            prop_assert_eq!(&parsed, &records);
            prop_assert_eq!(encode_record_stream(&parsed), bytes);
        }
    }
}
