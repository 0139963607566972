//! Deterministic labeled CSI synthesis.
//!
//! The signal model is deliberately simple: a slow per-subcarrier sinusoid
//! as the no-event baseline, plus a decaying oscillatory burst in the second
//! half of the window when a fall happens. Domains shift gain, noise,
//! burst frequency, and multipath smoothing, so the label stays learnable
//! by a small network while the domain gap is fully controllable.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::ingest::{
    self, CsiRecord, IngestError, Sample, Subcarrier, PAIRS, RATE_HZ, SUBCARRIERS,
};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid domain params: {0}")]
    InvalidParams(&'static str),
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

/// Per-domain signal shape. Stands in for distinct rooms/subjects.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainParams {
    pub domain_id: u16,
    /// Multiplicative amplitude scale, > 0.
    pub gain: f32,
    /// Additive Gaussian noise, ≥ 0.
    pub noise_std: f32,
    /// Fall-event oscillation frequency, > 0.
    pub burst_freq_hz: f32,
    /// First-order low-pass coefficient in [0, 1).
    pub smoothing: f32,
}

impl DomainParams {
    pub fn validate(&self) -> Result<(), SynthError> {
        if !(self.gain > 0.0 && self.gain.is_finite()) {
            return Err(SynthError::InvalidParams("gain must be positive"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(SynthError::InvalidParams("noise_std must be non-negative"));
        }
        if !(self.burst_freq_hz > 0.0 && self.burst_freq_hz.is_finite()) {
            return Err(SynthError::InvalidParams("burst_freq_hz must be positive"));
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            return Err(SynthError::InvalidParams("smoothing must be in [0, 1)"));
        }
        Ok(())
    }
}

/// A spread of distinguishable domains: five environments crossed with two
/// capture subsets, mirrored by `domain_id = subset·5 + environment`.
pub fn default_domain_params(domain_id: u16) -> DomainParams {
    let environment = (domain_id % 5) as f32;
    let subset = ((domain_id / 5) % 2) as f32;
    DomainParams {
        domain_id,
        gain: 1.0 + 0.3 * environment,
        noise_std: 0.02 + 0.02 * subset,
        burst_freq_hz: 5.0 + 1.5 * environment,
        smoothing: 0.05 * environment + 0.2 * subset,
    }
}

/// splitmix64 finalizer; stateless seed derivation for nested streams.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derives an independent seed from a root seed and a path of indices.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    let mut acc = mix(seed);
    for p in path {
        acc = mix(acc ^ mix(*p));
    }
    acc
}

/// One standard normal via Box–Muller (cosine branch only, so consumption
/// is exactly two uniforms per draw).
fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Noise-free signal value for channel `channel` at time `t` seconds.
/// Everything scales multiplicatively with gain, so doubling the gain
/// doubles every emitted value bit-exactly when noise is off.
fn clean_signal(params: &DomainParams, label: u8, t: f64, t0: f64, channel: usize) -> f64 {
    let gain = params.gain as f64;
    let mut v = 1.0 + 0.1 * (std::f64::consts::TAU * 0.5 * t + channel as f64).sin();
    if label == 1 && t >= t0 {
        let decay = (-(t - t0) / 0.5).exp();
        v += decay * (std::f64::consts::TAU * params.burst_freq_hz as f64 * t).sin();
    }
    gain * v
}

/// Emits both antenna pairs at 1000 Hz for `duration_s` seconds, amplitudes
/// stored in the real component. Per time step the draw order is
/// (pair, subcarrier); the low-pass filter runs per channel, seeded with the
/// channel's first value. Deterministic in all arguments.
pub fn generate_stream(
    params: &DomainParams,
    label: u8,
    duration_s: f64,
    seed: u64,
) -> Vec<CsiRecord> {
    debug_assert!(params.validate().is_ok());
    debug_assert!(label <= 1);
    debug_assert!(duration_s > 0.0);

    let steps = (duration_s * RATE_HZ as f64).round() as usize;
    let t0 = duration_s / 2.0;
    let period_us = (1_000_000 / RATE_HZ) as u64;
    let noise = params.noise_std as f64;
    let smoothing = params.smoothing as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = [[0.0f64; SUBCARRIERS]; PAIRS];

    let mut records = Vec::with_capacity(steps * PAIRS);
    for k in 0..steps {
        let t = k as f64 / RATE_HZ as f64;
        for pair in 0..PAIRS {
            let mut subcarriers = [Subcarrier::default(); SUBCARRIERS];
            for (i, s) in subcarriers.iter_mut().enumerate() {
                let mut x = clean_signal(params, label, t, t0, i);
                if noise > 0.0 {
                    x += noise * standard_normal(&mut rng);
                }
                let y = if k == 0 {
                    x
                } else {
                    smoothing * state[pair][i] + (1.0 - smoothing) * x
                };
                state[pair][i] = y;
                *s = Subcarrier { re: y as f32, im: 0.0 };
            }
            records.push(CsiRecord {
                timestamp_us: k as u64 * period_us,
                pair_id: pair as u8,
                subcarriers,
            });
        }
    }
    records
}

/// Label for sample `index` of a domain: the first `round(fraction·n)`
/// samples fall, the rest do not.
pub fn label_for(index: usize, per_domain: usize, fall_fraction: f64) -> u8 {
    let falls = (fall_fraction * per_domain as f64).round() as usize;
    u8::from(index < falls)
}

/// Full-scale dataset: per sample, a 10-second stream is generated, windowed,
/// and block-mean decimated to 500×60. Deterministic in `seed` regardless of
/// caller threading.
pub fn generate_dataset(
    domains: &[DomainParams],
    per_domain: usize,
    fall_fraction: f64,
    seed: u64,
) -> Result<Vec<Sample>, SynthError> {
    if !(0.0..=1.0).contains(&fall_fraction) {
        return Err(SynthError::InvalidParams("fall_fraction must be in [0, 1]"));
    }
    let mut samples = Vec::with_capacity(domains.len() * per_domain);
    for (d, params) in domains.iter().enumerate() {
        params.validate()?;
        for j in 0..per_domain {
            let label = label_for(j, per_domain, fall_fraction);
            let stream_seed = derive_seed(seed, &[d as u64, j as u64]);
            let records = generate_stream(params, label, ingest::WINDOW_SECS as f64, stream_seed);
            let windows = ingest::build_windows(&records, RATE_HZ)?;
            let matrix = ingest::downsample(&windows[0], ingest::DOWNSAMPLE_FACTOR)?;
            samples.push(Sample::new(matrix, label, params.domain_id)?);
        }
    }
    Ok(samples)
}

/// Scaled-down sample on an arbitrary `rows × cols` grid spanning
/// `duration_s` seconds, same signal model with one channel per column.
/// Used wherever full 500×60 matrices would be needlessly slow.
pub fn generate_matrix(
    params: &DomainParams,
    label: u8,
    rows: usize,
    cols: usize,
    duration_s: f64,
    seed: u64,
) -> Result<Sample, SynthError> {
    params.validate()?;
    debug_assert!(label <= 1);
    debug_assert!(rows > 1 && cols > 0 && duration_s > 0.0);

    let t0 = duration_s / 2.0;
    let noise = params.noise_std as f64;
    let smoothing = params.smoothing as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = vec![0.0f64; cols];
    let mut data = vec![0.0f32; rows * cols];
    for r in 0..rows {
        let t = duration_s * r as f64 / rows as f64;
        for c in 0..cols {
            let mut x = clean_signal(params, label, t, t0, c);
            if noise > 0.0 {
                x += noise * standard_normal(&mut rng);
            }
            let y = if r == 0 {
                x
            } else {
                smoothing * state[c] + (1.0 - smoothing) * x
            };
            state[c] = y;
            data[r * cols + c] = y as f32;
        }
    }
    let tensor = Tensor::from_vec(&[rows, cols], data).expect("matrix shape");
    Ok(Sample::new(tensor, label, params.domain_id)?)
}

/// Scaled-down counterpart of `generate_dataset` with the same per-domain
/// counting, labeling, and seed-derivation scheme.
pub fn generate_matrix_dataset(
    domains: &[DomainParams],
    per_domain: usize,
    fall_fraction: f64,
    rows: usize,
    cols: usize,
    duration_s: f64,
    seed: u64,
) -> Result<Vec<Sample>, SynthError> {
    if !(0.0..=1.0).contains(&fall_fraction) {
        return Err(SynthError::InvalidParams("fall_fraction must be in [0, 1]"));
    }
    let mut samples = Vec::with_capacity(domains.len() * per_domain);
    for (d, params) in domains.iter().enumerate() {
        for j in 0..per_domain {
            let label = label_for(j, per_domain, fall_fraction);
            let sample_seed = derive_seed(seed, &[d as u64, j as u64]);
            samples.push(generate_matrix(params, label, rows, cols, duration_s, sample_seed)?);
        }
    }
    Ok(samples)
}
