//! Line-oriented experiment configuration.
//!
//! Format: one `key = value` per line; blank lines and lines starting with
//! `#` are ignored. Unknown and duplicate keys are hard errors, with line
//! numbers in the message.
//!
//! Keys (all optional unless noted):
//!
//! | key                      | default        | meaning                                   |
//! |--------------------------|----------------|-------------------------------------------|
//! | `model`                  | `cnn`          | `cnn` or `lstm`                           |
//! | `profile`                | `reduced`      | `reduced` or `full` architecture dims     |
//! | `data_dir`               | none           | directory of `.csiw` samples; excludes synth keys |
//! | `synth_domains`          | `10`           | number of synthetic domains (ids 0..n)    |
//! | `synth_per_domain`       | `12`           | samples generated per domain              |
//! | `synth_fall_fraction`    | `0.5`          | fraction of fall labels per domain        |
//! | `synth_duration_s`       | `2.0`          | time span per sample (reduced profile only) |
//! | `holdout`                | `0`            | domain id evaluated as test               |
//! | `seed`                   | `0`            | master seed: data synthesis uses it directly, the split uses a derived stream, member `i` trains with `seed + i` |
//! | `rho_grid`               | `0.001,0.01,0.1,1,4` | comma-separated positive increasing radii |
//! | `gamma_rule`             | `inverse_rho`  | `inverse_rho` or `fixed:<float>`          |
//! | `k`                      | `100`          | augmentation rounds                       |
//! | `t_adv`                  | `15`           | ascent steps per round                    |
//! | `eta_adv`                | `1.0`          | ascent step size                          |
//! | `t_min`                  | `100`          | SGD steps per round                       |
//! | `lr`                     | `0.001`        | SGD learning rate                         |
//! | `batch`                  | `32`           | mini-batch size                           |
//! | `epochs_warmup`          | `1`            | pure-minimization epochs before round 1   |
//! | `domain.<id>.gain`       | per-id default | synthesis override                        |
//! | `domain.<id>.noise_std`  | per-id default | synthesis override                        |
//! | `domain.<id>.burst_freq_hz` | per-id default | synthesis override                     |
//! | `domain.<id>.smoothing`  | per-id default | synthesis override                        |

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use crate::models::{CnnConfig, LstmConfig, ModelConfig};
use crate::synth::{default_domain_params, DomainParams};
use crate::train::{GammaRule, TrainConfig};

use super::HarnessError;

#[derive(Debug, Clone)]
pub struct SynthSpec {
    /// Fully resolved per-domain parameters, ids `0..n` in order.
    pub domains: Vec<DomainParams>,
    pub per_domain: usize,
    pub fall_fraction: f64,
    pub duration_s: f64,
}

#[derive(Debug, Clone)]
pub enum DataSpec {
    Dir(PathBuf),
    Synth(SynthSpec),
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub data: DataSpec,
    pub holdout: u16,
    pub seed: u64,
    pub train: TrainConfig,
}

fn err(line: usize, message: impl Into<String>) -> HarnessError {
    HarnessError::Config {
        line,
        message: message.into(),
    }
}

/// Key/value lines with duplicate detection, preserving line numbers.
struct KeyTable {
    entries: BTreeMap<String, (usize, String)>,
}

impl KeyTable {
    fn parse(text: &str) -> Result<KeyTable, HarnessError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(err(line_no, format!("expected `key = value`, got `{line}`")));
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                return Err(err(line_no, "empty key"));
            }
            if let Some((first, _)) = entries.get(&key) {
                return Err(err(
                    line_no,
                    format!("duplicate key `{key}` (first set on line {first})"),
                ));
            }
            entries.insert(key, (line_no, value));
        }
        Ok(KeyTable { entries })
    }

    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.entries.remove(key)
    }

    fn take_parsed<T: FromStr>(&mut self, key: &str, default: T) -> Result<T, HarnessError> {
        match self.take(key) {
            None => Ok(default),
            Some((line, value)) => value
                .parse::<T>()
                .map_err(|_| err(line, format!("cannot parse `{value}` as value of `{key}`"))),
        }
    }
}

fn parse_rho_grid(line: usize, value: &str) -> Result<Vec<f64>, HarnessError> {
    value
        .split(',')
        .map(|part| {
            part.trim()
                .parse::<f64>()
                .map_err(|_| err(line, format!("bad rho value `{}`", part.trim())))
        })
        .collect()
}

fn parse_gamma_rule(line: usize, value: &str) -> Result<GammaRule, HarnessError> {
    if value == "inverse_rho" {
        return Ok(GammaRule::InverseRho);
    }
    if let Some(rest) = value.strip_prefix("fixed:") {
        let g: f64 = rest
            .trim()
            .parse()
            .map_err(|_| err(line, format!("bad fixed gamma `{rest}`")))?;
        if !(g >= 0.0 && g.is_finite()) {
            return Err(err(line, "fixed gamma must be non-negative"));
        }
        return Ok(GammaRule::Fixed(g));
    }
    Err(err(
        line,
        format!("gamma_rule must be `inverse_rho` or `fixed:<float>`, got `{value}`"),
    ))
}

/// Splits `domain.<id>.<field>` keys out of the table.
fn take_domain_overrides(
    table: &mut KeyTable,
) -> Result<BTreeMap<u16, Vec<(usize, String, f64)>>, HarnessError> {
    let keys: Vec<String> = table
        .entries
        .keys()
        .filter(|k| k.starts_with("domain."))
        .cloned()
        .collect();
    let mut overrides: BTreeMap<u16, Vec<(usize, String, f64)>> = BTreeMap::new();
    for key in keys {
        let (line, value) = table.take(&key).expect("key listed above");
        let mut parts = key.splitn(3, '.');
        parts.next();
        let (Some(id_str), Some(field)) = (parts.next(), parts.next()) else {
            return Err(err(line, format!("expected `domain.<id>.<field>`, got `{key}`")));
        };
        let id: u16 = id_str
            .parse()
            .map_err(|_| err(line, format!("bad domain id `{id_str}`")))?;
        let v: f64 = value
            .parse()
            .map_err(|_| err(line, format!("cannot parse `{value}` as number")))?;
        overrides
            .entry(id)
            .or_default()
            .push((line, field.to_string(), v));
    }
    Ok(overrides)
}

fn apply_override(
    params: &mut DomainParams,
    line: usize,
    field: &str,
    value: f64,
) -> Result<(), HarnessError> {
    match field {
        "gain" => params.gain = value as f32,
        "noise_std" => params.noise_std = value as f32,
        "burst_freq_hz" => params.burst_freq_hz = value as f32,
        "smoothing" => params.smoothing = value as f32,
        other => return Err(err(line, format!("unknown domain field `{other}`"))),
    }
    Ok(())
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, HarnessError> {
    let mut table = KeyTable::parse(text)?;

    let model_kind = match table.take("model") {
        None => "cnn".to_string(),
        Some((line, v)) => match v.as_str() {
            "cnn" | "lstm" => v,
            other => return Err(err(line, format!("model must be `cnn` or `lstm`, got `{other}`"))),
        },
    };
    let (profile, profile_line) = match table.take("profile") {
        None => ("reduced".to_string(), 0),
        Some((line, v)) => match v.as_str() {
            "reduced" | "full" => (v, line),
            other => {
                return Err(err(
                    line,
                    format!("profile must be `reduced` or `full`, got `{other}`"),
                ))
            }
        },
    };
    let model = match (model_kind.as_str(), profile.as_str()) {
        ("cnn", "full") => ModelConfig::Cnn(CnnConfig::default()),
        ("cnn", "reduced") => ModelConfig::Cnn(CnnConfig::reduced()),
        ("lstm", "full") => ModelConfig::Lstm(LstmConfig::default()),
        ("lstm", "reduced") => ModelConfig::Lstm(LstmConfig::reduced()),
        _ => unreachable!("values validated above"),
    };

    let data_dir = table.take("data_dir");
    let overrides = take_domain_overrides(&mut table)?;

    let synth_domains_entry = table.take("synth_domains");
    let synth_per_domain_entry = table.take("synth_per_domain");
    let synth_fall_entry = table.take("synth_fall_fraction");
    let synth_duration_entry = table.take("synth_duration_s");

    let data = if let Some((dir_line, dir)) = data_dir {
        for entry in [
            &synth_domains_entry,
            &synth_per_domain_entry,
            &synth_fall_entry,
            &synth_duration_entry,
        ]
        .into_iter()
        .flatten()
        {
            return Err(err(
                entry.0,
                "synth_* keys conflict with data_dir (set one or the other)",
            ));
        }
        if let Some(entries) = overrides.values().next() {
            return Err(err(
                entries[0].0,
                "domain.* overrides apply to synthesis, not data_dir",
            ));
        }
        if dir.is_empty() {
            return Err(err(dir_line, "data_dir must not be empty"));
        }
        DataSpec::Dir(PathBuf::from(dir))
    } else {
        let n_domains: u16 = match synth_domains_entry {
            None => 10,
            Some((line, v)) => {
                let n: u16 = v
                    .parse()
                    .map_err(|_| err(line, format!("bad synth_domains `{v}`")))?;
                if n < 2 {
                    return Err(err(line, "synth_domains must be at least 2"));
                }
                n
            }
        };
        let per_domain: usize = match synth_per_domain_entry {
            None => 12,
            Some((line, v)) => {
                let n: usize = v
                    .parse()
                    .map_err(|_| err(line, format!("bad synth_per_domain `{v}`")))?;
                if n == 0 {
                    return Err(err(line, "synth_per_domain must be positive"));
                }
                n
            }
        };
        let fall_fraction: f64 = match synth_fall_entry {
            None => 0.5,
            Some((line, v)) => {
                let f: f64 = v
                    .parse()
                    .map_err(|_| err(line, format!("bad synth_fall_fraction `{v}`")))?;
                if !(0.0..=1.0).contains(&f) {
                    return Err(err(line, "synth_fall_fraction must be in [0, 1]"));
                }
                f
            }
        };
        let duration_s: f64 = match synth_duration_entry {
            None => 2.0,
            Some((line, v)) => {
                if profile == "full" {
                    return Err(err(
                        line,
                        "synth_duration_s applies to the reduced profile; the full profile always spans one 10 s window",
                    ));
                }
                let d: f64 = v
                    .parse()
                    .map_err(|_| err(line, format!("bad synth_duration_s `{v}`")))?;
                if !(d > 0.0 && d.is_finite()) {
                    return Err(err(line, "synth_duration_s must be positive"));
                }
                d
            }
        };
        let _ = profile_line;

        let mut domains: Vec<DomainParams> =
            (0..n_domains).map(default_domain_params).collect();
        for (id, fields) in &overrides {
            let Some(params) = domains.get_mut(*id as usize) else {
                return Err(err(
                    fields[0].0,
                    format!("domain {id} out of range (synth_domains = {n_domains})"),
                ));
            };
            for (line, field, value) in fields {
                apply_override(params, *line, field, *value)?;
            }
        }
        for params in &domains {
            if let Err(e) = params.validate() {
                return Err(err(0, format!("invalid domain {}: {e}", params.domain_id)));
            }
        }
        DataSpec::Synth(SynthSpec {
            domains,
            per_domain,
            fall_fraction,
            duration_s,
        })
    };

    let holdout: u16 = table.take_parsed("holdout", 0)?;
    let seed: u64 = table.take_parsed("seed", 0)?;

    let defaults = TrainConfig::default();
    let rho_grid = match table.take("rho_grid") {
        None => defaults.rho_grid.clone(),
        Some((line, v)) => parse_rho_grid(line, &v)?,
    };
    let gamma_rule = match table.take("gamma_rule") {
        None => defaults.gamma_rule,
        Some((line, v)) => parse_gamma_rule(line, &v)?,
    };
    let train = TrainConfig {
        rho_grid,
        gamma_rule,
        k: table.take_parsed("k", defaults.k)?,
        t_adv: table.take_parsed("t_adv", defaults.t_adv)?,
        eta_adv: table.take_parsed("eta_adv", defaults.eta_adv)?,
        t_min: table.take_parsed("t_min", defaults.t_min)?,
        lr: table.take_parsed("lr", defaults.lr)?,
        batch: table.take_parsed("batch", defaults.batch)?,
        epochs_warmup: table.take_parsed("epochs_warmup", defaults.epochs_warmup)?,
        seed,
    };
    train.validate()?;

    if let Some((key, (line, _))) = table.entries.iter().next() {
        return Err(err(*line, format!("unknown key `{key}`")));
    }

    Ok(ExperimentConfig {
        model,
        data,
        holdout,
        seed,
        train,
    })
}
