//! Leave-one-domain-out experiments: splitting, metrics, model selection,
//! report and checkpoint persistence.

mod config;

pub use config::{parse_config, DataSpec, ExperimentConfig, SynthSpec};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::autodiff::{DiffError, Tensor};
use crate::ingest::{self, IngestError, Sample};
use crate::models::{self, ModelConfig, ModelError, ModelState};
use crate::synth::{self, derive_seed, SynthError};
use crate::train::{self, Ensemble, TrainError};

/// Accuracies reported for the full-scale counterpart of this setup. They
/// give report readers a sense of scale; nothing is asserted against them.
pub const FULL_SCALE_REFERENCE_ACCURACY: [(&str, f64); 3] = [
    ("cnn_ada rho=0.001", 0.6412),
    ("lstm_ada rho=4", 0.6603),
    ("vada", 0.527),
];

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("unknown holdout domain {0}")]
    UnknownDomain(u16),
    #[error("need at least two distinct domains")]
    SingleDomain,
    #[error("empty evaluation set")]
    EmptySet,
    #[error("empty ensemble")]
    EmptyEnsemble,
    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: io::Error,
    },
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

fn io_err(path: &Path, source: io::Error) -> HarnessError {
    HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One leave-one-domain-out arrangement. The validation set is carved from
/// the training domains only, so the held-out domain stays unseen end to end.
#[derive(Debug)]
pub struct LodoSplit {
    pub train: Vec<Sample>,
    pub validation: Vec<Sample>,
    pub test: Vec<Sample>,
    pub holdout_id: u16,
}

/// Deterministic split: all samples of `holdout_id` become test; the rest are
/// grouped by (domain, label) and each group yields `ceil(n/10)` validation
/// samples (a 10% fraction, rounded up so small groups still contribute),
/// chosen by a seeded shuffle.
pub fn lodo_split(
    samples: Vec<Sample>,
    holdout_id: u16,
    seed: u64,
) -> Result<LodoSplit, HarnessError> {
    let domains: BTreeSet<u16> = samples.iter().map(|s| s.domain_id()).collect();
    if domains.len() < 2 {
        return Err(HarnessError::SingleDomain);
    }
    if !domains.contains(&holdout_id) {
        return Err(HarnessError::UnknownDomain(holdout_id));
    }

    let mut test = Vec::new();
    let mut groups: BTreeMap<(u16, u8), Vec<Sample>> = BTreeMap::new();
    for s in samples {
        if s.domain_id() == holdout_id {
            test.push(s);
        } else {
            groups.entry((s.domain_id(), s.label())).or_default().push(s);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut validation = Vec::new();
    for (_, mut group) in groups {
        let take = group.len().div_ceil(10);
        let mut order: Vec<usize> = (0..group.len()).collect();
        order.shuffle(&mut rng);
        let chosen: BTreeSet<usize> = order[..take].iter().copied().collect();
        for (i, s) in group.drain(..).enumerate() {
            if chosen.contains(&i) {
                validation.push(s);
            } else {
                train.push(s);
            }
        }
    }

    Ok(LodoSplit {
        train,
        validation,
        test,
        holdout_id,
    })
}

/// Binary classification tallies for one model on one sample set. Label 1
/// (fall) is the positive class. Precision and false-alarm rate use the
/// convention 0/0 = 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalRow {
    pub accuracy: f64,
    pub precision: f64,
    pub false_alarm: f64,
    pub true_positives: usize,
    pub true_negatives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

impl EvalRow {
    fn from_counts(tp: usize, tn: usize, fp: usize, fn_: usize) -> EvalRow {
        let total = tp + tn + fp + fn_;
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        EvalRow {
            accuracy: ratio(tp + tn, total),
            precision: ratio(tp, tp + fp),
            false_alarm: ratio(fp, fp + tn),
            true_positives: tp,
            true_negatives: tn,
            false_positives: fp,
            false_negatives: fn_,
        }
    }

    pub fn total(&self) -> usize {
        self.true_positives + self.true_negatives + self.false_positives + self.false_negatives
    }
}

fn tally<F: FnMut(&Sample) -> Result<u8, DiffError>>(
    samples: &[Sample],
    mut predict: F,
) -> Result<EvalRow, HarnessError> {
    if samples.is_empty() {
        return Err(HarnessError::EmptySet);
    }
    let (mut tp, mut tn, mut fp, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for s in samples {
        let pred = predict(s)?;
        if s.label() == 1 {
            if pred == 1 {
                tp += 1;
            } else {
                fn_ += 1;
            }
        } else if pred == 0 {
            tn += 1;
        } else {
            fp += 1;
        }
    }
    Ok(EvalRow::from_counts(tp, tn, fp, fn_))
}

/// Argmax-of-logits predictions tallied over `samples`.
pub fn evaluate(state: &ModelState, samples: &[Sample]) -> Result<EvalRow, HarnessError> {
    tally(samples, |s| models::predict(state, s.data()))
}

/// Index of the maximum, first occurrence on ties. Invariant under any
/// strictly increasing transform applied to all values.
fn argmax_tie_smallest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SelectedModel {
    pub index: usize,
    pub validation_accuracy: f64,
}

/// Picks the member with maximum validation accuracy; ties resolve to the
/// smallest radius index.
pub fn select_model(
    ensemble: &Ensemble,
    validation: &[Sample],
) -> Result<SelectedModel, HarnessError> {
    if ensemble.members.is_empty() {
        return Err(HarnessError::EmptyEnsemble);
    }
    let mut accuracies = Vec::with_capacity(ensemble.members.len());
    for member in &ensemble.members {
        accuracies.push(evaluate(&member.state, validation)?.accuracy);
    }
    let index = argmax_tie_smallest(&accuracies);
    Ok(SelectedModel {
        index,
        validation_accuracy: accuracies[index],
    })
}

/// Majority vote over per-model predictions; ties resolve to the smallest
/// label, i.e. class 0 for binary labels.
pub fn majority_vote(states: &[&ModelState], input: &Tensor) -> Result<u8, HarnessError> {
    if states.is_empty() {
        return Err(HarnessError::EmptyEnsemble);
    }
    let mut counts: BTreeMap<u8, usize> = BTreeMap::new();
    for state in states {
        *counts.entry(models::predict(state, input)?).or_insert(0) += 1;
    }
    let best = counts.values().copied().max().expect("non-empty counts");
    Ok(*counts
        .iter()
        .find(|(_, c)| **c == best)
        .expect("non-empty counts")
        .0)
}

pub fn ensemble_vote(ensemble: &Ensemble, input: &Tensor) -> Result<u8, HarnessError> {
    let states: Vec<&ModelState> = ensemble.members.iter().map(|m| &m.state).collect();
    majority_vote(&states, input)
}

/// Majority-vote predictions tallied over `samples`.
pub fn evaluate_vote(ensemble: &Ensemble, samples: &[Sample]) -> Result<EvalRow, HarnessError> {
    if ensemble.members.is_empty() {
        return Err(HarnessError::EmptyEnsemble);
    }
    let states: Vec<&ModelState> = ensemble.members.iter().map(|m| &m.state).collect();
    tally(samples, |s| {
        majority_vote(&states, s.data()).map_err(|e| match e {
            HarnessError::Diff(d) => d,
            _ => unreachable!("non-empty ensemble"),
        })
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MemberReport {
    pub index: usize,
    pub rho: f64,
    pub gamma: f64,
    pub seed: u64,
    pub test: EvalRow,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub holdout_id: u16,
    pub test_size: usize,
    pub members: Vec<MemberReport>,
    pub selected: SelectedModel,
    pub vote: EvalRow,
}

impl EvalReport {
    pub fn selected_test_accuracy(&self) -> f64 {
        self.members[self.selected.index].test.accuracy
    }
}

/// Plain-text table: one row per member, then the selection and vote lines
/// and an informational full-scale footer. Fixed formatting keeps identical
/// runs byte-identical.
pub fn report_text(report: &EvalReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "holdout={} test_size={}",
        report.holdout_id, report.test_size
    );
    let _ = writeln!(out, "rho\tgamma\taccuracy\tprecision\tfalse_alarm\ttp\ttn\tfp\tfn");
    for m in &report.members {
        let _ = writeln!(
            out,
            "{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{}\t{}\t{}\t{}",
            m.rho,
            m.gamma,
            m.test.accuracy,
            m.test.precision,
            m.test.false_alarm,
            m.test.true_positives,
            m.test.true_negatives,
            m.test.false_positives,
            m.test.false_negatives
        );
    }
    let _ = writeln!(
        out,
        "selected: index={} rho={:.4} validation_accuracy={:.4} test_accuracy={:.4}",
        report.selected.index,
        report.members[report.selected.index].rho,
        report.selected.validation_accuracy,
        report.selected_test_accuracy()
    );
    let _ = writeln!(
        out,
        "ensemble_vote: accuracy={:.4} precision={:.4} false_alarm={:.4}",
        report.vote.accuracy, report.vote.precision, report.vote.false_alarm
    );
    let refs: Vec<String> = FULL_SCALE_REFERENCE_ACCURACY
        .iter()
        .map(|(name, acc)| format!("{name} {:.2}%", acc * 100.0))
        .collect();
    let _ = writeln!(
        out,
        "# full-scale reference accuracies (informational): {}",
        refs.join(" | ")
    );
    out
}

/// Machine-readable variant: one JSON object per member row, then one
/// summary object.
pub fn report_jsonl(report: &EvalReport) -> String {
    #[derive(Serialize)]
    struct Summary<'a> {
        holdout_id: u16,
        test_size: usize,
        selected: &'a SelectedModel,
        selected_test_accuracy: f64,
        vote: &'a EvalRow,
    }
    let mut out = String::new();
    for m in &report.members {
        out.push_str(&serde_json::to_string(m).expect("report rows serialize"));
        out.push('\n');
    }
    let summary = Summary {
        holdout_id: report.holdout_id,
        test_size: report.test_size,
        selected: &report.selected,
        selected_test_accuracy: report.selected_test_accuracy(),
        vote: &report.vote,
    };
    out.push_str(&serde_json::to_string(&summary).expect("summary serializes"));
    out.push('\n');
    out
}

/// Grayscale binary portable pixmap of a sample matrix, min-max normalized;
/// a constant matrix renders black.
pub fn write_heatmap_ppm<W: Write>(mut out: W, data: &Tensor) -> io::Result<()> {
    let [rows, cols] = [data.shape()[0], data.shape()[1]];
    let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
    for v in data.data() {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    let span = (hi - lo).max(f32::MIN_POSITIVE);
    write!(out, "P6\n{cols} {rows}\n255\n")?;
    let mut pixels = Vec::with_capacity(rows * cols * 3);
    for v in data.data() {
        let level = (((v - lo) / span) * 255.0).round().clamp(0.0, 255.0) as u8;
        pixels.extend_from_slice(&[level, level, level]);
    }
    out.write_all(&pixels)
}

/// Reads every `*.csiw` file under `dir` (recursively), in sorted path order.
pub fn load_samples_dir(dir: &Path) -> Result<Vec<Sample>, HarnessError> {
    let mut paths = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let entries = fs::read_dir(&d).map_err(|e| io_err(&d, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| io_err(&d, e))?;
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == "csiw") {
                paths.push(path);
            }
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(HarnessError::EmptySet);
    }
    let mut samples = Vec::with_capacity(paths.len());
    for path in &paths {
        let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
        samples.push(ingest::read_sample(io::BufReader::new(file))?);
    }
    Ok(samples)
}

/// Generates the configured synthetic dataset: full-size models get stream
/// synthesis through the real ingest pipeline, reduced models get direct
/// matrix synthesis.
pub fn synthesize_samples(
    model: ModelConfig,
    spec: &SynthSpec,
    seed: u64,
) -> Result<Vec<Sample>, HarnessError> {
    let [rows, cols] = model.input_shape();
    let samples = if rows == ingest::SAMPLE_ROWS && cols == ingest::SAMPLE_COLS {
        synth::generate_dataset(&spec.domains, spec.per_domain, spec.fall_fraction, seed)?
    } else {
        synth::generate_matrix_dataset(
            &spec.domains,
            spec.per_domain,
            spec.fall_fraction,
            rows,
            cols,
            spec.duration_s,
            seed,
        )?
    };
    Ok(samples)
}

#[derive(Debug)]
pub struct ExperimentOutputs {
    pub report: EvalReport,
    pub ensemble: Ensemble,
}

/// Loads or synthesizes data, splits, trains the ensemble, and evaluates.
/// Pure compute: nothing is written. Seed discipline: synthesis consumes
/// `config.seed` directly, the split a derived stream, and ensemble member
/// `i` trains with `config.seed + i`.
pub fn run_configured(config: &ExperimentConfig) -> Result<ExperimentOutputs, HarnessError> {
    let samples = match &config.data {
        DataSpec::Dir(dir) => load_samples_dir(dir)?,
        DataSpec::Synth(spec) => synthesize_samples(config.model, spec, config.seed)?,
    };
    let split = lodo_split(samples, config.holdout, derive_seed(config.seed, &[2]))?;
    let ensemble = train::train_ensemble(config.model, &split.train, &config.train)?;
    let selected = select_model(&ensemble, &split.validation)?;
    let mut members = Vec::with_capacity(ensemble.members.len());
    for (index, m) in ensemble.members.iter().enumerate() {
        members.push(MemberReport {
            index,
            rho: m.rho,
            gamma: m.gamma,
            seed: m.seed,
            test: evaluate(&m.state, &split.test)?,
        });
    }
    let vote = evaluate_vote(&ensemble, &split.test)?;
    Ok(ExperimentOutputs {
        report: EvalReport {
            holdout_id: split.holdout_id,
            test_size: split.test.len(),
            members,
            selected,
            vote,
        },
        ensemble,
    })
}

/// Writes `report.txt`, `report.jsonl`, and per-member `checkpoint_<i>.adaw`
/// (plus sidecar) and `telemetry_<i>.txt` into `out_dir`.
pub fn write_outputs(out_dir: &Path, outputs: &ExperimentOutputs) -> Result<(), HarnessError> {
    fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let text_path = out_dir.join("report.txt");
    fs::write(&text_path, report_text(&outputs.report)).map_err(|e| io_err(&text_path, e))?;
    let jsonl_path = out_dir.join("report.jsonl");
    fs::write(&jsonl_path, report_jsonl(&outputs.report)).map_err(|e| io_err(&jsonl_path, e))?;
    for (i, member) in outputs.ensemble.members.iter().enumerate() {
        let ckpt = out_dir.join(format!("checkpoint_{i}.adaw"));
        models::save_model(&ckpt, &member.state, member.seed)?;
        let tel = out_dir.join(format!("telemetry_{i}.txt"));
        let mut buf = Vec::new();
        train::write_telemetry(&mut buf, &member.telemetry).map_err(|e| io_err(&tel, e))?;
        fs::write(&tel, buf).map_err(|e| io_err(&tel, e))?;
    }
    Ok(())
}

/// End-to-end experiment from a config file: compute everything first, then
/// write reports, telemetry, and checkpoints into `out_dir`. Errors leave no
/// partial outputs behind.
pub fn run_experiment(config_path: &Path, out_dir: &Path) -> Result<EvalReport, HarnessError> {
    let text = fs::read_to_string(config_path).map_err(|e| io_err(config_path, e))?;
    let config = parse_config(&text)?;
    let outputs = run_configured(&config)?;
    write_outputs(out_dir, &outputs)?;
    Ok(outputs.report)
}

/// Per-checkpoint evaluation rows plus the majority vote, for re-evaluating
/// saved models on a new sample set.
#[derive(Debug)]
pub struct CheckpointEval {
    pub rows: Vec<(String, EvalRow)>,
    pub vote: EvalRow,
}

pub fn evaluate_checkpoints(
    states: &[(String, ModelState)],
    samples: &[Sample],
) -> Result<CheckpointEval, HarnessError> {
    if states.is_empty() {
        return Err(HarnessError::EmptyEnsemble);
    }
    let mut rows = Vec::with_capacity(states.len());
    for (name, state) in states {
        rows.push((name.clone(), evaluate(state, samples)?));
    }
    let refs: Vec<&ModelState> = states.iter().map(|(_, s)| s).collect();
    let vote = tally(samples, |s| {
        majority_vote(&refs, s.data()).map_err(|e| match e {
            HarnessError::Diff(d) => d,
            _ => unreachable!("non-empty list"),
        })
    })?;
    Ok(CheckpointEval { rows, vote })
}

pub fn checkpoint_eval_text(eval: &CheckpointEval) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "model\taccuracy\tprecision\tfalse_alarm\ttp\ttn\tfp\tfn");
    for (name, row) in &eval.rows {
        let _ = writeln!(
            out,
            "{name}\t{:.4}\t{:.4}\t{:.4}\t{}\t{}\t{}\t{}",
            row.accuracy,
            row.precision,
            row.false_alarm,
            row.true_positives,
            row.true_negatives,
            row.false_positives,
            row.false_negatives
        );
    }
    let _ = writeln!(
        out,
        "vote\t{:.4}\t{:.4}\t{:.4}\t{}\t{}\t{}\t{}",
        eval.vote.accuracy,
        eval.vote.precision,
        eval.vote.false_alarm,
        eval.vote.true_positives,
        eval.vote.true_negatives,
        eval.vote.false_positives,
        eval.vote.false_negatives
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::CnnConfig;
    use crate::synth::{default_domain_params, generate_matrix_dataset, DomainParams};
    use crate::train::{EnsembleMember, GammaRule, Telemetry, TrainConfig};
    use proptest::prelude::*;

    fn dataset(domains: u16, per_domain: usize, seed: u64) -> Vec<Sample> {
        let params: Vec<DomainParams> = (0..domains).map(default_domain_params).collect();
        generate_matrix_dataset(&params, per_domain, 0.5, 10, 6, 2.0, seed).unwrap()
    }

    /// A model whose zero weights and rigged classifier bias force a fixed
    /// prediction, for metric tests with known outcomes.
    fn constant_predictor(class: usize) -> ModelState {
        let mut state = ModelState::zeros(ModelConfig::Cnn(CnnConfig::reduced())).unwrap();
        let bias = state.param_tensor_mut("fc2.bias").unwrap();
        bias.data_mut()[class] = 1.0;
        state
    }

    fn member(state: ModelState, rho: f64) -> EnsembleMember {
        EnsembleMember {
            rho,
            gamma: 1.0 / rho,
            seed: 0,
            state,
            telemetry: Telemetry {
                rho,
                gamma: 1.0 / rho,
                seed: 0,
                warmup_mean_loss: None,
                records: vec![],
            },
        }
    }

    #[test]
    fn split_partitions_by_domain() {
        let samples = dataset(10, 8, 1);
        let total = samples.len();
        let split = lodo_split(samples, 3, 7).unwrap();
        assert_eq!(split.holdout_id, 3);
        assert!(split.test.iter().all(|s| s.domain_id() == 3));
        assert_eq!(split.test.len(), 8);
        assert!(split.train.iter().all(|s| s.domain_id() != 3));
        assert!(split.validation.iter().all(|s| s.domain_id() != 3));
        assert_eq!(
            split.train.len() + split.validation.len() + split.test.len(),
            total
        );
        // 9 domains × 2 labels, groups of 4 → ceil(4/10) = 1 each.
        assert_eq!(split.validation.len(), 18);
    }

    #[test]
    fn split_is_deterministic_and_seed_sensitive() {
        let ids = |split: &LodoSplit| -> Vec<(u16, u8)> {
            split
                .validation
                .iter()
                .map(|s| (s.domain_id(), s.label()))
                .collect()
        };
        let a = lodo_split(dataset(4, 10, 2), 0, 5).unwrap();
        let b = lodo_split(dataset(4, 10, 2), 0, 5).unwrap();
        assert_eq!(ids(&a), ids(&b));
        assert_eq!(
            a.validation[0].data().data(),
            b.validation[0].data().data()
        );
    }

    #[test]
    fn split_rejects_bad_holdouts() {
        assert!(matches!(
            lodo_split(dataset(4, 2, 3), 99, 0),
            Err(HarnessError::UnknownDomain(99))
        ));
        assert!(matches!(
            lodo_split(dataset(1, 4, 3), 0, 0),
            Err(HarnessError::SingleDomain)
        ));
    }

    #[test]
    fn rotation_covers_every_sample_once() {
        let samples = dataset(10, 3, 4);
        let total = samples.len();
        let mut tested = 0usize;
        for holdout in 0..10u16 {
            let split = lodo_split(dataset(10, 3, 4), holdout, 1).unwrap();
            let train_domains: BTreeSet<u16> =
                split.train.iter().map(|s| s.domain_id()).collect();
            let test_domains: BTreeSet<u16> =
                split.test.iter().map(|s| s.domain_id()).collect();
            assert!(train_domains.is_disjoint(&test_domains));
            tested += split.test.len();
        }
        assert_eq!(tested, total);
        assert_eq!(total, samples.len());
    }

    #[test]
    fn metrics_for_constant_predictors() {
        let samples = dataset(2, 10, 5);
        let negatives: Vec<Sample> = samples.iter().filter(|s| s.label() == 0).cloned().collect();

        let always_zero = constant_predictor(0);
        let row = evaluate(&always_zero, &negatives).unwrap();
        assert_eq!(row.accuracy, 1.0);
        assert_eq!(row.false_alarm, 0.0);
        assert_eq!(row.total(), negatives.len());

        let always_one = constant_predictor(1);
        let row = evaluate(&always_one, &negatives).unwrap();
        assert_eq!(row.accuracy, 0.0);
        assert_eq!(row.false_alarm, 1.0);
        assert_eq!(row.false_positives, negatives.len());

        let mixed = evaluate(&always_one, &samples).unwrap();
        assert_eq!(mixed.total(), samples.len());
        assert!(mixed.precision > 0.0 && mixed.precision <= 1.0);
        assert!(matches!(evaluate(&always_zero, &[]), Err(HarnessError::EmptySet)));
    }

    #[test]
    fn selection_maximizes_validation_accuracy() {
        let samples = dataset(2, 10, 6);
        let positives: Vec<Sample> = samples.iter().filter(|s| s.label() == 1).cloned().collect();
        let ensemble = Ensemble {
            members: vec![
                member(constant_predictor(0), 0.1),
                member(constant_predictor(1), 1.0),
                member(constant_predictor(0), 4.0),
            ],
        };
        let picked = select_model(&ensemble, &positives).unwrap();
        assert_eq!(picked.index, 1);
        assert_eq!(picked.validation_accuracy, 1.0);

        // All members tie on an all-negative set except the middle one.
        let negatives: Vec<Sample> = samples.iter().filter(|s| s.label() == 0).cloned().collect();
        let picked = select_model(&ensemble, &negatives).unwrap();
        assert_eq!(picked.index, 0, "tie must resolve to the smallest index");

        let empty = Ensemble { members: vec![] };
        assert!(matches!(
            select_model(&empty, &positives),
            Err(HarnessError::EmptyEnsemble)
        ));
    }

    #[test]
    fn vote_majority_and_tie_rules() {
        let samples = dataset(2, 4, 7);
        let x = samples[0].data();
        let zero = constant_predictor(0);
        let one = constant_predictor(1);

        let unanimous = vec![&one, &one, &one];
        assert_eq!(majority_vote(&unanimous, x).unwrap(), 1);
        let split_3_2 = vec![&one, &zero, &one, &zero, &one];
        assert_eq!(majority_vote(&split_3_2, x).unwrap(), 1);
        let tie_2_2 = vec![&one, &zero, &one, &zero];
        assert_eq!(majority_vote(&tie_2_2, x).unwrap(), 0);
        assert!(matches!(
            majority_vote(&[], x),
            Err(HarnessError::EmptyEnsemble)
        ));
    }

    #[test]
    fn report_serialization_is_stable() {
        let report = EvalReport {
            holdout_id: 9,
            test_size: 4,
            members: vec![MemberReport {
                index: 0,
                rho: 0.1,
                gamma: 10.0,
                seed: 3,
                test: EvalRow::from_counts(2, 1, 1, 0),
            }],
            selected: SelectedModel {
                index: 0,
                validation_accuracy: 0.875,
            },
            vote: EvalRow::from_counts(2, 2, 0, 0),
        };
        let text = report_text(&report);
        assert!(text.starts_with("holdout=9 test_size=4\n"));
        assert!(text.contains("0.1000\t10.0000\t0.7500\t0.6667\t0.5000\t2\t1\t1\t0"));
        assert!(text.contains("selected: index=0 rho=0.1000 validation_accuracy=0.8750 test_accuracy=0.7500"));
        assert!(text.contains("ensemble_vote: accuracy=1.0000"));
        assert!(text.contains("informational"));

        let jsonl = report_jsonl(&report);
        let lines: Vec<&str> = jsonl.lines().collect();
        assert_eq!(lines.len(), 2);
        let row: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
        assert_eq!(row["rho"], 0.1);
        assert_eq!(row["test"]["true_positives"], 2);
        let summary: serde_json::Value = serde_json::from_str(lines[1]).unwrap();
        assert_eq!(summary["holdout_id"], 9);
        assert_eq!(summary["selected"]["index"], 0);
    }

    #[test]
    fn heatmap_ppm_layout() {
        let t = Tensor::from_vec(&[2, 2], vec![0.0, 1.0, 0.5, 1.0]).unwrap();
        let mut buf = Vec::new();
        write_heatmap_ppm(&mut buf, &t).unwrap();
        let header = b"P6\n2 2\n255\n";
        assert_eq!(&buf[..header.len()], header);
        let pixels = &buf[header.len()..];
        assert_eq!(pixels.len(), 12);
        assert_eq!(&pixels[..3], &[0, 0, 0]);
        assert_eq!(&pixels[3..6], &[255, 255, 255]);
        assert_eq!(&pixels[6..9], &[128, 128, 128]);

        let flat = Tensor::from_vec(&[1, 2], vec![3.0, 3.0]).unwrap();
        let mut buf = Vec::new();
        write_heatmap_ppm(&mut buf, &flat).unwrap();
        assert_eq!(&buf[b"P6\n2 1\n255\n".len()..], &[0u8; 6]);
    }

    #[test]
    fn end_to_end_experiment_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let config_path = dir.path().join("exp.cfg");
        std::fs::write(
            &config_path,
            "model = cnn\nprofile = reduced\nsynth_domains = 3\nsynth_per_domain = 6\n\
             holdout = 2\nseed = 4\nrho_grid = 0.1,1\nk = 1\nt_adv = 1\nt_min = 2\n\
             batch = 4\nlr = 0.01\n",
        )
        .unwrap();

        let out_a = dir.path().join("a");
        let out_b = dir.path().join("b");
        let report = run_experiment(&config_path, &out_a).unwrap();
        assert_eq!(report.holdout_id, 2);
        assert_eq!(report.test_size, 6);
        assert_eq!(report.members.len(), 2);
        for m in &report.members {
            assert_eq!(m.test.total(), 6);
        }
        run_experiment(&config_path, &out_b).unwrap();

        for name in [
            "report.txt",
            "report.jsonl",
            "checkpoint_0.adaw",
            "checkpoint_0.adaw.json",
            "checkpoint_1.adaw",
            "telemetry_0.txt",
            "telemetry_1.txt",
        ] {
            let a = std::fs::read(out_a.join(name)).unwrap();
            let b = std::fs::read(out_b.join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between identical runs");
            assert!(!a.is_empty());
        }

        // Checkpoints round-trip into usable models.
        let (state, meta) = models::load_model(&out_a.join("checkpoint_0.adaw")).unwrap();
        assert_eq!(meta.seed, 4);
        let samples = dataset(2, 2, 1);
        models::predict(&state, samples[0].data()).unwrap();
    }

    #[test]
    fn missing_data_dir_fails_without_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let config_path = dir.path().join("exp.cfg");
        std::fs::write(&config_path, "data_dir = /nonexistent/nowhere\n").unwrap();
        let out = dir.path().join("out");
        let err = run_experiment(&config_path, &out).unwrap_err();
        assert!(matches!(err, HarnessError::Io { .. }));
        assert!(!out.exists(), "no partial outputs on failure");
    }

    #[test]
    fn sample_dir_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let samples = dataset(2, 3, 8);
        let sub = dir.path().join("nested");
        std::fs::create_dir_all(&sub).unwrap();
        for (i, s) in samples.iter().enumerate() {
            let base = if i % 2 == 0 { dir.path() } else { &sub };
            let f = std::fs::File::create(base.join(format!("s{i:03}.csiw"))).unwrap();
            ingest::write_sample(std::io::BufWriter::new(f), s).unwrap();
        }
        let loaded = load_samples_dir(dir.path()).unwrap();
        assert_eq!(loaded.len(), samples.len());
        let key = |s: &Sample| (s.domain_id(), s.label());
        let mut want: Vec<_> = samples.iter().map(key).collect();
        let mut got: Vec<_> = loaded.iter().map(key).collect();
        want.sort();
        got.sort();
        assert_eq!(want, got);

        assert!(matches!(
            load_samples_dir(&dir.path().join("missing")),
            Err(HarnessError::Io { .. })
        ));
    }

    #[test]
    fn gamma_rule_is_logged_in_outputs() {
        let cfg = parse_config("gamma_rule = fixed:2.5\nrho_grid = 1\n").unwrap();
        assert_eq!(cfg.train.gamma_rule, GammaRule::Fixed(2.5));
        assert_eq!(cfg.train.gamma_rule.gamma(1.0), 2.5);
        let defaults = TrainConfig::default();
        assert_eq!(defaults.gamma_rule.gamma(0.001), 1000.0);
    }

    proptest! {
        #[test]
        fn argmax_invariant_under_increasing_transforms(
            values in proptest::collection::vec(0.0f64..1.0, 1..12)
        ) {
            let base = argmax_tie_smallest(&values);
            let affine: Vec<f64> = values.iter().map(|v| 3.0 * v + 1.0).collect();
            prop_assert_eq!(argmax_tie_smallest(&affine), base);
            let exp: Vec<f64> = values.iter().map(|v| v.exp()).collect();
            prop_assert_eq!(argmax_tie_smallest(&exp), base);
            let cubic: Vec<f64> = values.iter().map(|v| v.powi(3)).collect();
            prop_assert_eq!(argmax_tie_smallest(&cubic), base);
        }
    }
}
