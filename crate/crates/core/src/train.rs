//! Worst-case data augmentation training.
//!
//! Training alternates two phases for `k` rounds: a maximization phase that
//! perturbs a batch of source samples in input space to raise the
//! Wasserstein-penalized surrogate objective, and a minimization phase that
//! runs stochastic gradient descent over the union of source and generated
//! samples. One model is trained per penalty radius ρ; together they form
//! an ensemble.

use std::collections::BTreeSet;
use std::io::{self, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{DiffError, Tensor};
use crate::ingest::Sample;
use crate::models::{self, ModelConfig, ModelState};
use crate::synth::derive_seed;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("dataset must be non-empty and contain both labels")]
    DegenerateData,
    #[error("invalid training config: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

/// How the penalty weight γ is derived from the radius ρ. The sweep is
/// expressed in ρ, the surrogate in γ; `InverseRho` (γ = 1/ρ, larger radius
/// ⇔ weaker penalty) is the default convention and is recorded in telemetry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GammaRule {
    InverseRho,
    Fixed(f64),
}

impl GammaRule {
    pub fn gamma(&self, rho: f64) -> f64 {
        match self {
            GammaRule::InverseRho => 1.0 / rho,
            GammaRule::Fixed(g) => *g,
        }
    }
}

/// All training hyperparameters. Zero values of `k`, `t_adv`, `eta_adv`, or
/// `lr` are permitted to express ablations (pure minimization, identity
/// augmentation); the radius grid must be positive and strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub rho_grid: Vec<f64>,
    pub gamma_rule: GammaRule,
    /// Augmentation rounds.
    pub k: usize,
    /// Ascent steps per maximization.
    pub t_adv: usize,
    /// Ascent step size.
    pub eta_adv: f64,
    /// Gradient-descent steps per round.
    pub t_min: usize,
    pub lr: f64,
    pub batch: usize,
    /// Pure-minimization epochs before the first augmentation round.
    pub epochs_warmup: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            rho_grid: vec![0.001, 0.01, 0.1, 1.0, 4.0],
            gamma_rule: GammaRule::InverseRho,
            k: 100,
            t_adv: 15,
            eta_adv: 1.0,
            t_min: 100,
            lr: 1e-3,
            batch: 32,
            epochs_warmup: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.rho_grid.is_empty() {
            return Err(TrainError::InvalidConfig("rho_grid must be non-empty"));
        }
        if !self.rho_grid.iter().all(|r| *r > 0.0 && r.is_finite()) {
            return Err(TrainError::InvalidConfig("rho values must be positive"));
        }
        if !self.rho_grid.windows(2).all(|w| w[0] < w[1]) {
            return Err(TrainError::InvalidConfig(
                "rho_grid must be strictly increasing",
            ));
        }
        if self.batch == 0 {
            return Err(TrainError::InvalidConfig("batch must be at least 1"));
        }
        if !(self.eta_adv >= 0.0 && self.eta_adv.is_finite()) {
            return Err(TrainError::InvalidConfig("eta_adv must be non-negative"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(TrainError::InvalidConfig("lr must be non-negative"));
        }
        Ok(())
    }
}

/// Provenance of one generated sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AdvTag {
    /// Index into the source portion.
    pub origin: usize,
    /// Augmentation round that produced it (1-based).
    pub iteration: usize,
}

/// Source samples plus generated samples appended across rounds. Indexing is
/// unified, source first.
pub struct AugmentedDataset {
    source: Vec<Sample>,
    adversarial: Vec<(Tensor, u8, AdvTag)>,
}

impl AugmentedDataset {
    pub fn new(source: Vec<Sample>) -> AugmentedDataset {
        AugmentedDataset {
            source,
            adversarial: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.source.len() + self.adversarial.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty() && self.adversarial.is_empty()
    }

    pub fn source_len(&self) -> usize {
        self.source.len()
    }

    pub fn source(&self) -> &[Sample] {
        &self.source
    }

    pub fn adversarial(&self) -> &[(Tensor, u8, AdvTag)] {
        &self.adversarial
    }

    /// Appends a generated sample; its label must match its origin's.
    pub fn push_adversarial(&mut self, data: Tensor, label: u8, tag: AdvTag) {
        assert_eq!(
            label,
            self.source[tag.origin].label(),
            "generated sample must keep its origin's label"
        );
        self.adversarial.push((data, label, tag));
    }

    /// `(input, label)` at unified index `i`, source portion first.
    pub fn get(&self, i: usize) -> (&Tensor, u8) {
        if i < self.source.len() {
            (self.source[i].data(), self.source[i].label())
        } else {
            let (t, y, _) = &self.adversarial[i - self.source.len()];
            (t, *y)
        }
    }
}

/// Squared-distance transport cost between embedded points:
/// `½‖z − z0‖²` for equal labels, `∞` otherwise (labels never transport).
pub fn transport_cost(z: &[f32], y: u8, z0: &[f32], y0: u8) -> Result<f64, DiffError> {
    if z.len() != z0.len() {
        return Err(DiffError::ShapeMismatch(format!(
            "embeddings of length {} and {}",
            z.len(),
            z0.len()
        )));
    }
    if y != y0 {
        return Ok(f64::INFINITY);
    }
    let s: f64 = z
        .iter()
        .zip(z0)
        .map(|(a, b)| {
            let d = *a as f64 - *b as f64;
            d * d
        })
        .sum();
    Ok(0.5 * s)
}

/// Evaluates loss − γ·½‖g(x) − emb0‖² on a fresh graph, optionally with the
/// input gradient. Returns `(objective, input gradient, embedding of x)`.
fn eval_candidate(
    state: &ModelState,
    x: &Tensor,
    emb0: &Tensor,
    label: u8,
    gamma: f64,
    want_grad: bool,
) -> Result<(f64, Option<Tensor>, Tensor), DiffError> {
    let mut pass = models::forward(state, x, want_grad, false)?;
    let ce = pass.graph.softmax_cross_entropy(pass.logits, label as usize)?;
    let emb0_id = pass.graph.leaf(emb0, false);
    let diff = pass.graph.sub(pass.embedding, emb0_id)?;
    let cost = pass.graph.half_sq_norm(diff);
    let obj = pass.graph.scalar_axpy(ce, cost, -gamma)?;
    let emb = pass.graph.value(pass.embedding).clone();
    let grad = if want_grad {
        pass.graph.backward(obj)?;
        Some(pass.graph.grad_tensor(pass.input))
    } else {
        None
    };
    Ok((pass.graph.value(obj).item() as f64, grad, emb))
}

/// The bracketed surrogate term `ℓ(θ; (x, y0)) − γ·½‖g(θ_f;x) − g(θ_f;x0)‖²`
/// at a given candidate `x`. At `x = x0` the penalty vanishes exactly and
/// this is the plain loss.
pub fn surrogate_objective(
    state: &ModelState,
    x: &Tensor,
    x0: &Tensor,
    y0: u8,
    gamma: f64,
) -> Result<f64, DiffError> {
    let emb0 = models::embed(state, x0)?;
    let (obj, _, _) = eval_candidate(state, x, &emb0, y0, gamma, false)?;
    Ok(obj)
}

/// Ascent record for one origin.
#[derive(Debug, Clone)]
pub struct AscentTrace {
    /// Surrogate objective of the retained iterate, starting at the origin.
    /// Non-decreasing by construction of the greedy acceptance.
    pub objective: Vec<f64>,
    pub accepted: usize,
    /// Final `½‖g(x_adv) − g(x0)‖²`, accumulated in 64-bit.
    pub transport_cost: f64,
}

#[derive(Debug, Clone, Default)]
pub struct MaximizeStats {
    pub per_origin: Vec<AscentTrace>,
}

impl MaximizeStats {
    pub fn mean_transport_cost(&self) -> f64 {
        if self.per_origin.is_empty() {
            return 0.0;
        }
        self.per_origin.iter().map(|t| t.transport_cost).sum::<f64>()
            / self.per_origin.len() as f64
    }
}

/// Gradient ascent in input space, one run per origin: start at `x0`; for up
/// to `t_adv` steps propose `x + eta_adv·∇ₓ(surrogate)` and keep it only if
/// the objective strictly increases. A rejected proposal ends the run early,
/// since the same proposal would repeat. The model is read-only; the phase
/// consumes no randomness. Labels carry over unchanged.
pub fn maximize_phase(
    state: &ModelState,
    origins: &[(Tensor, u8)],
    gamma: f64,
    t_adv: usize,
    eta_adv: f64,
) -> Result<(Vec<(Tensor, u8)>, MaximizeStats), DiffError> {
    let mut outputs = Vec::with_capacity(origins.len());
    let mut stats = MaximizeStats::default();
    for (x0, y0) in origins {
        let emb0 = models::embed(state, x0)?;
        let (mut obj, mut grad, mut emb) = eval_candidate(state, x0, &emb0, *y0, gamma, true)?;
        let mut x = x0.clone();
        let mut trace = vec![obj];
        let mut accepted = 0usize;
        for _ in 0..t_adv {
            let g = grad.as_ref().expect("ascent gradient present");
            let data: Vec<f32> = x
                .data()
                .iter()
                .zip(g.data())
                .map(|(xv, gv)| (*xv as f64 + eta_adv * *gv as f64) as f32)
                .collect();
            let candidate = Tensor::from_vec(x.shape(), data)?;
            let (cand_obj, cand_grad, cand_emb) =
                eval_candidate(state, &candidate, &emb0, *y0, gamma, true)?;
            if cand_obj > obj {
                x = candidate;
                obj = cand_obj;
                grad = cand_grad;
                emb = cand_emb;
                accepted += 1;
                trace.push(obj);
            } else {
                break;
            }
        }
        let cost = transport_cost(emb.data(), *y0, emb0.data(), *y0)?;
        stats.per_origin.push(AscentTrace {
            objective: trace,
            accepted,
            transport_cost: cost,
        });
        outputs.push((x, *y0));
    }
    Ok((outputs, stats))
}

/// One mini-batch SGD update; gradients are averaged in 64-bit and applied
/// as `θ ← θ − lr·mean`. Returns the batch's mean loss.
fn sgd_step(state: &mut ModelState, batch: &[(&Tensor, u8)], lr: f64) -> Result<f64, DiffError> {
    let mut acc: Vec<Vec<f64>> = state
        .all_params()
        .map(|(_, t)| vec![0.0f64; t.len()])
        .collect();
    let mut loss_sum = 0.0f64;
    for (x, y) in batch {
        let mut pass = models::forward(state, x, false, true)?;
        let ce = pass.graph.softmax_cross_entropy(pass.logits, *y as usize)?;
        pass.graph.backward(ce)?;
        loss_sum += pass.graph.value(ce).item() as f64;
        for (a, id) in acc.iter_mut().zip(&pass.params) {
            if let Some(g) = pass.graph.grad(*id) {
                for (av, gv) in a.iter_mut().zip(g) {
                    *av += *gv as f64;
                }
            }
        }
    }
    let scale = lr / batch.len() as f64;
    for ((_, t), a) in state.all_params_mut().zip(&acc) {
        for (v, g) in t.data_mut().iter_mut().zip(a) {
            *v = (*v as f64 - scale * g) as f32;
        }
    }
    Ok(loss_sum / batch.len() as f64)
}

/// `t_min` steps of mini-batch SGD on cross-entropy over the full augmented
/// dataset; batches are drawn uniformly without replacement, clamped to the
/// dataset size. Returns the mean loss across steps.
pub fn minimize_phase(
    state: &mut ModelState,
    dataset: &AugmentedDataset,
    t_min: usize,
    lr: f64,
    batch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64, DiffError> {
    assert!(!dataset.is_empty(), "minimize_phase needs data");
    if t_min == 0 {
        return Ok(0.0);
    }
    let take = batch.clamp(1, dataset.len());
    let mut total = 0.0f64;
    for _ in 0..t_min {
        let idx = rand::seq::index::sample(rng, dataset.len(), take);
        let refs: Vec<(&Tensor, u8)> = idx.iter().map(|i| dataset.get(i)).collect();
        total += sgd_step(state, &refs, lr)?;
    }
    Ok(total / t_min as f64)
}

/// Per-round aggregates, one line each in telemetry files.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub mean_loss: f64,
    pub mean_transport_cost: f64,
    pub dataset_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Telemetry {
    pub rho: f64,
    pub gamma: f64,
    pub seed: u64,
    pub warmup_mean_loss: Option<f64>,
    pub records: Vec<IterationRecord>,
}

/// Tab-separated telemetry: a comment header with ρ, γ, and seed, a column
/// header, then one row per round. Formatting is fixed so identical runs
/// serialize byte-identically.
pub fn write_telemetry<W: Write>(mut out: W, telemetry: &Telemetry) -> io::Result<()> {
    writeln!(
        out,
        "# rho={:.6} gamma={:.6} seed={}",
        telemetry.rho, telemetry.gamma, telemetry.seed
    )?;
    if let Some(w) = telemetry.warmup_mean_loss {
        writeln!(out, "# warmup_mean_loss={w:.6}")?;
    }
    writeln!(out, "iteration\tmean_loss\tmean_transport_cost\tdataset_size")?;
    for r in &telemetry.records {
        writeln!(
            out,
            "{}\t{:.6}\t{:.6}\t{}",
            r.iteration, r.mean_loss, r.mean_transport_cost, r.dataset_size
        )?;
    }
    Ok(())
}

enum Augment {
    Adversarial { gamma: f64 },
    /// Appends untouched origin copies: the empirical-risk baseline with
    /// identical dataset-size bookkeeping and RNG consumption.
    OriginCopies,
}

fn check_data(model_config: &ModelConfig, data: &[Sample]) -> Result<(), TrainError> {
    if data.is_empty() {
        return Err(TrainError::DegenerateData);
    }
    let labels: BTreeSet<u8> = data.iter().map(|s| s.label()).collect();
    if labels.len() < 2 {
        return Err(TrainError::DegenerateData);
    }
    let want = model_config.input_shape();
    for s in data {
        if s.data().shape() != want {
            return Err(TrainError::Diff(DiffError::ShapeMismatch(format!(
                "sample shape {:?} does not match model input {want:?}",
                s.data().shape()
            ))));
        }
    }
    Ok(())
}

fn train_loop(
    model_config: ModelConfig,
    data: &[Sample],
    augment: Augment,
    rho_label: f64,
    config: &TrainConfig,
    seed: u64,
) -> Result<(ModelState, Telemetry), TrainError> {
    config.validate()?;
    check_data(&model_config, data)?;

    let mut state = models::init_params(model_config, seed)?;
    // Parameter init consumes the raw seed; the training stream is derived,
    // so the two never alias.
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[1]));

    let mut warmup_mean_loss = None;
    if config.epochs_warmup > 0 {
        let mut loss_sum = 0.0f64;
        let mut chunks = 0usize;
        for _ in 0..config.epochs_warmup {
            let mut order: Vec<usize> = (0..data.len()).collect();
            order.shuffle(&mut rng);
            for chunk in order.chunks(config.batch) {
                let refs: Vec<(&Tensor, u8)> = chunk
                    .iter()
                    .map(|i| (data[*i].data(), data[*i].label()))
                    .collect();
                loss_sum += sgd_step(&mut state, &refs, config.lr)?;
                chunks += 1;
            }
        }
        warmup_mean_loss = Some(loss_sum / chunks as f64);
    }

    let mut dataset = AugmentedDataset::new(data.to_vec());
    let mut records = Vec::with_capacity(config.k);
    let gamma_label = match augment {
        Augment::Adversarial { gamma } => gamma,
        Augment::OriginCopies => 0.0,
    };
    for iteration in 1..=config.k {
        let take = config.batch.min(dataset.source_len());
        let origin_indices: Vec<usize> =
            rand::seq::index::sample(&mut rng, dataset.source_len(), take).into_iter().collect();
        let origins: Vec<(Tensor, u8)> = origin_indices
            .iter()
            .map(|&i| (data[i].data().clone(), data[i].label()))
            .collect();
        let (generated, mean_transport_cost) = match augment {
            Augment::Adversarial { gamma } => {
                let (out, stats) =
                    maximize_phase(&state, &origins, gamma, config.t_adv, config.eta_adv)?;
                let mean = stats.mean_transport_cost();
                (out, mean)
            }
            Augment::OriginCopies => (origins, 0.0),
        };
        for (j, (x, y)) in generated.into_iter().enumerate() {
            dataset.push_adversarial(
                x,
                y,
                AdvTag {
                    origin: origin_indices[j],
                    iteration,
                },
            );
        }
        let mean_loss =
            minimize_phase(&mut state, &dataset, config.t_min, config.lr, config.batch, &mut rng)?;
        records.push(IterationRecord {
            iteration,
            mean_loss,
            mean_transport_cost,
            dataset_size: dataset.len(),
        });
    }

    Ok((
        state,
        Telemetry {
            rho: rho_label,
            gamma: gamma_label,
            seed,
            warmup_mean_loss,
            records,
        },
    ))
}

/// Trains one model for radius `rho`: init, warmup epochs, then `k` rounds
/// of maximize-append-minimize with γ from the config's mapping rule.
/// Deterministic in `(model_config, data, rho, config, seed)`.
pub fn train_one(
    model_config: ModelConfig,
    data: &[Sample],
    rho: f64,
    config: &TrainConfig,
    seed: u64,
) -> Result<(ModelState, Telemetry), TrainError> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(TrainError::InvalidConfig("rho must be positive"));
    }
    let gamma = config.gamma_rule.gamma(rho);
    train_loop(model_config, data, Augment::Adversarial { gamma }, rho, config, seed)
}

/// The matched empirical-risk baseline: identical schedule, RNG stream, and
/// dataset bookkeeping as [`train_one`], but each round appends untouched
/// origin copies instead of perturbed samples. With `t_adv = 0` (or
/// `eta_adv = 0`) the adversarial run degenerates to exactly this.
pub fn train_erm(
    model_config: ModelConfig,
    data: &[Sample],
    config: &TrainConfig,
    seed: u64,
) -> Result<(ModelState, Telemetry), TrainError> {
    train_loop(model_config, data, Augment::OriginCopies, 0.0, config, seed)
}

#[derive(Debug)]
pub struct EnsembleMember {
    pub rho: f64,
    pub gamma: f64,
    pub seed: u64,
    pub state: ModelState,
    pub telemetry: Telemetry,
}

/// One trained model per ρ, in grid order.
#[derive(Debug)]
pub struct Ensemble {
    pub members: Vec<EnsembleMember>,
}

/// Trains the whole grid, member `i` seeded with `config.seed + i`. Members
/// run on separate threads; results are collected in grid order, and every
/// member is independent of scheduling, so the outcome is identical to a
/// serial run.
pub fn train_ensemble(
    model_config: ModelConfig,
    data: &[Sample],
    config: &TrainConfig,
) -> Result<Ensemble, TrainError> {
    config.validate()?;
    let members = std::thread::scope(|scope| {
        let handles: Vec<_> = config
            .rho_grid
            .iter()
            .enumerate()
            .map(|(i, rho)| {
                let rho = *rho;
                scope.spawn(move || -> Result<EnsembleMember, TrainError> {
                    let seed = config.seed + i as u64;
                    let (state, telemetry) = train_one(model_config, data, rho, config, seed)?;
                    Ok(EnsembleMember {
                        rho,
                        gamma: config.gamma_rule.gamma(rho),
                        seed,
                        state,
                        telemetry,
                    })
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("training thread panicked"))
            .collect::<Result<Vec<_>, _>>()
    })?;
    Ok(Ensemble { members })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::CnnConfig;
    use crate::synth::{default_domain_params, generate_matrix_dataset, DomainParams};

    fn reduced() -> ModelConfig {
        ModelConfig::Cnn(CnnConfig::reduced())
    }

    fn tiny_data(per_domain: usize, seed: u64) -> Vec<Sample> {
        let domains: Vec<DomainParams> = (0..2).map(default_domain_params).collect();
        generate_matrix_dataset(&domains, per_domain, 0.5, 10, 6, 2.0, seed).unwrap()
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            rho_grid: vec![0.1, 1.0],
            k: 2,
            t_adv: 2,
            eta_adv: 0.5,
            t_min: 3,
            lr: 1e-2,
            batch: 4,
            epochs_warmup: 1,
            seed: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn transport_cost_cases() {
        assert_eq!(transport_cost(&[1.0, 2.0], 1, &[1.0, 2.0], 1).unwrap(), 0.0);
        assert_eq!(transport_cost(&[1.0, 0.0], 0, &[0.0, 1.0], 0).unwrap(), 1.0);
        assert_eq!(
            transport_cost(&[1.0, 0.0], 0, &[1.0, 0.0], 1).unwrap(),
            f64::INFINITY
        );
        assert!(transport_cost(&[1.0], 0, &[1.0, 0.0], 0).is_err());
    }

    #[test]
    fn surrogate_at_origin_is_plain_loss() {
        let data = tiny_data(2, 1);
        let state = models::init_params(reduced(), 3).unwrap();
        let x0 = data[0].data();
        let y0 = data[0].label();

        let mut pass = models::forward(&state, x0, false, false).unwrap();
        let ce = pass.graph.softmax_cross_entropy(pass.logits, y0 as usize).unwrap();
        let plain = pass.graph.value(ce).item() as f64;

        let at_origin = surrogate_objective(&state, x0, x0, y0, 123.0).unwrap();
        assert_eq!(at_origin, plain);

        let other = data[1].data();
        let gamma_zero = surrogate_objective(&state, other, x0, y0, 0.0).unwrap();
        let mut pass2 = models::forward(&state, other, false, false).unwrap();
        let ce2 = pass2.graph.softmax_cross_entropy(pass2.logits, y0 as usize).unwrap();
        assert_eq!(gamma_zero, pass2.graph.value(ce2).item() as f64);
    }

    #[test]
    fn surrogate_matches_hand_composition() {
        let data = tiny_data(2, 2);
        let state = models::init_params(reduced(), 4).unwrap();
        let (x, x0, y0) = (data[1].data(), data[0].data(), data[0].label());
        let gamma = 0.7;

        let got = surrogate_objective(&state, x, x0, y0, gamma).unwrap();

        let pass = models::forward(&state, x, false, false).unwrap();
        let probs = models::softmax64(pass.graph.value(pass.logits).data());
        let loss = -probs[y0 as usize].ln();
        let emb = models::embed(&state, x).unwrap();
        let emb0 = models::embed(&state, x0).unwrap();
        let cost = transport_cost(emb.data(), y0, emb0.data(), y0).unwrap();
        let expect = loss - gamma * cost;
        assert!(
            (got - expect).abs() < 1e-5 * expect.abs().max(1.0),
            "{got} vs {expect}"
        );
    }

    #[test]
    fn zero_step_ascent_returns_origins() {
        let data = tiny_data(2, 3);
        let state = models::init_params(reduced(), 5).unwrap();
        let origins: Vec<(Tensor, u8)> = data
            .iter()
            .map(|s| (s.data().clone(), s.label()))
            .collect();
        let (out, stats) = maximize_phase(&state, &origins, 1.0, 0, 1.0).unwrap();
        for ((x, y), (x0, y0)) in out.iter().zip(&origins) {
            assert_eq!(x.data(), x0.data());
            assert_eq!(y, y0);
        }
        for trace in &stats.per_origin {
            assert_eq!(trace.objective.len(), 1);
            assert_eq!(trace.transport_cost, 0.0);
        }
    }

    #[test]
    fn zero_step_size_returns_origins() {
        let data = tiny_data(1, 4);
        let state = models::init_params(reduced(), 6).unwrap();
        let origins = vec![(data[0].data().clone(), data[0].label())];
        let (out, _) = maximize_phase(&state, &origins, 1.0, 5, 0.0).unwrap();
        assert_eq!(out[0].0.data(), data[0].data().data());
    }

    #[test]
    fn huge_penalty_pins_ascent_to_origin() {
        let data = tiny_data(2, 5);
        let state = models::init_params(reduced(), 7).unwrap();
        let origins = vec![(data[0].data().clone(), data[0].label())];
        let (out, _) = maximize_phase(&state, &origins, 1e9, 15, 1.0).unwrap();
        let dist: f64 = out[0]
            .0
            .data()
            .iter()
            .zip(data[0].data().data())
            .map(|(a, b)| (*a as f64 - *b as f64).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(dist < 1e-3, "distance {dist}");
    }

    #[test]
    fn ascent_trace_is_monotone_and_moves() {
        let data = tiny_data(4, 6);
        let state = models::init_params(reduced(), 8).unwrap();
        let origins: Vec<(Tensor, u8)> = data
            .iter()
            .map(|s| (s.data().clone(), s.label()))
            .collect();
        let (out, stats) = maximize_phase(&state, &origins, 1.0, 10, 1.0).unwrap();
        let mut any_accepted = false;
        for trace in &stats.per_origin {
            for w in trace.objective.windows(2) {
                assert!(w[1] >= w[0], "objective decreased: {:?}", trace.objective);
            }
            any_accepted |= trace.accepted > 0;
            assert!(trace.transport_cost.is_finite());
        }
        assert!(any_accepted, "no origin accepted a single step");
        for ((x, y), origin) in out.iter().zip(&data) {
            assert_eq!(*y, origin.label());
            assert!(x.iter_finite());
        }
    }

    #[test]
    fn penalty_growth_shrinks_excursions() {
        for seed in 1..=5u64 {
            let data = tiny_data(1, seed);
            let state = models::init_params(reduced(), seed).unwrap();
            let origin = vec![(data[0].data().clone(), data[0].label())];
            let mut last = f64::INFINITY;
            for exp in 0..=9 {
                let gamma = 10f64.powi(exp);
                let (out, _) = maximize_phase(&state, &origin, gamma, 5, 1.0).unwrap();
                let dist: f64 = out[0]
                    .0
                    .data()
                    .iter()
                    .zip(data[0].data().data())
                    .map(|(a, b)| (*a as f64 - *b as f64).powi(2))
                    .sum::<f64>()
                    .sqrt();
                assert!(
                    dist <= last + 1e-9,
                    "seed {seed}: distance grew from {last} to {dist} at gamma {gamma}"
                );
                last = dist;
            }
        }
    }

    #[test]
    fn zero_learning_rate_freezes_parameters() {
        let data = tiny_data(2, 7);
        let mut state = models::init_params(reduced(), 9).unwrap();
        let before = state.clone();
        let dataset = AugmentedDataset::new(data);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        minimize_phase(&mut state, &dataset, 5, 0.0, 3, &mut rng).unwrap();
        assert_eq!(state, before);
    }

    #[test]
    fn single_sample_descent_mostly_decreases() {
        let mut wins = 0;
        for seed in 1..=5u64 {
            let data = tiny_data(1, seed);
            let single = vec![data[0].clone()];
            let mut state = models::init_params(reduced(), seed).unwrap();
            let dataset = AugmentedDataset::new(single);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut losses = Vec::new();
            for _ in 0..10 {
                losses.push(
                    minimize_phase(&mut state, &dataset, 1, 1e-3, 1, &mut rng).unwrap(),
                );
            }
            if losses.windows(2).all(|w| w[1] <= w[0] + 1e-9) {
                wins += 1;
            }
        }
        assert!(wins >= 3, "descent failed on {} of 5 seeds", 5 - wins);
    }

    #[test]
    fn dataset_growth_accounting() {
        let data = tiny_data(4, 8);
        let config = TrainConfig {
            k: 3,
            batch: 4,
            t_min: 1,
            ..tiny_config()
        };
        let (_, telemetry) = train_one(reduced(), &data, 1.0, &config, 11).unwrap();
        assert_eq!(telemetry.records.len(), 3);
        let source = data.len();
        for (i, r) in telemetry.records.iter().enumerate() {
            assert_eq!(r.iteration, i + 1);
            assert_eq!(r.dataset_size, source + (i + 1) * 4);
        }
    }

    #[test]
    fn zero_perturbation_equals_matched_erm() {
        let data = tiny_data(3, 9);
        let config = TrainConfig {
            t_adv: 0,
            ..tiny_config()
        };
        let (ada, _) = train_one(reduced(), &data, 0.1, &config, 21).unwrap();
        let (erm, _) = train_erm(reduced(), &data, &config, 21).unwrap();
        assert_eq!(ada, erm);

        let config_eta = TrainConfig {
            eta_adv: 0.0,
            ..tiny_config()
        };
        let (ada_eta, _) = train_one(reduced(), &data, 0.1, &config_eta, 21).unwrap();
        assert_eq!(ada_eta, erm);
    }

    #[test]
    fn ensemble_matches_grid_and_serial_runs() {
        let data = tiny_data(3, 10);
        let config = tiny_config();
        let ensemble = train_ensemble(reduced(), &data, &config).unwrap();
        assert_eq!(ensemble.members.len(), 2);
        for (member, rho) in ensemble.members.iter().zip(&config.rho_grid) {
            assert_eq!(member.rho, *rho);
        }
        let again = train_ensemble(reduced(), &data, &config).unwrap();
        for (a, b) in ensemble.members.iter().zip(&again.members) {
            assert_eq!(a.state, b.state);
            assert_eq!(a.telemetry, b.telemetry);
        }
        // Each member must equal the standalone run with its derived seed.
        let (solo, _) = train_one(reduced(), &data, config.rho_grid[1], &config, config.seed + 1)
            .unwrap();
        assert_eq!(ensemble.members[1].state, solo);
    }

    #[test]
    fn lstm_training_is_deterministic() {
        let data = tiny_data(2, 11);
        let config = TrainConfig {
            rho_grid: vec![1.0],
            k: 1,
            t_adv: 1,
            t_min: 2,
            ..tiny_config()
        };
        let lstm = ModelConfig::Lstm(crate::models::LstmConfig::reduced());
        let (a, _) = train_one(lstm, &data, 1.0, &config, 2).unwrap();
        let (b, _) = train_one(lstm, &data, 1.0, &config, 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn degenerate_data_is_rejected() {
        let domains = vec![default_domain_params(0)];
        let all_falls = generate_matrix_dataset(&domains, 4, 1.0, 10, 6, 2.0, 3).unwrap();
        assert!(matches!(
            train_one(reduced(), &all_falls, 1.0, &tiny_config(), 1),
            Err(TrainError::DegenerateData)
        ));
        assert!(matches!(
            train_one(reduced(), &[], 1.0, &tiny_config(), 1),
            Err(TrainError::DegenerateData)
        ));
    }

    #[test]
    fn telemetry_serialization_is_stable() {
        let telemetry = Telemetry {
            rho: 0.001,
            gamma: 1000.0,
            seed: 7,
            warmup_mean_loss: Some(0.75),
            records: vec![IterationRecord {
                iteration: 1,
                mean_loss: 0.693147,
                mean_transport_cost: 0.000125,
                dataset_size: 116,
            }],
        };
        let mut buf = Vec::new();
        write_telemetry(&mut buf, &telemetry).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "# rho=0.001000 gamma=1000.000000 seed=7\n\
             # warmup_mean_loss=0.750000\n\
             iteration\tmean_loss\tmean_transport_cost\tdataset_size\n\
             1\t0.693147\t0.000125\t116\n"
        );
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            rho_grid: vec![1.0, 0.5],
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let empty = TrainConfig {
            rho_grid: vec![],
            ..TrainConfig::default()
        };
        assert!(empty.validate().is_err());
        let defaults = TrainConfig::default();
        assert_eq!(defaults.rho_grid, vec![0.001, 0.01, 0.1, 1.0, 4.0]);
        assert_eq!((defaults.k, defaults.t_adv, defaults.t_min), (100, 15, 100));
        assert_eq!(defaults.gamma_rule.gamma(4.0), 0.25);
    }
}
