//! The two classifier architectures, built on the differentiation tape.
//!
//! Both models expose logits, the embedding `g(θ_f; x)` used by the
//! transport cost, and a parameter split into embedding parameters θ_f and
//! classifier parameters θ_c, where θ_c is exactly the final dense layer.

use std::fs;
use std::io;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{
    self, read_checkpoint, reference, rel_error, write_checkpoint, CheckpointError, DiffError,
    GradCheckReport, Graph, LstmCellIds, NodeId, Padding, Tensor,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Cnn,
    Lstm,
}

/// Convolutional profile: conv → pool → conv → pool → fc1 → fc2, with
/// same-padding convs and 2×2/2 pools. The default profile takes 500×60
/// inputs through 64- and 128-map conv layers into a 256-wide first dense
/// layer; `reduced` is the scaled-down profile used by tests and oracles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnnConfig {
    pub input_rows: usize,
    pub input_cols: usize,
    pub conv1_maps: usize,
    pub conv2_maps: usize,
    pub kernel: usize,
    pub fc1_width: usize,
    pub classes: usize,
}

impl Default for CnnConfig {
    fn default() -> Self {
        CnnConfig {
            input_rows: 500,
            input_cols: 60,
            conv1_maps: 64,
            conv2_maps: 128,
            kernel: 5,
            fc1_width: 256,
            classes: 2,
        }
    }
}

impl CnnConfig {
    pub fn reduced() -> Self {
        CnnConfig {
            input_rows: 10,
            input_cols: 6,
            conv1_maps: 8,
            conv2_maps: 16,
            kernel: 5,
            fc1_width: 8,
            classes: 2,
        }
    }

    /// Flattened size after the second pool.
    pub fn flat_len(&self) -> usize {
        (self.input_rows / 2 / 2) * (self.input_cols / 2 / 2) * self.conv2_maps
    }

    fn validate(&self) -> Result<(), DiffError> {
        if self.kernel % 2 == 0 {
            return Err(DiffError::ShapeMismatch(
                "same-padding conv needs an odd kernel".into(),
            ));
        }
        if self.input_rows / 2 / 2 == 0 || self.input_cols / 2 / 2 == 0 {
            return Err(DiffError::ShapeMismatch(
                "input too small for two 2×2 pools".into(),
            ));
        }
        if self.classes < 2 || self.fc1_width == 0 || self.conv1_maps == 0 || self.conv2_maps == 0
        {
            return Err(DiffError::ShapeMismatch("degenerate layer width".into()));
        }
        Ok(())
    }
}

/// Recurrent profile: one LSTM cell iterated over the sample's rows, final
/// hidden state as the embedding, dense classifier on top. Defaults follow
/// the 500-step, 60-feature, 200-unit layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LstmConfig {
    pub steps: usize,
    pub features: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl Default for LstmConfig {
    fn default() -> Self {
        LstmConfig {
            steps: 500,
            features: 60,
            hidden: 200,
            classes: 2,
        }
    }
}

impl LstmConfig {
    pub fn reduced() -> Self {
        LstmConfig {
            steps: 10,
            features: 6,
            hidden: 8,
            classes: 2,
        }
    }

    fn validate(&self) -> Result<(), DiffError> {
        if self.steps == 0 || self.features == 0 || self.hidden == 0 || self.classes < 2 {
            return Err(DiffError::ShapeMismatch("degenerate LSTM config".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    Cnn(CnnConfig),
    Lstm(LstmConfig),
}

impl ModelConfig {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelConfig::Cnn(_) => ModelKind::Cnn,
            ModelConfig::Lstm(_) => ModelKind::Lstm,
        }
    }

    /// Expected `[rows, cols]` of input samples.
    pub fn input_shape(&self) -> [usize; 2] {
        match self {
            ModelConfig::Cnn(c) => [c.input_rows, c.input_cols],
            ModelConfig::Lstm(c) => [c.steps, c.features],
        }
    }

    pub fn embed_dim(&self) -> usize {
        match self {
            ModelConfig::Cnn(c) => c.fc1_width,
            ModelConfig::Lstm(c) => c.hidden,
        }
    }

    pub fn classes(&self) -> usize {
        match self {
            ModelConfig::Cnn(c) => c.classes,
            ModelConfig::Lstm(c) => c.classes,
        }
    }

    fn validate(&self) -> Result<(), DiffError> {
        match self {
            ModelConfig::Cnn(c) => c.validate(),
            ModelConfig::Lstm(c) => c.validate(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("sidecar: {0}")]
    Sidecar(#[from] serde_json::Error),
    #[error("parameter mismatch: {0}")]
    ParamMismatch(String),
}

/// Parameters plus architecture metadata. Immutable during forward passes;
/// updates need exclusive access.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    config: ModelConfig,
    embed_params: Vec<(String, Tensor)>,
    classifier_params: Vec<(String, Tensor)>,
}

fn shape_list(config: &ModelConfig) -> (Vec<(String, Vec<usize>)>, Vec<(String, Vec<usize>)>) {
    match config {
        ModelConfig::Cnn(c) => {
            let embed = vec![
                ("conv1.kernels".to_owned(), vec![c.kernel, c.kernel, 1, c.conv1_maps]),
                ("conv1.bias".to_owned(), vec![c.conv1_maps]),
                (
                    "conv2.kernels".to_owned(),
                    vec![c.kernel, c.kernel, c.conv1_maps, c.conv2_maps],
                ),
                ("conv2.bias".to_owned(), vec![c.conv2_maps]),
                ("fc1.weights".to_owned(), vec![c.flat_len(), c.fc1_width]),
                ("fc1.bias".to_owned(), vec![c.fc1_width]),
            ];
            let classifier = vec![
                ("fc2.weights".to_owned(), vec![c.fc1_width, c.classes]),
                ("fc2.bias".to_owned(), vec![c.classes]),
            ];
            (embed, classifier)
        }
        ModelConfig::Lstm(c) => {
            let mut embed = Vec::new();
            for gate in ["i", "f", "g", "o"] {
                embed.push((format!("lstm.w{gate}"), vec![c.features, c.hidden]));
                embed.push((format!("lstm.u{gate}"), vec![c.hidden, c.hidden]));
                embed.push((format!("lstm.b{gate}"), vec![c.hidden]));
            }
            let classifier = vec![
                ("fc.weights".to_owned(), vec![c.hidden, c.classes]),
                ("fc.bias".to_owned(), vec![c.classes]),
            ];
            (embed, classifier)
        }
    }
}

fn xavier_bound(shape: &[usize]) -> f64 {
    let (fan_in, fan_out) = match shape.len() {
        2 => (shape[0], shape[1]),
        4 => (shape[0] * shape[1] * shape[2], shape[0] * shape[1] * shape[3]),
        _ => unreachable!("weights are 2-D or 4-D"),
    };
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Uniform `(−a, a)` with `a = sqrt(6 / (fan_in + fan_out))` per weight
/// tensor, zero biases except the LSTM forget-gate bias at 1.0. Tensors are
/// drawn in declaration order; biases consume no randomness, so parameter
/// streams stay aligned across configs that share weight shapes.
pub fn init_params(config: ModelConfig, seed: u64) -> Result<ModelState, DiffError> {
    config.validate()?;
    let (embed_shapes, classifier_shapes) = shape_list(&config);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut build = |shapes: Vec<(String, Vec<usize>)>| -> Vec<(String, Tensor)> {
        shapes
            .into_iter()
            .map(|(name, shape)| {
                let tensor = if shape.len() == 1 {
                    let fill = if name == "lstm.bf" { 1.0 } else { 0.0 };
                    Tensor::filled(&shape, fill)
                } else {
                    let a = xavier_bound(&shape);
                    let len: usize = shape.iter().product();
                    let data: Vec<f32> = (0..len)
                        .map(|_| (a * (2.0 * rng.gen::<f64>() - 1.0)) as f32)
                        .collect();
                    Tensor::from_vec(&shape, data).expect("shape/len agree")
                };
                (name, tensor)
            })
            .collect()
    };
    let embed_params = build(embed_shapes);
    let classifier_params = build(classifier_shapes);
    Ok(ModelState {
        config,
        embed_params,
        classifier_params,
    })
}

impl ModelState {
    /// All-zero parameters; handy as a fixed point for tests.
    pub fn zeros(config: ModelConfig) -> Result<ModelState, DiffError> {
        config.validate()?;
        let (embed_shapes, classifier_shapes) = shape_list(&config);
        let build = |shapes: Vec<(String, Vec<usize>)>| {
            shapes
                .into_iter()
                .map(|(name, shape)| (name, Tensor::zeros(&shape)))
                .collect()
        };
        Ok(ModelState {
            config,
            embed_params: build(embed_shapes),
            classifier_params: build(classifier_shapes),
        })
    }

    /// Rebuilds a state from named tensors in checkpoint order, validating
    /// names and shapes against the config.
    pub fn from_named_tensors(
        config: ModelConfig,
        tensors: Vec<(String, Tensor)>,
    ) -> Result<ModelState, ModelError> {
        config.validate().map_err(ModelError::Diff)?;
        let (embed_shapes, classifier_shapes) = shape_list(&config);
        let expected: Vec<&(String, Vec<usize>)> =
            embed_shapes.iter().chain(classifier_shapes.iter()).collect();
        if tensors.len() != expected.len() {
            return Err(ModelError::ParamMismatch(format!(
                "expected {} tensors, got {}",
                expected.len(),
                tensors.len()
            )));
        }
        for ((name, tensor), (want_name, want_shape)) in tensors.iter().zip(&expected) {
            if name != want_name {
                return Err(ModelError::ParamMismatch(format!(
                    "expected tensor {want_name}, got {name}"
                )));
            }
            if tensor.shape() != want_shape.as_slice() {
                return Err(ModelError::ParamMismatch(format!(
                    "{name}: expected shape {want_shape:?}, got {:?}",
                    tensor.shape()
                )));
            }
        }
        let mut iter = tensors.into_iter();
        let embed_params: Vec<_> = iter.by_ref().take(embed_shapes.len()).collect();
        let classifier_params: Vec<_> = iter.collect();
        Ok(ModelState {
            config,
            embed_params,
            classifier_params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind()
    }

    /// θ_f, in forward order.
    pub fn embed_params(&self) -> &[(String, Tensor)] {
        &self.embed_params
    }

    /// θ_c: exactly the final dense layer.
    pub fn classifier_params(&self) -> &[(String, Tensor)] {
        &self.classifier_params
    }

    pub fn all_params(&self) -> impl Iterator<Item = &(String, Tensor)> {
        self.embed_params.iter().chain(self.classifier_params.iter())
    }

    pub fn all_params_mut(&mut self) -> impl Iterator<Item = &mut (String, Tensor)> {
        self.embed_params
            .iter_mut()
            .chain(self.classifier_params.iter_mut())
    }

    pub fn param_tensor(&self, name: &str) -> Option<&Tensor> {
        self.all_params().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn param_tensor_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.all_params_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn classifier_scalar_count(&self) -> usize {
        self.classifier_params.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn scalar_count(&self) -> usize {
        self.all_params().map(|(_, t)| t.len()).sum()
    }
}

/// One recorded forward pass. The graph stays open: callers may append loss
/// terms before running backward.
pub struct ForwardPass {
    pub graph: Graph,
    pub input: NodeId,
    pub embedding: NodeId,
    pub logits: NodeId,
    /// Node ids of every parameter, in `all_params` order.
    pub params: Vec<NodeId>,
}

/// Records a forward pass for `input` (shape `[rows, cols]` per the config).
/// `input_grad` / `param_grad` choose which gradients the eventual backward
/// sweep materializes.
pub fn forward(
    state: &ModelState,
    input: &Tensor,
    input_grad: bool,
    param_grad: bool,
) -> Result<ForwardPass, DiffError> {
    let want = state.config.input_shape();
    if input.shape() != want {
        return Err(DiffError::ShapeMismatch(format!(
            "model expects input {want:?}, got {:?}",
            input.shape()
        )));
    }
    let mut graph = Graph::new();
    let input_id = graph.leaf(input, input_grad);
    let params: Vec<NodeId> = state
        .all_params()
        .map(|(_, t)| graph.leaf(t, param_grad))
        .collect();

    let (embedding, logits) = match &state.config {
        ModelConfig::Cnn(c) => {
            let x3 = graph.reshape(input_id, &[c.input_rows, c.input_cols, 1])?;
            let c1 = graph.conv2d(x3, params[0], params[1], Padding::Same)?;
            let r1 = graph.relu(c1);
            let p1 = graph.maxpool2d(r1)?;
            let c2 = graph.conv2d(p1, params[2], params[3], Padding::Same)?;
            let r2 = graph.relu(c2);
            let p2 = graph.maxpool2d(r2)?;
            let flat_len = graph.value(p2).len();
            let flat = graph.reshape(p2, &[flat_len])?;
            let fc1 = graph.dense(flat, params[4], params[5])?;
            let embedding = graph.relu(fc1);
            let logits = graph.dense(embedding, params[6], params[7])?;
            (embedding, logits)
        }
        ModelConfig::Lstm(c) => {
            let ids = LstmCellIds {
                wi: params[0],
                ui: params[1],
                bi: params[2],
                wf: params[3],
                uf: params[4],
                bf: params[5],
                wg: params[6],
                ug: params[7],
                bg: params[8],
                wo: params[9],
                uo: params[10],
                bo: params[11],
            };
            let zero = Tensor::zeros(&[c.hidden]);
            let mut h = graph.leaf(&zero, false);
            let mut cell = graph.leaf(&zero, false);
            for t in 0..c.steps {
                let x_t = graph.row(input_id, t)?;
                let (nh, nc) = graph.lstm_cell(x_t, h, cell, ids)?;
                h = nh;
                cell = nc;
            }
            let logits = graph.dense(h, params[12], params[13])?;
            (h, logits)
        }
    };

    Ok(ForwardPass {
        graph,
        input: input_id,
        embedding,
        logits,
        params,
    })
}

/// The embedding `g(θ_f; x)`, identical to the forward pass tuple's value.
pub fn embed(state: &ModelState, input: &Tensor) -> Result<Tensor, DiffError> {
    let pass = forward(state, input, false, false)?;
    Ok(pass.graph.value(pass.embedding).clone())
}

/// Index of the largest value; ties resolve to the first maximum.
pub fn argmax_tie_first(values: &[f32]) -> usize {
    let mut best = 0usize;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Predicted class label for one sample.
pub fn predict(state: &ModelState, input: &Tensor) -> Result<u8, DiffError> {
    let pass = forward(state, input, false, false)?;
    Ok(argmax_tie_first(pass.graph.value(pass.logits).data()) as u8)
}

/// Softmax probabilities of a logit slice, computed in 64-bit.
pub fn softmax64(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v as f64));
    let exps: Vec<f64> = logits.iter().map(|v| (*v as f64 - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.iter().map(|e| e / z).collect()
}

fn params_as_f64(state: &ModelState) -> Vec<Vec<f64>> {
    state
        .all_params()
        .map(|(_, t)| t.data().iter().map(|v| *v as f64).collect())
        .collect()
}

/// Checks input gradients through the embedding against central finite
/// differences of the 64-bit reference forward (step `1e-4` scaled per
/// element). For the convolutional model a coordinate is skipped when the
/// difference interval crosses a ReLU or pooling boundary, where central
/// differences are meaningless; the report counts such skips. Intended for
/// the reduced profiles.
pub fn embed_input_grad_check(config: ModelConfig, seed: u64) -> Result<GradCheckReport, DiffError> {
    let state = init_params(config, seed)?;
    let [rows, cols] = config.input_shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input_data = autodiff::sample_grid(&mut rng, rows * cols);
    let proj = autodiff::sample_grid(&mut rng, config.embed_dim());
    let input = Tensor::from_vec(&[rows, cols], input_data.clone()).expect("input shape");

    let mut pass = forward(&state, &input, true, false)?;
    let loss = pass.graph.weighted_sum(pass.embedding, &proj)?;
    pass.graph.backward(loss)?;
    let analytic = pass.graph.grad_tensor(pass.input);

    let p64 = params_as_f64(&state);
    let proj64: Vec<f64> = proj.iter().map(|v| *v as f64).collect();
    let base: Vec<f64> = input_data.iter().map(|v| *v as f64).collect();

    let eval: Box<dyn Fn(&[f64]) -> (f64, Option<reference::ActivationTrace>)> = match config {
        ModelConfig::Cnn(c) => {
            let geom = reference::SmallCnnGeom {
                rows: c.input_rows,
                cols: c.input_cols,
                maps1: c.conv1_maps,
                maps2: c.conv2_maps,
                kernel: c.kernel,
                embed: c.fc1_width,
                classes: c.classes,
            };
            let p = p64.clone();
            Box::new(move |x| {
                let params: [&[f64]; 8] = std::array::from_fn(|i| p[i].as_slice());
                let (emb, _, trace) = reference::small_cnn_forward_traced(x, params, geom);
                let v = emb.iter().zip(&proj64).map(|(a, b)| a * b).sum();
                (v, Some(trace))
            })
        }
        ModelConfig::Lstm(c) => {
            let p = p64.clone();
            Box::new(move |x| {
                let params: [&[f64]; 12] = std::array::from_fn(|i| p[i].as_slice());
                let mut h = vec![0.0f64; c.hidden];
                let mut cell = vec![0.0f64; c.hidden];
                for t in 0..c.steps {
                    let xt = &x[t * c.features..(t + 1) * c.features];
                    let (nh, nc) = reference::lstm_cell(xt, &h, &cell, params, c.hidden);
                    h = nh;
                    cell = nc;
                }
                let v = h.iter().zip(&proj64).map(|(a, b)| a * b).sum();
                (v, None)
            })
        }
    };

    let mut max_err = 0.0f64;
    let mut coords = 0usize;
    let mut skipped = 0usize;
    for j in 0..base.len() {
        let h = 1e-4 * base[j].abs().max(1.0);
        let mut plus = base.clone();
        plus[j] += h;
        let mut minus = base.clone();
        minus[j] -= h;
        let (fp, tp) = eval(&plus);
        let (fm, tm) = eval(&minus);
        if tp != tm {
            skipped += 1;
            continue;
        }
        let numeric = (fp - fm) / (2.0 * h);
        let err = rel_error(analytic.data()[j] as f64, numeric);
        if err > max_err {
            max_err = err;
        }
        coords += 1;
    }

    Ok(GradCheckReport {
        op: match config.kind() {
            ModelKind::Cnn => "cnn_embed_input",
            ModelKind::Lstm => "lstm_embed_input",
        },
        seed,
        coords,
        skipped,
        max_rel_error: max_err,
        tolerance: 1e-4,
    })
}

/// Sidecar metadata stored next to every checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub config: ModelConfig,
    pub seed: u64,
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_owned();
    name.push(".json");
    path.with_file_name(name)
}

/// Writes the parameters at `path` and a JSON sidecar (kind, config, seed)
/// at `path.json`.
pub fn save_model(path: &Path, state: &ModelState, seed: u64) -> Result<(), ModelError> {
    let tensors: Vec<(String, Tensor)> = state
        .all_params()
        .map(|(n, t)| (n.clone(), t.clone()))
        .collect();
    let file = fs::File::create(path)?;
    write_checkpoint(io::BufWriter::new(file), &tensors)?;
    let meta = ModelMeta {
        config: state.config,
        seed,
    };
    let mut json = serde_json::to_string_pretty(&meta)?;
    json.push('\n');
    fs::write(sidecar_path(path), json)?;
    Ok(())
}

/// Loads a checkpoint and its sidecar back into a validated state.
pub fn load_model(path: &Path) -> Result<(ModelState, ModelMeta), ModelError> {
    let meta: ModelMeta = serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)?;
    let tensors = read_checkpoint(io::BufReader::new(fs::File::open(path)?))?;
    let state = ModelState::from_named_tensors(meta.config, tensors)?;
    Ok((state, meta))
}
