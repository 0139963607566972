//! Central-finite-difference verification of the tape's analytic gradients.
//!
//! Numeric gradients come from the 64-bit straight-line implementations in
//! [`reference`](crate::autodiff::reference), so the check also catches
//! forward-pass disagreements between the tape and the reference.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{reference, Graph, NodeId, Padding, Tensor};

/// Relative error with an absolute floor, so near-zero gradients are judged
/// on absolute disagreement instead of blowing up the ratio.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

/// An operation instance to check, with its (small) input shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpUnderTest {
    Conv2d { h: usize, w: usize, cin: usize, k: usize, cout: usize },
    MaxPool2d { h: usize, w: usize, c: usize },
    Dense { features: usize, outputs: usize },
    Relu { len: usize },
    LstmCell { features: usize, hidden: usize },
    SoftmaxCrossEntropy { classes: usize },
    HalfSqNorm { len: usize },
    /// dense → softmax cross-entropy composite, differentiated end to end.
    DenseCeChain { features: usize, classes: usize },
}

impl OpUnderTest {
    /// Default small instances, one per differentiable operation.
    pub fn defaults() -> Vec<OpUnderTest> {
        vec![
            OpUnderTest::Conv2d { h: 5, w: 4, cin: 2, k: 3, cout: 2 },
            OpUnderTest::MaxPool2d { h: 4, w: 6, c: 2 },
            OpUnderTest::Dense { features: 4, outputs: 3 },
            OpUnderTest::Relu { len: 12 },
            OpUnderTest::LstmCell { features: 3, hidden: 4 },
            OpUnderTest::SoftmaxCrossEntropy { classes: 4 },
            OpUnderTest::HalfSqNorm { len: 6 },
            OpUnderTest::DenseCeChain { features: 3, classes: 3 },
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            OpUnderTest::Conv2d { .. } => "conv2d",
            OpUnderTest::MaxPool2d { .. } => "maxpool2d",
            OpUnderTest::Dense { .. } => "dense",
            OpUnderTest::Relu { .. } => "relu",
            OpUnderTest::LstmCell { .. } => "lstm_cell",
            OpUnderTest::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
            OpUnderTest::HalfSqNorm { .. } => "half_sq_norm",
            OpUnderTest::DenseCeChain { .. } => "dense_ce_chain",
        }
    }

    /// Linear (and exactly-differenced quadratic) maps are held to a far
    /// tighter bound than ops with genuine truncation error.
    fn tolerance(&self) -> f64 {
        match self {
            OpUnderTest::Dense { .. } | OpUnderTest::HalfSqNorm { .. } => 1e-6,
            _ => 1e-4,
        }
    }
}

/// Outcome of one gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub op: &'static str,
    pub seed: u64,
    /// Number of scalar coordinates differenced.
    pub coords: usize,
    /// Coordinates whose difference interval straddled a ReLU or pooling
    /// boundary, where a central difference is meaningless.
    pub skipped: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.coords > 0 && self.max_rel_error < self.tolerance
    }
}

/// Values on a dyadic grid in ±[0.1, 1], exactly representable in `f32`:
/// perturbations stay away from ReLU kinks and products stay exact in the
/// 64-bit reference.
pub(crate) fn sample_grid(rng: &mut ChaCha8Rng, len: usize) -> Vec<f32> {
    (0..len)
        .map(|_| {
            let mag = (103 + rng.gen_range(0..=921)) as f32 / 1024.0;
            if rng.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect()
}

/// As `sample_grid`, but resampled until every 2×2 pooling window has a clear
/// maximum, keeping the finite-difference step from flipping the argmax.
fn sample_pool_safe(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Vec<f32> {
    'attempt: loop {
        let data = sample_grid(rng, h * w * c);
        for oy in 0..h / 2 {
            for ox in 0..w / 2 {
                for ch in 0..c {
                    let mut vals = [0.0f32; 4];
                    for (slot, (dy, dx)) in
                        [(0, 0), (0, 1), (1, 0), (1, 1)].iter().enumerate()
                    {
                        vals[slot] = data[((oy * 2 + dy) * w + (ox * 2 + dx)) * c + ch];
                    }
                    let mut sorted = vals;
                    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
                    if sorted[0] - sorted[1] < 0.05 {
                        continue 'attempt;
                    }
                }
            }
        }
        return data;
    }
}

struct CheckCase {
    /// Flattened values of every differentiated input, in declaration order.
    inputs: Vec<Vec<f32>>,
    shapes: Vec<Vec<usize>>,
    build: Box<dyn Fn(&mut Graph, &[NodeId]) -> NodeId>,
    eval: Box<dyn Fn(&[Vec<f64>]) -> f64>,
}

fn make_case(op: OpUnderTest, rng: &mut ChaCha8Rng) -> CheckCase {
    match op {
        OpUnderTest::Conv2d { h, w, cin, k, cout } => {
            let input = sample_grid(rng, h * w * cin);
            let kernels = sample_grid(rng, k * k * cin * cout);
            let bias = sample_grid(rng, cout);
            let oh_ow_cout = h * w * cout;
            let proj = sample_grid(rng, oh_ow_cout);
            let proj_ref: Vec<f64> = proj.iter().map(|v| *v as f64).collect();
            CheckCase {
                inputs: vec![input, kernels, bias],
                shapes: vec![vec![h, w, cin], vec![k, k, cin, cout], vec![cout]],
                build: Box::new(move |g, ids| {
                    let y = g.conv2d(ids[0], ids[1], ids[2], Padding::Same).unwrap();
                    g.weighted_sum(y, &proj).unwrap()
                }),
                eval: Box::new(move |xs| {
                    let y = reference::conv2d(
                        &xs[0], h, w, cin, &xs[1], k, cout, &xs[2], (k - 1) / 2,
                    );
                    dot(&y, &proj_ref)
                }),
            }
        }
        OpUnderTest::MaxPool2d { h, w, c } => {
            let input = sample_pool_safe(rng, h, w, c);
            let out_len = (h / 2) * (w / 2) * c;
            let proj = sample_grid(rng, out_len);
            let proj_ref: Vec<f64> = proj.iter().map(|v| *v as f64).collect();
            CheckCase {
                inputs: vec![input],
                shapes: vec![vec![h, w, c]],
                build: Box::new(move |g, ids| {
                    let y = g.maxpool2d(ids[0]).unwrap();
                    g.weighted_sum(y, &proj).unwrap()
                }),
                eval: Box::new(move |xs| {
                    dot(&reference::maxpool2d(&xs[0], h, w, c), &proj_ref)
                }),
            }
        }
        OpUnderTest::Dense { features, outputs } => {
            let x = sample_grid(rng, features);
            let w = sample_grid(rng, features * outputs);
            let b = sample_grid(rng, outputs);
            let proj = sample_grid(rng, outputs);
            let proj_ref: Vec<f64> = proj.iter().map(|v| *v as f64).collect();
            CheckCase {
                inputs: vec![x, w, b],
                shapes: vec![vec![features], vec![features, outputs], vec![outputs]],
                build: Box::new(move |g, ids| {
                    let y = g.dense(ids[0], ids[1], ids[2]).unwrap();
                    g.weighted_sum(y, &proj).unwrap()
                }),
                eval: Box::new(move |xs| {
                    dot(&reference::dense(&xs[0], &xs[1], &xs[2], outputs), &proj_ref)
                }),
            }
        }
        OpUnderTest::Relu { len } => {
            let x = sample_grid(rng, len);
            let proj = sample_grid(rng, len);
            let proj_ref: Vec<f64> = proj.iter().map(|v| *v as f64).collect();
            CheckCase {
                inputs: vec![x],
                shapes: vec![vec![len]],
                build: Box::new(move |g, ids| {
                    let y = g.relu(ids[0]);
                    g.weighted_sum(y, &proj).unwrap()
                }),
                eval: Box::new(move |xs| dot(&reference::relu(&xs[0]), &proj_ref)),
            }
        }
        OpUnderTest::LstmCell { features, hidden } => {
            let mut inputs = vec![
                sample_grid(rng, features),
                sample_grid(rng, hidden),
                sample_grid(rng, hidden),
            ];
            let mut shapes = vec![vec![features], vec![hidden], vec![hidden]];
            for _gate in 0..4 {
                inputs.push(sample_grid(rng, features * hidden));
                shapes.push(vec![features, hidden]);
                inputs.push(sample_grid(rng, hidden * hidden));
                shapes.push(vec![hidden, hidden]);
                inputs.push(sample_grid(rng, hidden));
                shapes.push(vec![hidden]);
            }
            let proj_h = sample_grid(rng, hidden);
            let proj_c = sample_grid(rng, hidden);
            let proj_h_ref: Vec<f64> = proj_h.iter().map(|v| *v as f64).collect();
            let proj_c_ref: Vec<f64> = proj_c.iter().map(|v| *v as f64).collect();
            CheckCase {
                inputs,
                shapes,
                build: Box::new(move |g, ids| {
                    let params = crate::autodiff::LstmCellIds {
                        wi: ids[3],
                        ui: ids[4],
                        bi: ids[5],
                        wf: ids[6],
                        uf: ids[7],
                        bf: ids[8],
                        wg: ids[9],
                        ug: ids[10],
                        bg: ids[11],
                        wo: ids[12],
                        uo: ids[13],
                        bo: ids[14],
                    };
                    let (h_t, c_t) = g.lstm_cell(ids[0], ids[1], ids[2], params).unwrap();
                    let sh = g.weighted_sum(h_t, &proj_h).unwrap();
                    let sc = g.weighted_sum(c_t, &proj_c).unwrap();
                    g.scalar_axpy(sh, sc, 1.0).unwrap()
                }),
                eval: Box::new(move |xs| {
                    let params: [&[f64]; 12] = [
                        &xs[3], &xs[4], &xs[5], &xs[6], &xs[7], &xs[8], &xs[9], &xs[10],
                        &xs[11], &xs[12], &xs[13], &xs[14],
                    ];
                    let (h_t, c_t) =
                        reference::lstm_cell(&xs[0], &xs[1], &xs[2], params, hidden);
                    dot(&h_t, &proj_h_ref) + dot(&c_t, &proj_c_ref)
                }),
            }
        }
        OpUnderTest::SoftmaxCrossEntropy { classes } => {
            let logits = sample_grid(rng, classes);
            let label = rng.gen_range(0..classes);
            CheckCase {
                inputs: vec![logits],
                shapes: vec![vec![classes]],
                build: Box::new(move |g, ids| {
                    g.softmax_cross_entropy(ids[0], label).unwrap()
                }),
                eval: Box::new(move |xs| reference::softmax_cross_entropy(&xs[0], label)),
            }
        }
        OpUnderTest::HalfSqNorm { len } => {
            let x = sample_grid(rng, len);
            CheckCase {
                inputs: vec![x],
                shapes: vec![vec![len]],
                build: Box::new(move |g, ids| g.half_sq_norm(ids[0])),
                eval: Box::new(move |xs| reference::half_sq_norm(&xs[0])),
            }
        }
        OpUnderTest::DenseCeChain { features, classes } => {
            let x = sample_grid(rng, features);
            let w = sample_grid(rng, features * classes);
            let b = sample_grid(rng, classes);
            let label = rng.gen_range(0..classes);
            CheckCase {
                inputs: vec![x, w, b],
                shapes: vec![vec![features], vec![features, classes], vec![classes]],
                build: Box::new(move |g, ids| {
                    let logits = g.dense(ids[0], ids[1], ids[2]).unwrap();
                    g.softmax_cross_entropy(logits, label).unwrap()
                }),
                eval: Box::new(move |xs| {
                    let logits = reference::dense(&xs[0], &xs[1], &xs[2], classes);
                    reference::softmax_cross_entropy(&logits, label)
                }),
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Checks one op instance: runs the tape backward, then central differences
/// (step `1e-3` scaled per element) on the 64-bit reference, and reports the
/// worst relative disagreement over every differentiated coordinate.
pub fn grad_check(op: OpUnderTest, seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let case = make_case(op, &mut rng);

    let mut graph = Graph::new();
    let ids: Vec<NodeId> = case
        .inputs
        .iter()
        .zip(&case.shapes)
        .map(|(data, shape)| {
            let t = Tensor::from_vec(shape, data.clone()).expect("case shapes consistent");
            graph.leaf_owned(t, true)
        })
        .collect();
    let loss = (case.build)(&mut graph, &ids);
    graph.backward(loss).expect("loss is scalar");

    let base: Vec<Vec<f64>> = case
        .inputs
        .iter()
        .map(|v| v.iter().map(|x| *x as f64).collect())
        .collect();

    let mut max_err = 0.0f64;
    let mut coords = 0usize;
    for (i, id) in ids.iter().enumerate() {
        let analytic = graph.grad_tensor(*id);
        for j in 0..base[i].len() {
            let h = 1e-3 * base[i][j].abs().max(1.0);
            let mut plus = base.clone();
            plus[i][j] += h;
            let mut minus = base.clone();
            minus[i][j] -= h;
            let numeric = ((case.eval)(&plus) - (case.eval)(&minus)) / (2.0 * h);
            let err = rel_error(analytic.data()[j] as f64, numeric);
            if err > max_err {
                max_err = err;
            }
            coords += 1;
        }
    }

    GradCheckReport {
        op: op.name(),
        seed,
        coords,
        skipped: 0,
        max_rel_error: max_err,
        tolerance: op.tolerance(),
    }
}

/// Runs every default op instance across `seeds`.
pub fn grad_check_suite(seeds: &[u64]) -> Vec<GradCheckReport> {
    OpUnderTest::defaults()
        .into_iter()
        .flat_map(|op| seeds.iter().map(move |s| grad_check(op, *s)))
        .collect()
}
