use crate::autodiff::{DiffError, Tensor};

/// Handle to a recorded node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// Convolution padding mode. `Same` preserves H×W and requires an odd kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Same,
    Valid,
}

/// Parameter nodes for one LSTM cell: per gate (input, forget, candidate,
/// output) an input weight `w: [features, hidden]`, a recurrent weight
/// `u: [hidden, hidden]`, and a bias `b: [hidden]`.
#[derive(Debug, Clone, Copy)]
pub struct LstmCellIds {
    pub wi: NodeId,
    pub ui: NodeId,
    pub bi: NodeId,
    pub wf: NodeId,
    pub uf: NodeId,
    pub bf: NodeId,
    pub wg: NodeId,
    pub ug: NodeId,
    pub bg: NodeId,
    pub wo: NodeId,
    pub uo: NodeId,
    pub bo: NodeId,
}

struct LstmSaved {
    gate_i: Vec<f32>,
    gate_f: Vec<f32>,
    gate_g: Vec<f32>,
    gate_o: Vec<f32>,
    tanh_c: Vec<f32>,
}

enum Op {
    Leaf,
    Conv2d {
        input: NodeId,
        kernels: NodeId,
        bias: NodeId,
        padding: Padding,
    },
    MaxPool2d {
        input: NodeId,
        argmax: Vec<usize>,
    },
    Dense {
        input: NodeId,
        weights: NodeId,
        bias: NodeId,
    },
    Relu {
        input: NodeId,
    },
    LstmCell {
        x: NodeId,
        h_prev: NodeId,
        c_prev: NodeId,
        params: LstmCellIds,
        saved: LstmSaved,
        /// Companion node carrying c_t; patched right after construction.
        state: NodeId,
    },
    /// Second output (c_t) of an LSTM cell node; gradient is consumed by the
    /// cell node's backward.
    LstmCellState,
    Row {
        input: NodeId,
        index: usize,
    },
    Reshape {
        input: NodeId,
    },
    Sub {
        a: NodeId,
        b: NodeId,
    },
    HalfSqNorm {
        input: NodeId,
    },
    SoftmaxCrossEntropy {
        logits: NodeId,
        label: usize,
        probs: Vec<f64>,
    },
    WeightedSum {
        input: NodeId,
        weights: Option<Vec<f32>>,
    },
    /// Scalar combination `a + coeff_b · b`.
    ScalarAxpy {
        a: NodeId,
        b: NodeId,
        coeff_b: f64,
    },
}

struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// Recording tape. Operations evaluate eagerly; `backward` replays the tape
/// in exact reverse order, accumulating (summing) gradients into every node
/// that requires them.
///
/// A graph is single-threaded during record and backward; independent graphs
/// are fully independent.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f32>>>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Forward value of a node.
    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient buffer of a node after `backward`, if one was accumulated.
    pub fn grad(&self, id: NodeId) -> Option<&[f32]> {
        self.grads[id.0].as_deref()
    }

    /// Gradient of a node as a tensor shaped like its value; zeros when the
    /// node received no gradient.
    pub fn grad_tensor(&self, id: NodeId) -> Tensor {
        let shape = self.nodes[id.0].value.shape().to_vec();
        match &self.grads[id.0] {
            Some(g) => Tensor::from_vec(&shape, g.clone()).expect("grad buffer matches shape"),
            None => Tensor::zeros(&shape),
        }
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        self.grads.push(None);
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Records a leaf holding a copy of `t`. Only leaves flagged with
    /// `needs_grad` (and nodes computed from them) receive gradients.
    pub fn leaf(&mut self, t: &Tensor, needs_grad: bool) -> NodeId {
        self.push(Op::Leaf, t.clone(), needs_grad)
    }

    pub fn leaf_owned(&mut self, t: Tensor, needs_grad: bool) -> NodeId {
        self.push(Op::Leaf, t, needs_grad)
    }

    fn dims2(&self, id: NodeId, what: &str) -> Result<(usize, usize), DiffError> {
        let s = self.nodes[id.0].value.shape();
        if s.len() != 2 {
            return Err(DiffError::ShapeMismatch(format!(
                "{what} must be 2-D, got {s:?}"
            )));
        }
        Ok((s[0], s[1]))
    }

    fn dims3(&self, id: NodeId, what: &str) -> Result<(usize, usize, usize), DiffError> {
        let s = self.nodes[id.0].value.shape();
        if s.len() != 3 {
            return Err(DiffError::ShapeMismatch(format!(
                "{what} must be 3-D, got {s:?}"
            )));
        }
        Ok((s[0], s[1], s[2]))
    }

    /// 2-D cross-correlation plus bias, stride 1.
    ///
    /// `input: [H, W, Cin]`, `kernels: [K, K, Cin, Cout]`, `bias: [Cout]`.
    /// `Same` padding preserves H×W and requires odd K; `Valid` yields
    /// `[H-K+1, W-K+1, Cout]`.
    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernels: NodeId,
        bias: NodeId,
        padding: Padding,
    ) -> Result<NodeId, DiffError> {
        let (h, w, cin) = self.dims3(input, "conv2d input")?;
        let ks = self.nodes[kernels.0].value.shape();
        if ks.len() != 4 || ks[0] != ks[1] {
            return Err(DiffError::ShapeMismatch(format!(
                "conv2d kernels must be [K, K, Cin, Cout], got {ks:?}"
            )));
        }
        let (k, kcin, cout) = (ks[0], ks[2], ks[3]);
        if kcin != cin {
            return Err(DiffError::ShapeMismatch(format!(
                "conv2d kernels expect {kcin} input channels, input has {cin}"
            )));
        }
        if self.nodes[bias.0].value.shape() != [cout] {
            return Err(DiffError::ShapeMismatch(format!(
                "conv2d bias must be [{cout}], got {:?}",
                self.nodes[bias.0].value.shape()
            )));
        }
        if padding == Padding::Same && k % 2 == 0 {
            return Err(DiffError::ShapeMismatch(format!(
                "same-padding requires an odd kernel, got {k}"
            )));
        }
        let (oh, ow, pad) = match padding {
            Padding::Same => (h, w, (k - 1) / 2),
            Padding::Valid => {
                if h < k || w < k {
                    return Err(DiffError::ShapeMismatch(format!(
                        "valid conv2d needs input at least {k}×{k}, got {h}×{w}"
                    )));
                }
                (h - k + 1, w - k + 1, 0)
            }
        };

        let x = self.nodes[input.0].value.data();
        let kd = self.nodes[kernels.0].value.data();
        let bd = self.nodes[bias.0].value.data();
        let mut out = vec![0.0f32; oh * ow * cout];
        let mut acc = vec![0.0f64; cout];
        for oy in 0..oh {
            for ox in 0..ow {
                for (a, b) in acc.iter_mut().zip(bd) {
                    *a = *b as f64;
                }
                for dy in 0..k {
                    let iy = oy + dy;
                    let Some(iy) = iy.checked_sub(pad).filter(|v| *v < h) else {
                        continue;
                    };
                    for dx in 0..k {
                        let ix = ox + dx;
                        let Some(ix) = ix.checked_sub(pad).filter(|v| *v < w) else {
                            continue;
                        };
                        let ibase = (iy * w + ix) * cin;
                        for ci in 0..cin {
                            let v = x[ibase + ci] as f64;
                            let kbase = ((dy * k + dx) * cin + ci) * cout;
                            for co in 0..cout {
                                acc[co] += v * kd[kbase + co] as f64;
                            }
                        }
                    }
                }
                let obase = (oy * ow + ox) * cout;
                for co in 0..cout {
                    out[obase + co] = acc[co] as f32;
                }
            }
        }
        let needs = self.needs(input) || self.needs(kernels) || self.needs(bias);
        let value = Tensor::from_vec(&[oh, ow, cout], out).expect("conv output shape");
        Ok(self.push(
            Op::Conv2d {
                input,
                kernels,
                bias,
                padding,
            },
            value,
            needs,
        ))
    }

    /// 2×2 max pooling with stride 2: `[H, W, C]` → `[⌊H/2⌋, ⌊W/2⌋, C]`.
    /// Ties resolve to the first element in row-major window order, which is
    /// also where the whole window's gradient is routed.
    pub fn maxpool2d(&mut self, input: NodeId) -> Result<NodeId, DiffError> {
        let (h, w, c) = self.dims3(input, "maxpool2d input")?;
        if h < 2 || w < 2 {
            return Err(DiffError::ShapeMismatch(format!(
                "maxpool2d needs at least 2×2 input, got {h}×{w}"
            )));
        }
        let (oh, ow) = (h / 2, w / 2);
        let x = self.nodes[input.0].value.data();
        let mut out = vec![0.0f32; oh * ow * c];
        let mut argmax = vec![0usize; oh * ow * c];
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let idx = ((oy * 2 + dy) * w + (ox * 2 + dx)) * c + ch;
                            if x[idx] > best {
                                best = x[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let o = (oy * ow + ox) * c + ch;
                    out[o] = best;
                    argmax[o] = best_idx;
                }
            }
        }
        let needs = self.needs(input);
        let value = Tensor::from_vec(&[oh, ow, c], out).expect("pool output shape");
        Ok(self.push(Op::MaxPool2d { input, argmax }, value, needs))
    }

    /// Fully connected layer: `input: [n]`, `weights: [n, m]`, `bias: [m]` →
    /// `input · weights + bias`.
    pub fn dense(
        &mut self,
        input: NodeId,
        weights: NodeId,
        bias: NodeId,
    ) -> Result<NodeId, DiffError> {
        let is = self.nodes[input.0].value.shape();
        if is.len() != 1 {
            return Err(DiffError::ShapeMismatch(format!(
                "dense input must be 1-D, got {is:?}"
            )));
        }
        let n = is[0];
        let (wn, m) = self.dims2(weights, "dense weights")?;
        if wn != n {
            return Err(DiffError::ShapeMismatch(format!(
                "dense weights are [{wn}, {m}] but input has {n} features"
            )));
        }
        if self.nodes[bias.0].value.shape() != [m] {
            return Err(DiffError::ShapeMismatch(format!(
                "dense bias must be [{m}], got {:?}",
                self.nodes[bias.0].value.shape()
            )));
        }
        let x = self.nodes[input.0].value.data();
        let wd = self.nodes[weights.0].value.data();
        let bd = self.nodes[bias.0].value.data();
        let mut acc: Vec<f64> = bd.iter().map(|b| *b as f64).collect();
        for i in 0..n {
            let v = x[i] as f64;
            let base = i * m;
            for j in 0..m {
                acc[j] += v * wd[base + j] as f64;
            }
        }
        let out: Vec<f32> = acc.iter().map(|a| *a as f32).collect();
        let needs = self.needs(input) || self.needs(weights) || self.needs(bias);
        let value = Tensor::from_vec(&[m], out).expect("dense output shape");
        Ok(self.push(
            Op::Dense {
                input,
                weights,
                bias,
            },
            value,
            needs,
        ))
    }

    /// Elementwise `max(0, x)`; the backward mask passes only where `x > 0`.
    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let value = {
            let t = &self.nodes[input.0].value;
            let data = t.data().iter().map(|v| v.max(0.0)).collect();
            Tensor::from_vec(t.shape(), data).expect("relu preserves shape")
        };
        let needs = self.needs(input);
        self.push(Op::Relu { input }, value, needs)
    }

    /// Standard LSTM cell. Gates `i, f, o = σ(w·x + u·h + b)`,
    /// candidate `g = tanh(·)`, `c_t = f ⊙ c_prev + i ⊙ g`,
    /// `h_t = o ⊙ tanh(c_t)`. Returns `(h_t, c_t)` node ids.
    pub fn lstm_cell(
        &mut self,
        x: NodeId,
        h_prev: NodeId,
        c_prev: NodeId,
        params: LstmCellIds,
    ) -> Result<(NodeId, NodeId), DiffError> {
        let xs = self.nodes[x.0].value.shape();
        if xs.len() != 1 {
            return Err(DiffError::ShapeMismatch(format!(
                "lstm_cell input must be 1-D, got {xs:?}"
            )));
        }
        let f_dim = xs[0];
        let (wn, hidden) = self.dims2(params.wi, "lstm wi")?;
        if wn != f_dim {
            return Err(DiffError::ShapeMismatch(format!(
                "lstm input weights are [{wn}, {hidden}] but input has {f_dim} features"
            )));
        }
        for (name, id, rows, cols) in [
            ("wf", params.wf, f_dim, hidden),
            ("wg", params.wg, f_dim, hidden),
            ("wo", params.wo, f_dim, hidden),
            ("ui", params.ui, hidden, hidden),
            ("uf", params.uf, hidden, hidden),
            ("ug", params.ug, hidden, hidden),
            ("uo", params.uo, hidden, hidden),
        ] {
            if self.nodes[id.0].value.shape() != [rows, cols] {
                return Err(DiffError::ShapeMismatch(format!(
                    "lstm {name} must be [{rows}, {cols}], got {:?}",
                    self.nodes[id.0].value.shape()
                )));
            }
        }
        for (name, id) in [
            ("bi", params.bi),
            ("bf", params.bf),
            ("bg", params.bg),
            ("bo", params.bo),
        ] {
            if self.nodes[id.0].value.shape() != [hidden] {
                return Err(DiffError::ShapeMismatch(format!(
                    "lstm {name} must be [{hidden}], got {:?}",
                    self.nodes[id.0].value.shape()
                )));
            }
        }
        for (name, id, len) in [
            ("h_prev", h_prev, hidden),
            ("c_prev", c_prev, hidden),
        ] {
            if self.nodes[id.0].value.shape() != [len] {
                return Err(DiffError::ShapeMismatch(format!(
                    "lstm {name} must be [{len}], got {:?}",
                    self.nodes[id.0].value.shape()
                )));
            }
        }

        let preact = |graph: &Graph, w: NodeId, u: NodeId, b: NodeId| -> Vec<f64> {
            let xd = graph.nodes[x.0].value.data();
            let hd = graph.nodes[h_prev.0].value.data();
            let wd = graph.nodes[w.0].value.data();
            let ud = graph.nodes[u.0].value.data();
            let bd = graph.nodes[b.0].value.data();
            let mut acc: Vec<f64> = bd.iter().map(|v| *v as f64).collect();
            for i in 0..f_dim {
                let v = xd[i] as f64;
                let base = i * hidden;
                for j in 0..hidden {
                    acc[j] += v * wd[base + j] as f64;
                }
            }
            for i in 0..hidden {
                let v = hd[i] as f64;
                let base = i * hidden;
                for j in 0..hidden {
                    acc[j] += v * ud[base + j] as f64;
                }
            }
            acc
        };
        let sigmoid = |v: f64| 1.0 / (1.0 + (-v).exp());

        let gate_i: Vec<f32> = preact(self, params.wi, params.ui, params.bi)
            .iter()
            .map(|v| sigmoid(*v) as f32)
            .collect();
        let gate_f: Vec<f32> = preact(self, params.wf, params.uf, params.bf)
            .iter()
            .map(|v| sigmoid(*v) as f32)
            .collect();
        let gate_g: Vec<f32> = preact(self, params.wg, params.ug, params.bg)
            .iter()
            .map(|v| v.tanh() as f32)
            .collect();
        let gate_o: Vec<f32> = preact(self, params.wo, params.uo, params.bo)
            .iter()
            .map(|v| sigmoid(*v) as f32)
            .collect();

        let cd = self.nodes[c_prev.0].value.data();
        let mut c_t = vec![0.0f32; hidden];
        let mut tanh_c = vec![0.0f32; hidden];
        let mut h_t = vec![0.0f32; hidden];
        for j in 0..hidden {
            c_t[j] = gate_f[j] * cd[j] + gate_i[j] * gate_g[j];
            tanh_c[j] = (c_t[j] as f64).tanh() as f32;
            h_t[j] = gate_o[j] * tanh_c[j];
        }

        let needs = self.needs(x)
            || self.needs(h_prev)
            || self.needs(c_prev)
            || [
                params.wi, params.ui, params.bi, params.wf, params.uf, params.bf, params.wg,
                params.ug, params.bg, params.wo, params.uo, params.bo,
            ]
            .iter()
            .any(|p| self.needs(*p));

        let saved = LstmSaved {
            gate_i,
            gate_f,
            gate_g,
            gate_o,
            tanh_c,
        };
        let h_value = Tensor::from_vec(&[hidden], h_t).expect("h_t shape");
        let c_value = Tensor::from_vec(&[hidden], c_t).expect("c_t shape");
        let cell = self.push(
            Op::LstmCell {
                x,
                h_prev,
                c_prev,
                params,
                saved,
                state: NodeId(usize::MAX),
            },
            h_value,
            needs,
        );
        let state = self.push(Op::LstmCellState, c_value, needs);
        if let Op::LstmCell { state: slot, .. } = &mut self.nodes[cell.0].op {
            *slot = state;
        }
        Ok((cell, state))
    }

    /// Row `index` of a 2-D tensor as a 1-D tensor.
    pub fn row(&mut self, input: NodeId, index: usize) -> Result<NodeId, DiffError> {
        let (rows, cols) = self.dims2(input, "row input")?;
        if index >= rows {
            return Err(DiffError::ShapeMismatch(format!(
                "row {index} out of range for {rows} rows"
            )));
        }
        let value = {
            let t = &self.nodes[input.0].value;
            Tensor::from_vec(&[cols], t.row(index).to_vec()).expect("row shape")
        };
        let needs = self.needs(input);
        Ok(self.push(Op::Row { input, index }, value, needs))
    }

    /// Same buffer under a new shape with identical element count.
    pub fn reshape(&mut self, input: NodeId, shape: &[usize]) -> Result<NodeId, DiffError> {
        let len: usize = shape.iter().product();
        if len != self.nodes[input.0].value.len() {
            return Err(DiffError::ShapeMismatch(format!(
                "cannot reshape {} values into {:?}",
                self.nodes[input.0].value.len(),
                shape
            )));
        }
        let value = Tensor::from_vec(shape, self.nodes[input.0].value.data().to_vec())
            .expect("reshape length checked");
        let needs = self.needs(input);
        Ok(self.push(Op::Reshape { input }, value, needs))
    }

    /// Elementwise `a - b`; shapes must match exactly.
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        if self.nodes[a.0].value.shape() != self.nodes[b.0].value.shape() {
            return Err(DiffError::ShapeMismatch(format!(
                "sub of {:?} and {:?}",
                self.nodes[a.0].value.shape(),
                self.nodes[b.0].value.shape()
            )));
        }
        let data = self.nodes[a.0]
            .value
            .data()
            .iter()
            .zip(self.nodes[b.0].value.data())
            .map(|(x, y)| x - y)
            .collect();
        let value =
            Tensor::from_vec(self.nodes[a.0].value.shape(), data).expect("sub preserves shape");
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Sub { a, b }, value, needs))
    }

    /// Scalar `½ · Σ vᵢ²`, accumulated in 64-bit.
    pub fn half_sq_norm(&mut self, input: NodeId) -> NodeId {
        let s: f64 = self.nodes[input.0]
            .value
            .data()
            .iter()
            .map(|v| (*v as f64) * (*v as f64))
            .sum();
        let needs = self.needs(input);
        self.push(
            Op::HalfSqNorm { input },
            Tensor::scalar((0.5 * s) as f32),
            needs,
        )
    }

    /// `−log softmax(logits)[label]`, computed with max-subtraction.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: NodeId,
        label: usize,
    ) -> Result<NodeId, DiffError> {
        let ls = self.nodes[logits.0].value.shape();
        if ls.len() != 1 || ls[0] < 2 {
            return Err(DiffError::ShapeMismatch(format!(
                "logits must be 1-D with at least 2 classes, got {ls:?}"
            )));
        }
        let classes = ls[0];
        if label >= classes {
            return Err(DiffError::BadLabel { label, classes });
        }
        let x = self.nodes[logits.0].value.data();
        let max = x.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v as f64));
        let exps: Vec<f64> = x.iter().map(|v| (*v as f64 - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let probs: Vec<f64> = exps.iter().map(|e| e / z).collect();
        let loss = -(x[label] as f64 - max - z.ln());
        let needs = self.needs(logits);
        Ok(self.push(
            Op::SoftmaxCrossEntropy {
                logits,
                label,
                probs,
            },
            Tensor::scalar(loss as f32),
            needs,
        ))
    }

    /// Softmax probabilities of a recorded cross-entropy node.
    pub fn softmax_probs(&self, ce: NodeId) -> Option<Vec<f64>> {
        match &self.nodes[ce.0].op {
            Op::SoftmaxCrossEntropy { probs, .. } => Some(probs.clone()),
            _ => None,
        }
    }

    /// Scalar `Σ vᵢ`, accumulated in 64-bit.
    pub fn sum(&mut self, input: NodeId) -> NodeId {
        let s: f64 = self.nodes[input.0]
            .value
            .data()
            .iter()
            .map(|v| *v as f64)
            .sum();
        let needs = self.needs(input);
        self.push(
            Op::WeightedSum {
                input,
                weights: None,
            },
            Tensor::scalar(s as f32),
            needs,
        )
    }

    /// Scalar `Σ wᵢ·vᵢ` with constant (non-differentiated) weights; used to
    /// scalarize multi-output operations in gradient checks.
    pub fn weighted_sum(&mut self, input: NodeId, weights: &[f32]) -> Result<NodeId, DiffError> {
        if weights.len() != self.nodes[input.0].value.len() {
            return Err(DiffError::ShapeMismatch(format!(
                "{} weights for {} values",
                weights.len(),
                self.nodes[input.0].value.len()
            )));
        }
        let s: f64 = self.nodes[input.0]
            .value
            .data()
            .iter()
            .zip(weights)
            .map(|(v, w)| *v as f64 * *w as f64)
            .sum();
        let needs = self.needs(input);
        Ok(self.push(
            Op::WeightedSum {
                input,
                weights: Some(weights.to_vec()),
            },
            Tensor::scalar(s as f32),
            needs,
        ))
    }

    /// Scalar combination `a + coeff_b · b` of two scalar nodes.
    pub fn scalar_axpy(
        &mut self,
        a: NodeId,
        b: NodeId,
        coeff_b: f64,
    ) -> Result<NodeId, DiffError> {
        for (name, id) in [("a", a), ("b", b)] {
            if self.nodes[id.0].value.len() != 1 {
                return Err(DiffError::ShapeMismatch(format!(
                    "scalar_axpy operand {name} must be scalar, got {:?}",
                    self.nodes[id.0].value.shape()
                )));
            }
        }
        let v = self.nodes[a.0].value.item() as f64
            + coeff_b * self.nodes[b.0].value.item() as f64;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(
            Op::ScalarAxpy { a, b, coeff_b },
            Tensor::scalar(v as f32),
            needs,
        ))
    }

    fn grad_buf<'a>(grads: &'a mut [Option<Vec<f32>>], nodes: &[Node], id: NodeId) -> &'a mut Vec<f32> {
        let len = nodes[id.0].value.len();
        grads[id.0].get_or_insert_with(|| vec![0.0; len])
    }

    /// Reverse sweep from a scalar `loss`: seeds `∂loss/∂loss = 1` and
    /// accumulates gradients into every node on a `needs_grad` path. Leaf
    /// gradients stay queryable through [`Graph::grad`] afterwards.
    pub fn backward(&mut self, loss: NodeId) -> Result<(), DiffError> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(DiffError::NotScalar);
        }
        for g in &mut self.grads {
            *g = None;
        }
        self.grads[loss.0] = Some(vec![1.0]);

        let Graph { nodes, grads } = self;
        for i in (0..=loss.0).rev() {
            if !nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            Self::apply_backward(nodes, grads, i, &g);
            grads[i] = Some(g);
        }
        Ok(())
    }

    fn apply_backward(nodes: &[Node], grads: &mut [Option<Vec<f32>>], i: usize, g: &[f32]) {
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernels,
                bias,
                padding,
            } => {
                let (h, w, cin) = {
                    let s = nodes[input.0].value.shape();
                    (s[0], s[1], s[2])
                };
                let ks = nodes[kernels.0].value.shape();
                let (k, cout) = (ks[0], ks[3]);
                let os = nodes[i].value.shape();
                let (oh, ow) = (os[0], os[1]);
                let pad = match padding {
                    Padding::Same => (k - 1) / 2,
                    Padding::Valid => 0,
                };
                let x = nodes[input.0].value.data();
                let kd = nodes[kernels.0].value.data();

                let want_in = nodes[input.0].needs_grad;
                let want_k = nodes[kernels.0].needs_grad;
                let want_b = nodes[bias.0].needs_grad;
                let mut d_in = if want_in { vec![0.0f64; x.len()] } else { Vec::new() };
                let mut d_k = if want_k { vec![0.0f64; kd.len()] } else { Vec::new() };
                let mut d_b = if want_b { vec![0.0f64; cout] } else { Vec::new() };

                for oy in 0..oh {
                    for ox in 0..ow {
                        let obase = (oy * ow + ox) * cout;
                        if want_b {
                            for co in 0..cout {
                                d_b[co] += g[obase + co] as f64;
                            }
                        }
                        if !want_in && !want_k {
                            continue;
                        }
                        for dy in 0..k {
                            let iy = oy + dy;
                            let Some(iy) = iy.checked_sub(pad).filter(|v| *v < h) else {
                                continue;
                            };
                            for dx in 0..k {
                                let ix = ox + dx;
                                let Some(ix) = ix.checked_sub(pad).filter(|v| *v < w) else {
                                    continue;
                                };
                                let ibase = (iy * w + ix) * cin;
                                for ci in 0..cin {
                                    let kbase = ((dy * k + dx) * cin + ci) * cout;
                                    if want_in {
                                        let mut acc = 0.0f64;
                                        for co in 0..cout {
                                            acc += kd[kbase + co] as f64 * g[obase + co] as f64;
                                        }
                                        d_in[ibase + ci] += acc;
                                    }
                                    if want_k {
                                        let v = x[ibase + ci] as f64;
                                        for co in 0..cout {
                                            d_k[kbase + co] += v * g[obase + co] as f64;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                if want_in {
                    let buf = Self::grad_buf(grads, nodes, *input);
                    for (b, d) in buf.iter_mut().zip(&d_in) {
                        *b += *d as f32;
                    }
                }
                if want_k {
                    let buf = Self::grad_buf(grads, nodes, *kernels);
                    for (b, d) in buf.iter_mut().zip(&d_k) {
                        *b += *d as f32;
                    }
                }
                if want_b {
                    let buf = Self::grad_buf(grads, nodes, *bias);
                    for (b, d) in buf.iter_mut().zip(&d_b) {
                        *b += *d as f32;
                    }
                }
            }
            Op::MaxPool2d { input, argmax } => {
                if nodes[input.0].needs_grad {
                    let buf = Self::grad_buf(grads, nodes, *input);
                    for (o, src) in argmax.iter().enumerate() {
                        buf[*src] += g[o];
                    }
                }
            }
            Op::Dense {
                input,
                weights,
                bias,
            } => {
                let n = nodes[input.0].value.len();
                let m = nodes[bias.0].value.len();
                let x = nodes[input.0].value.data();
                let wd = nodes[weights.0].value.data();
                if nodes[input.0].needs_grad {
                    let mut d_in = vec![0.0f64; n];
                    for (idx, d) in d_in.iter_mut().enumerate() {
                        let base = idx * m;
                        let mut acc = 0.0f64;
                        for j in 0..m {
                            acc += wd[base + j] as f64 * g[j] as f64;
                        }
                        *d = acc;
                    }
                    let buf = Self::grad_buf(grads, nodes, *input);
                    for (b, d) in buf.iter_mut().zip(&d_in) {
                        *b += *d as f32;
                    }
                }
                if nodes[weights.0].needs_grad {
                    let buf = Self::grad_buf(grads, nodes, *weights);
                    for idx in 0..n {
                        let v = x[idx];
                        let base = idx * m;
                        for j in 0..m {
                            buf[base + j] += v * g[j];
                        }
                    }
                }
                if nodes[bias.0].needs_grad {
                    let buf = Self::grad_buf(grads, nodes, *bias);
                    for (b, gj) in buf.iter_mut().zip(g) {
                        *b += *gj;
                    }
                }
            }
            Op::Relu { input } => {
                if nodes[input.0].needs_grad {
                    let x = nodes[input.0].value.data();
                    let buf = Self::grad_buf(grads, nodes, *input);
                    for (idx, gv) in g.iter().enumerate() {
                        if x[idx] > 0.0 {
                            buf[idx] += *gv;
                        }
                    }
                }
            }
            Op::LstmCell {
                x,
                h_prev,
                c_prev,
                params,
                saved,
                state,
            } => {
                let hidden = nodes[i].value.len();
                let f_dim = nodes[x.0].value.len();
                let zero_c;
                let dc_out: &[f32] = match &grads[state.0] {
                    Some(v) => v,
                    None => {
                        zero_c = vec![0.0f32; hidden];
                        &zero_c
                    }
                };

                // Preactivation gradients per gate.
                let mut da_i = vec![0.0f64; hidden];
                let mut da_f = vec![0.0f64; hidden];
                let mut da_g = vec![0.0f64; hidden];
                let mut da_o = vec![0.0f64; hidden];
                let mut d_cprev = vec![0.0f64; hidden];
                let cprev = nodes[c_prev.0].value.data();
                for j in 0..hidden {
                    let dh = g[j] as f64;
                    let o = saved.gate_o[j] as f64;
                    let tc = saved.tanh_c[j] as f64;
                    let d_o = dh * tc;
                    let dc_total = dc_out[j] as f64 + dh * o * (1.0 - tc * tc);
                    let iv = saved.gate_i[j] as f64;
                    let fv = saved.gate_f[j] as f64;
                    let gv = saved.gate_g[j] as f64;
                    let d_i = dc_total * gv;
                    let d_f = dc_total * cprev[j] as f64;
                    let d_g = dc_total * iv;
                    d_cprev[j] = dc_total * fv;
                    da_i[j] = d_i * iv * (1.0 - iv);
                    da_f[j] = d_f * fv * (1.0 - fv);
                    da_g[j] = d_g * (1.0 - gv * gv);
                    da_o[j] = d_o * o * (1.0 - o);
                }

                if nodes[c_prev.0].needs_grad {
                    let buf = Self::grad_buf(grads, nodes, *c_prev);
                    for (b, d) in buf.iter_mut().zip(&d_cprev) {
                        *b += *d as f32;
                    }
                }

                let gates = [
                    (&da_i, params.wi, params.ui, params.bi),
                    (&da_f, params.wf, params.uf, params.bf),
                    (&da_g, params.wg, params.ug, params.bg),
                    (&da_o, params.wo, params.uo, params.bo),
                ];
                let xd = nodes[x.0].value.data();
                let hd = nodes[h_prev.0].value.data();
                let mut d_x = vec![0.0f64; f_dim];
                let mut d_h = vec![0.0f64; hidden];
                for (da, w, u, b) in gates {
                    let wd = nodes[w.0].value.data();
                    let ud = nodes[u.0].value.data();
                    if nodes[x.0].needs_grad {
                        for (fi, dx) in d_x.iter_mut().enumerate() {
                            let base = fi * hidden;
                            let mut acc = 0.0f64;
                            for j in 0..hidden {
                                acc += wd[base + j] as f64 * da[j];
                            }
                            *dx += acc;
                        }
                    }
                    if nodes[h_prev.0].needs_grad {
                        for (hi, dh) in d_h.iter_mut().enumerate() {
                            let base = hi * hidden;
                            let mut acc = 0.0f64;
                            for j in 0..hidden {
                                acc += ud[base + j] as f64 * da[j];
                            }
                            *dh += acc;
                        }
                    }
                    if nodes[w.0].needs_grad {
                        let buf = Self::grad_buf(grads, nodes, w);
                        for fi in 0..f_dim {
                            let v = xd[fi] as f64;
                            let base = fi * hidden;
                            for j in 0..hidden {
                                buf[base + j] += (v * da[j]) as f32;
                            }
                        }
                    }
                    if nodes[u.0].needs_grad {
                        let buf = Self::grad_buf(grads, nodes, u);
                        for hi in 0..hidden {
                            let v = hd[hi] as f64;
                            let base = hi * hidden;
                            for j in 0..hidden {
                                buf[base + j] += (v * da[j]) as f32;
                            }
                        }
                    }
                    if nodes[b.0].needs_grad {
                        let buf = Self::grad_buf(grads, nodes, b);
                        for j in 0..hidden {
                            buf[j] += da[j] as f32;
                        }
                    }
                }
                if nodes[x.0].needs_grad {
                    let buf = Self::grad_buf(grads, nodes, *x);
                    for (b, d) in buf.iter_mut().zip(&d_x) {
                        *b += *d as f32;
                    }
                }
                if nodes[h_prev.0].needs_grad {
                    let buf = Self::grad_buf(grads, nodes, *h_prev);
                    for (b, d) in buf.iter_mut().zip(&d_h) {
                        *b += *d as f32;
                    }
                }
            }
            // Consumed jointly by the owning LstmCell's backward.
            Op::LstmCellState => {}
            Op::Row { input, index } => {
                if nodes[input.0].needs_grad {
                    let cols = nodes[i].value.len();
                    let buf = Self::grad_buf(grads, nodes, *input);
                    for (j, gv) in g.iter().enumerate() {
                        buf[index * cols + j] += *gv;
                    }
                }
            }
            Op::Reshape { input } => {
                if nodes[input.0].needs_grad {
                    let buf = Self::grad_buf(grads, nodes, *input);
                    for (b, gv) in buf.iter_mut().zip(g) {
                        *b += *gv;
                    }
                }
            }
            Op::Sub { a, b } => {
                if nodes[a.0].needs_grad {
                    let buf = Self::grad_buf(grads, nodes, *a);
                    for (x, gv) in buf.iter_mut().zip(g) {
                        *x += *gv;
                    }
                }
                if nodes[b.0].needs_grad {
                    let buf = Self::grad_buf(grads, nodes, *b);
                    for (x, gv) in buf.iter_mut().zip(g) {
                        *x -= *gv;
                    }
                }
            }
            Op::HalfSqNorm { input } => {
                if nodes[input.0].needs_grad {
                    let gs = g[0];
                    let x = nodes[input.0].value.data();
                    let buf = Self::grad_buf(grads, nodes, *input);
                    for (b, v) in buf.iter_mut().zip(x) {
                        *b += gs * *v;
                    }
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                label,
                probs,
            } => {
                if nodes[logits.0].needs_grad {
                    let gs = g[0] as f64;
                    let buf = Self::grad_buf(grads, nodes, *logits);
                    for (j, p) in probs.iter().enumerate() {
                        let indicator = if j == *label { 1.0 } else { 0.0 };
                        buf[j] += (gs * (p - indicator)) as f32;
                    }
                }
            }
            Op::WeightedSum { input, weights } => {
                if nodes[input.0].needs_grad {
                    let gs = g[0];
                    let buf = Self::grad_buf(grads, nodes, *input);
                    match weights {
                        Some(w) => {
                            for (b, wv) in buf.iter_mut().zip(w) {
                                *b += gs * *wv;
                            }
                        }
                        None => {
                            for b in buf.iter_mut() {
                                *b += gs;
                            }
                        }
                    }
                }
            }
            Op::ScalarAxpy { a, b, coeff_b } => {
                let gs = g[0];
                if nodes[a.0].needs_grad {
                    Self::grad_buf(grads, nodes, *a)[0] += gs;
                }
                if nodes[b.0].needs_grad {
                    Self::grad_buf(grads, nodes, *b)[0] += (*coeff_b as f32) * gs;
                }
            }
        }
    }
}
