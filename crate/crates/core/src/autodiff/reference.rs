//! Straight-line 64-bit implementations of every differentiable operation,
//! written independently of the tape in `graph`. Gradient checks difference
//! these, so a shared bug in both implementations would have to be made
//! twice in different styles to go unnoticed.

/// Cross-correlation, stride 1. Shapes follow the tape op:
/// input `[h, w, cin]`, kernels `[k, k, cin, cout]`, bias `[cout]`.
/// `pad` is the symmetric zero padding (0 for valid, `(k-1)/2` for same).
#[allow(clippy::too_many_arguments)]
pub fn conv2d(
    input: &[f64],
    h: usize,
    w: usize,
    cin: usize,
    kernels: &[f64],
    k: usize,
    cout: usize,
    bias: &[f64],
    pad: usize,
) -> Vec<f64> {
    let oh = h + 2 * pad - k + 1;
    let ow = w + 2 * pad - k + 1;
    let mut out = vec![0.0; oh * ow * cout];
    for oy in 0..oh {
        for ox in 0..ow {
            for co in 0..cout {
                let mut acc = bias[co];
                for dy in 0..k {
                    for dx in 0..k {
                        let iy = (oy + dy) as isize - pad as isize;
                        let ix = (ox + dx) as isize - pad as isize;
                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                            continue;
                        }
                        for ci in 0..cin {
                            let xv = input[((iy as usize) * w + ix as usize) * cin + ci];
                            let kv = kernels[((dy * k + dx) * cin + ci) * cout + co];
                            acc += xv * kv;
                        }
                    }
                }
                out[(oy * ow + ox) * cout + co] = acc;
            }
        }
    }
    out
}

/// 2×2 stride-2 max pooling over `[h, w, c]`.
pub fn maxpool2d(input: &[f64], h: usize, w: usize, c: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; oh * ow * c];
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let mut best = f64::NEG_INFINITY;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let v = input[((oy * 2 + dy) * w + (ox * 2 + dx)) * c + ch];
                        if v > best {
                            best = v;
                        }
                    }
                }
                out[(oy * ow + ox) * c + ch] = best;
            }
        }
    }
    out
}

/// `x · w + b` with `w: [n, m]`.
pub fn dense(x: &[f64], w: &[f64], b: &[f64], m: usize) -> Vec<f64> {
    let mut out = b.to_vec();
    for (i, xv) in x.iter().enumerate() {
        for j in 0..m {
            out[j] += xv * w[i * m + j];
        }
    }
    out
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.max(0.0)).collect()
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// One LSTM step; `params` is the 12-slice gate bundle in
/// (w, u, b) × (input, forget, candidate, output) order. Returns `(h, c)`.
#[allow(clippy::type_complexity)]
pub fn lstm_cell(
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    params: [&[f64]; 12],
    hidden: usize,
) -> (Vec<f64>, Vec<f64>) {
    let [wi, ui, bi, wf, uf, bf, wg, ug, bg, wo, uo, bo] = params;
    let pre = |w: &[f64], u: &[f64], b: &[f64]| -> Vec<f64> {
        let mut acc = b.to_vec();
        for (i, xv) in x.iter().enumerate() {
            for j in 0..hidden {
                acc[j] += xv * w[i * hidden + j];
            }
        }
        for (i, hv) in h_prev.iter().enumerate() {
            for j in 0..hidden {
                acc[j] += hv * u[i * hidden + j];
            }
        }
        acc
    };
    let gi: Vec<f64> = pre(wi, ui, bi).iter().map(|v| sigmoid(*v)).collect();
    let gf: Vec<f64> = pre(wf, uf, bf).iter().map(|v| sigmoid(*v)).collect();
    let gg: Vec<f64> = pre(wg, ug, bg).iter().map(|v| v.tanh()).collect();
    let go: Vec<f64> = pre(wo, uo, bo).iter().map(|v| sigmoid(*v)).collect();
    let mut c = vec![0.0; hidden];
    let mut hh = vec![0.0; hidden];
    for j in 0..hidden {
        c[j] = gf[j] * c_prev[j] + gi[j] * gg[j];
        hh[j] = go[j] * c[j].tanh();
    }
    (hh, c)
}

/// `−log softmax(logits)[label]` with max-subtraction.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
    let z: f64 = logits.iter().map(|v| (v - max).exp()).sum();
    -(logits[label] - max - z.ln())
}

/// `½ Σ vᵢ²`.
pub fn half_sq_norm(x: &[f64]) -> f64 {
    0.5 * x.iter().map(|v| v * v).sum::<f64>()
}

/// Geometry of the small convolutional profile used to cross-check the tape
/// end to end: conv(k=5, same) → relu → pool → conv → relu → pool → fc1 →
/// relu → fc2, identical wiring to the full-size network.
#[derive(Debug, Clone, Copy)]
pub struct SmallCnnGeom {
    pub rows: usize,
    pub cols: usize,
    pub maps1: usize,
    pub maps2: usize,
    pub kernel: usize,
    pub embed: usize,
    pub classes: usize,
}

impl SmallCnnGeom {
    pub fn flat_len(&self) -> usize {
        (self.rows / 4) * (self.cols / 4) * self.maps2
    }
}

/// Which side of every piecewise boundary a forward pass took: ReLU masks
/// and pooling argmax choices, in layer order. Two evaluations with equal
/// traces lie on the same smooth piece of the network, which makes a finite
/// difference between them valid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivationTrace {
    pub relu_masks: Vec<Vec<bool>>,
    pub pool_choices: Vec<Vec<usize>>,
}

fn relu_masked(x: &[f64]) -> (Vec<f64>, Vec<bool>) {
    let mask: Vec<bool> = x.iter().map(|v| *v > 0.0).collect();
    let out = x
        .iter()
        .zip(&mask)
        .map(|(v, m)| if *m { *v } else { 0.0 })
        .collect();
    (out, mask)
}

fn maxpool2d_argmax(input: &[f64], h: usize, w: usize, c: usize) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; oh * ow * c];
    let mut arg = vec![0usize; oh * ow * c];
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0usize;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let idx = ((oy * 2 + dy) * w + (ox * 2 + dx)) * c + ch;
                        if input[idx] > best {
                            best = input[idx];
                            best_idx = idx;
                        }
                    }
                }
                let o = (oy * ow + ox) * c + ch;
                out[o] = best;
                arg[o] = best_idx;
            }
        }
    }
    (out, arg)
}

/// Full forward pass of the small profile with its activation trace.
/// `params` order: conv1 kernels, conv1 bias, conv2 kernels, conv2 bias,
/// fc1 w, fc1 b, fc2 w, fc2 b.
pub fn small_cnn_forward_traced(
    input: &[f64],
    params: [&[f64]; 8],
    geom: SmallCnnGeom,
) -> (Vec<f64>, Vec<f64>, ActivationTrace) {
    let [k1, b1, k2, b2, w1, c1, w2, c2] = params;
    let pad = (geom.kernel - 1) / 2;
    let a = conv2d(
        input, geom.rows, geom.cols, 1, k1, geom.kernel, geom.maps1, b1, pad,
    );
    let (a, mask1) = relu_masked(&a);
    let (a, pool1) = maxpool2d_argmax(&a, geom.rows, geom.cols, geom.maps1);
    let (h2, w2dim) = (geom.rows / 2, geom.cols / 2);
    let a = conv2d(&a, h2, w2dim, geom.maps1, k2, geom.kernel, geom.maps2, b2, pad);
    let (a, mask2) = relu_masked(&a);
    let (a, pool2) = maxpool2d_argmax(&a, h2, w2dim, geom.maps2);
    let (emb, mask3) = relu_masked(&dense(&a, w1, c1, geom.embed));
    let logits = dense(&emb, w2, c2, geom.classes);
    let trace = ActivationTrace {
        relu_masks: vec![mask1, mask2, mask3],
        pool_choices: vec![pool1, pool2],
    };
    (emb, logits, trace)
}

/// Forward pass of the small profile: `(embedding, logits)`.
pub fn small_cnn_forward(
    input: &[f64],
    params: [&[f64]; 8],
    geom: SmallCnnGeom,
) -> (Vec<f64>, Vec<f64>) {
    let (emb, logits, _) = small_cnn_forward_traced(input, params, geom);
    (emb, logits)
}

/// Small profile loss for one labelled input.
pub fn small_cnn_loss(input: &[f64], params: [&[f64]; 8], geom: SmallCnnGeom, label: usize) -> f64 {
    let (_, logits) = small_cnn_forward(input, params, geom);
    softmax_cross_entropy(&logits, label)
}
