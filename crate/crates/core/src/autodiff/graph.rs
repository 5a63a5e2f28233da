//! Tape of differentiable operations.
//!
//! Nodes are appended in creation order, so the tape is already a topological
//! order of the computation; backward walks it once in reverse.

use super::{AutodiffError, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const LAYER_NORM_EPS: f64 = 1e-5;

enum Op {
    Leaf,
    Conv1d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
        groups: usize,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    Relu(Var),
    Sigmoid(Var),
    Add(Var, Var),
    AddRows {
        input: Var,
        table: Var,
    },
    ScaleChannels {
        input: Var,
        gate: Var,
    },
    MaxPool1d {
        input: Var,
        argmax: Vec<usize>,
    },
    AvgPool1d {
        input: Var,
        kernel: usize,
        stride: usize,
    },
    GlobalAvgPool(Var),
    CenterRows(Var),
    Concat(Vec<Var>),
    Softmax(Var),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<f64>,
    },
    LayerNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        normed: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Transpose12(Var),
    Reshape(Var),
    BceWithLogits {
        logits: Var,
        targets: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient for `var`, or zeros shaped like `like` when it did not
    /// influence the output.
    pub fn get_or_zeros(&self, var: Var, like: &Tensor) -> Tensor {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn mismatch(op: &'static str, detail: String) -> AutodiffError {
    AutodiffError::ShapeMismatch { op, detail }
}

/// Half-open range of output positions whose tap `k` lands inside the input.
fn conv_tap_range(l_in: usize, l_out: usize, stride: usize, padding: usize, k: usize) -> (usize, usize) {
    let lo = if padding > k {
        (padding - k).div_ceil(stride)
    } else {
        0
    };
    if l_in + padding < k + 1 {
        return (0, 0);
    }
    let hi = ((l_in - 1 + padding - k) / stride + 1).min(l_out);
    (lo.min(hi), hi)
}

pub fn conv1d_output_len(l_in: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = l_in + 2 * padding;
    if stride == 0 || kernel == 0 || padded < kernel {
        None
    } else {
        Some((padded - kernel) / stride + 1)
    }
}

pub fn pool1d_output_len(l_in: usize, kernel: usize, stride: usize) -> Option<usize> {
    conv1d_output_len(l_in, kernel, stride, 0)
}

fn stable_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Adds an input or parameter node.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    /// Cross-correlation over the last axis.
    ///
    /// `input` is `B×C_in×L`, `weight` is `C_out×(C_in/groups)×K`, `bias` is `C_out`.
    pub fn conv1d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Var, AutodiffError> {
        let (xs, ws) = (self.shape(input), self.shape(weight));
        if xs.len() != 3 || ws.len() != 3 {
            return Err(mismatch("conv1d", format!("input {:?}, weight {:?}", xs, ws)));
        }
        let (batch, c_in, l_in) = (xs[0], xs[1], xs[2]);
        let (c_out, cin_g, kernel) = (ws[0], ws[1], ws[2]);
        if groups == 0 || c_in % groups != 0 || c_out % groups != 0 || cin_g != c_in / groups {
            return Err(mismatch(
                "conv1d",
                format!("input channels {c_in}, weight {:?}, groups {groups}", ws),
            ));
        }
        if let Some(b) = bias {
            if self.shape(b) != [c_out] {
                return Err(mismatch("conv1d", format!("bias {:?} for {c_out} channels", self.shape(b))));
            }
        }
        let l_out = conv1d_output_len(l_in, kernel, stride, padding)
            .ok_or_else(|| mismatch("conv1d", format!("length {l_in} too short for kernel {kernel}")))?;
        let cout_g = c_out / groups;
        let x = self.value(input).data();
        let w = self.value(weight).data();
        let bvals = bias.map(|b| self.value(b).data());
        let mut out = vec![0.0; batch * c_out * l_out];
        for b in 0..batch {
            for co in 0..c_out {
                let grp = co / cout_g;
                let orow = &mut out[(b * c_out + co) * l_out..(b * c_out + co + 1) * l_out];
                if let Some(bv) = bvals {
                    orow.fill(bv[co]);
                }
                for ci_l in 0..cin_g {
                    let ci = grp * cin_g + ci_l;
                    let xrow = &x[(b * c_in + ci) * l_in..(b * c_in + ci + 1) * l_in];
                    for k in 0..kernel {
                        let wv = w[(co * cin_g + ci_l) * kernel + k];
                        let (lo, hi) = conv_tap_range(l_in, l_out, stride, padding, k);
                        if stride == 1 {
                            let off = lo + k - padding;
                            for (o, xv) in orow[lo..hi].iter_mut().zip(&xrow[off..off + hi - lo]) {
                                *o += wv * xv;
                            }
                        } else {
                            for (l, o) in orow.iter_mut().enumerate().take(hi).skip(lo) {
                                *o += wv * xrow[l * stride + k - padding];
                            }
                        }
                    }
                }
            }
        }
        let value = Tensor::new(vec![batch, c_out, l_out], out)?;
        Ok(self.push(
            value,
            Op::Conv1d {
                input,
                weight,
                bias,
                stride,
                padding,
                groups,
            },
        ))
    }

    /// Affine map over the last axis; `weight` is `out×in`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var, AutodiffError> {
        let (xs, ws) = (self.shape(input).to_vec(), self.shape(weight));
        if ws.len() != 2 || xs.is_empty() || *xs.last().unwrap() != ws[1] {
            return Err(mismatch("linear", format!("input {:?}, weight {:?}", xs, ws)));
        }
        let (n_out, n_in) = (ws[0], ws[1]);
        if let Some(b) = bias {
            if self.shape(b) != [n_out] {
                return Err(mismatch("linear", format!("bias {:?} for {n_out} outputs", self.shape(b))));
            }
        }
        let rows = self.value(input).len() / n_in;
        let x = self.value(input).data();
        let w = self.value(weight).data();
        let bvals = bias.map(|b| self.value(b).data());
        let mut out = vec![0.0; rows * n_out];
        for r in 0..rows {
            let xr = &x[r * n_in..(r + 1) * n_in];
            for o in 0..n_out {
                let wr = &w[o * n_in..(o + 1) * n_in];
                let dot: f64 = xr.iter().zip(wr).map(|(a, b)| a * b).sum();
                out[r * n_out + o] = dot + bvals.map_or(0.0, |bv| bv[o]);
            }
        }
        let mut shape = xs;
        *shape.last_mut().unwrap() = n_out;
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::Linear { input, weight, bias }))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let value = Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| v.max(0.0)).collect())
            .expect("same shape");
        self.push(value, Op::Relu(input))
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let value = Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| stable_sigmoid(v)).collect())
            .expect("same shape");
        self.push(value, Op::Sigmoid(input))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch("add", format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    /// `input[b, t, :] + table[t, :]` for a `B×T×D` input and `T×D` table.
    pub fn add_rows(&mut self, input: Var, table: Var) -> Result<Var, AutodiffError> {
        let (xs, ts) = (self.shape(input), self.shape(table));
        if xs.len() != 3 || ts.len() != 2 || xs[1] != ts[0] || xs[2] != ts[1] {
            return Err(mismatch("add_rows", format!("input {:?}, table {:?}", xs, ts)));
        }
        let per = ts[0] * ts[1];
        let t = self.value(table).data();
        let x = self.value(input);
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + t[i % per])
            .collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(value, Op::AddRows { input, table }))
    }

    /// Channel gating: `input[b, c, l] * gate[b, c]`.
    pub fn scale_channels(&mut self, input: Var, gate: Var) -> Result<Var, AutodiffError> {
        let (xs, gs) = (self.shape(input), self.shape(gate));
        if xs.len() != 3 || gs.len() != 2 || xs[0] != gs[0] || xs[1] != gs[1] {
            return Err(mismatch("scale_channels", format!("input {:?}, gate {:?}", xs, gs)));
        }
        let len = xs[2];
        let g = self.value(gate).data();
        let x = self.value(input);
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v * g[i / len])
            .collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(value, Op::ScaleChannels { input, gate }))
    }

    pub fn max_pool1d(&mut self, input: Var, kernel: usize, stride: usize) -> Result<Var, AutodiffError> {
        let xs = self.shape(input);
        if xs.len() != 3 {
            return Err(mismatch("max_pool1d", format!("input {:?}", xs)));
        }
        let (rows, l_in) = (xs[0] * xs[1], xs[2]);
        let l_out = pool1d_output_len(l_in, kernel, stride)
            .ok_or_else(|| mismatch("max_pool1d", format!("length {l_in} too short for kernel {kernel}")))?;
        let shape = vec![xs[0], xs[1], l_out];
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(rows * l_out);
        let mut argmax = Vec::with_capacity(rows * l_out);
        for r in 0..rows {
            for l in 0..l_out {
                let start = r * l_in + l * stride;
                let mut best = start;
                for i in start + 1..start + kernel {
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::MaxPool1d { input, argmax }))
    }

    pub fn avg_pool1d(&mut self, input: Var, kernel: usize, stride: usize) -> Result<Var, AutodiffError> {
        let xs = self.shape(input);
        if xs.len() != 3 {
            return Err(mismatch("avg_pool1d", format!("input {:?}", xs)));
        }
        let (rows, l_in) = (xs[0] * xs[1], xs[2]);
        let l_out = pool1d_output_len(l_in, kernel, stride)
            .ok_or_else(|| mismatch("avg_pool1d", format!("length {l_in} too short for kernel {kernel}")))?;
        let shape = vec![xs[0], xs[1], l_out];
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(rows * l_out);
        for r in 0..rows {
            for l in 0..l_out {
                let start = r * l_in + l * stride;
                out.push(x[start..start + kernel].iter().sum::<f64>() / kernel as f64);
            }
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::AvgPool1d { input, kernel, stride }))
    }

    /// Mean over the last axis of a `B×C×L` tensor, giving `B×C`.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var, AutodiffError> {
        let xs = self.shape(input);
        if xs.len() != 3 || xs[2] == 0 {
            return Err(mismatch("global_avg_pool", format!("input {:?}", xs)));
        }
        let (b, c, l) = (xs[0], xs[1], xs[2]);
        let x = self.value(input).data();
        let out = x.chunks(l).map(|row| row.iter().sum::<f64>() / l as f64).collect();
        let value = Tensor::new(vec![b, c], out)?;
        Ok(self.push(value, Op::GlobalAvgPool(input)))
    }

    /// Subtracts from every row of a `B×C×L` tensor its mean over `L`.
    pub fn center_rows(&mut self, input: Var) -> Result<Var, AutodiffError> {
        let xs = self.shape(input).to_vec();
        if xs.len() != 3 || xs[2] == 0 {
            return Err(mismatch("center_rows", format!("input {:?}", xs)));
        }
        let l = xs[2];
        let mut out = self.value(input).data().to_vec();
        for row in out.chunks_mut(l) {
            let mean = row.iter().sum::<f64>() / l as f64;
            row.iter_mut().for_each(|v| *v -= mean);
        }
        let value = Tensor::new(xs, out)?;
        Ok(self.push(value, Op::CenterRows(input)))
    }

    /// Concatenates `B×F_i` tensors along the feature axis.
    pub fn concat(&mut self, inputs: &[Var]) -> Result<Var, AutodiffError> {
        let first = inputs
            .first()
            .ok_or_else(|| mismatch("concat", "no inputs".into()))?;
        let batch = self.shape(*first)[0];
        let mut widths = Vec::with_capacity(inputs.len());
        for &v in inputs {
            let s = self.shape(v);
            if s.len() != 2 || s[0] != batch {
                return Err(mismatch("concat", format!("input {:?} with batch {batch}", s)));
            }
            widths.push(s[1]);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(batch * total);
        for b in 0..batch {
            for (&v, &w) in inputs.iter().zip(&widths) {
                out.extend_from_slice(&self.value(v).data()[b * w..(b + 1) * w]);
            }
        }
        let value = Tensor::new(vec![batch, total], out)?;
        Ok(self.push(value, Op::Concat(inputs.to_vec())))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let n = *x.shape().last().unwrap_or(&1);
        let mut data = x.data().to_vec();
        for row in data.chunks_mut(n.max(1)) {
            softmax_in_place(row);
        }
        let value = Tensor::new(x.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Softmax(input))
    }

    /// Multi-head scaled dot-product attention on `B×T×D` inputs.
    ///
    /// Head `h` uses feature columns `h·D/H .. (h+1)·D/H` of `q`, `k` and `v`;
    /// head outputs are written back into the same columns.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var, AutodiffError> {
        let qs = self.shape(q).to_vec();
        if qs.len() != 3 || self.shape(k) != qs.as_slice() || self.shape(v) != qs.as_slice() {
            return Err(mismatch(
                "attention",
                format!("q {:?}, k {:?}, v {:?}", qs, self.shape(k), self.shape(v)),
            ));
        }
        let (batch, t, d) = (qs[0], qs[1], qs[2]);
        if heads == 0 || d % heads != 0 {
            return Err(AutodiffError::IndivisibleHeads { dim: d, heads });
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qv, kv, vv) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut probs = vec![0.0; batch * heads * t * t];
        let mut out = vec![0.0; batch * t * d];
        for b in 0..batch {
            for h in 0..heads {
                let col = h * dh;
                for i in 0..t {
                    let prow = &mut probs[((b * heads + h) * t + i) * t..((b * heads + h) * t + i + 1) * t];
                    let qi = &qv[(b * t + i) * d + col..(b * t + i) * d + col + dh];
                    for (j, p) in prow.iter_mut().enumerate() {
                        let kj = &kv[(b * t + j) * d + col..(b * t + j) * d + col + dh];
                        *p = scale * qi.iter().zip(kj).map(|(a, c)| a * c).sum::<f64>();
                    }
                    softmax_in_place(prow);
                    let orow = &mut out[(b * t + i) * d + col..(b * t + i) * d + col + dh];
                    for (j, &p) in prow.iter().enumerate() {
                        let vj = &vv[(b * t + j) * d + col..(b * t + j) * d + col + dh];
                        for (o, x) in orow.iter_mut().zip(vj) {
                            *o += p * x;
                        }
                    }
                }
            }
        }
        let value = Tensor::new(qs, out)?;
        Ok(self.push(value, Op::Attention { q, k, v, heads, probs }))
    }

    /// Layer normalization over the last axis with learned scale and shift.
    pub fn layer_norm(&mut self, input: Var, gamma: Var, beta: Var) -> Result<Var, AutodiffError> {
        let xs = self.shape(input).to_vec();
        let n = *xs.last().unwrap_or(&0);
        if n == 0 || self.shape(gamma) != [n] || self.shape(beta) != [n] {
            return Err(mismatch(
                "layer_norm",
                format!("input {:?}, gamma {:?}, beta {:?}", xs, self.shape(gamma), self.shape(beta)),
            ));
        }
        let x = self.value(input).data();
        let (g, be) = (self.value(gamma).data(), self.value(beta).data());
        let rows = x.len() / n;
        let mut normed = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; x.len()];
        for r in 0..rows {
            let xr = &x[r * n..(r + 1) * n];
            let mean = xr.iter().sum::<f64>() / n as f64;
            let var = xr.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = is;
            for j in 0..n {
                let xh = (xr[j] - mean) * is;
                normed[r * n + j] = xh;
                out[r * n + j] = g[j] * xh + be[j];
            }
        }
        let value = Tensor::new(xs, out)?;
        Ok(self.push(
            value,
            Op::LayerNorm {
                input,
                gamma,
                beta,
                normed,
                inv_std,
            },
        ))
    }

    /// Swaps the last two axes of a 3-axis tensor.
    pub fn transpose12(&mut self, input: Var) -> Result<Var, AutodiffError> {
        let xs = self.shape(input);
        if xs.len() != 3 {
            return Err(mismatch("transpose12", format!("input {:?}", xs)));
        }
        let (b, a, c) = (xs[0], xs[1], xs[2]);
        let x = self.value(input).data();
        let mut out = vec![0.0; x.len()];
        for bi in 0..b {
            for i in 0..a {
                for j in 0..c {
                    out[(bi * c + j) * a + i] = x[(bi * a + i) * c + j];
                }
            }
        }
        let value = Tensor::new(vec![b, c, a], out)?;
        Ok(self.push(value, Op::Transpose12(input)))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        let value = self.value(input).clone().reshaped(shape)?;
        Ok(self.push(value, Op::Reshape(input)))
    }

    /// Mean binary cross-entropy on logits, in the overflow-free form
    /// `max(z, 0) − z·y + ln(1 + e^{−|z|})`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Result<Var, AutodiffError> {
        let z = self.value(logits).data();
        if z.len() != targets.len() || z.is_empty() {
            return Err(mismatch(
                "bce_with_logits",
                format!("{} logits, {} targets", z.len(), targets.len()),
            ));
        }
        let total: f64 = z
            .iter()
            .zip(targets)
            .map(|(&zi, &yi)| zi.max(0.0) - zi * yi + (-zi.abs()).exp().ln_1p())
            .sum();
        let value = Tensor::scalar(total / z.len() as f64);
        Ok(self.push(
            value,
            Op::BceWithLogits {
                logits,
                targets: targets.to_vec(),
            },
        ))
    }

    /// Backpropagates from a single-valued node.
    pub fn backward(&self, root: Var) -> Result<Gradients, AutodiffError> {
        let value = self.value(root);
        if value.len() != 1 {
            return Err(mismatch("backward", format!("root has shape {:?}", value.shape())));
        }
        self.backward_with(root, Tensor::full(value.shape(), 1.0))
    }

    /// Backpropagates an explicit upstream gradient from any node.
    pub fn backward_with(&self, root: Var, upstream: Tensor) -> Result<Gradients, AutodiffError> {
        if upstream.shape() != self.shape(root) {
            return Err(mismatch(
                "backward",
                format!("upstream {:?} for node {:?}", upstream.shape(), self.shape(root)),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(upstream);
        for i in (0..=root.0).rev() {
            let Some(gout) = grads[i].take() else {
                continue;
            };
            self.propagate(i, &gout, &mut grads);
            grads[i] = Some(gout);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, i: usize, gout: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let dy = gout.data();
        let mut send = |var: Var, t: Tensor| match &mut grads[var.0] {
            Some(existing) => existing.accumulate(&t),
            slot @ None => *slot = Some(t),
        };
        match &node.op {
            Op::Leaf => {}
            &Op::Conv1d {
                input,
                weight,
                bias,
                stride,
                padding,
                groups,
            } => {
                let (xt, wt) = (self.value(input), self.value(weight));
                let (batch, c_in, l_in) = (xt.shape()[0], xt.shape()[1], xt.shape()[2]);
                let (c_out, cin_g, kernel) = (wt.shape()[0], wt.shape()[1], wt.shape()[2]);
                let l_out = node.value.shape()[2];
                let cout_g = c_out / groups;
                let (x, w) = (xt.data(), wt.data());
                let mut dx = vec![0.0; x.len()];
                let mut dw = vec![0.0; w.len()];
                let mut db = vec![0.0; c_out];
                for b in 0..batch {
                    for co in 0..c_out {
                        let grp = co / cout_g;
                        let dyrow = &dy[(b * c_out + co) * l_out..(b * c_out + co + 1) * l_out];
                        db[co] += dyrow.iter().sum::<f64>();
                        for ci_l in 0..cin_g {
                            let ci = grp * cin_g + ci_l;
                            let base = (b * c_in + ci) * l_in;
                            for k in 0..kernel {
                                let widx = (co * cin_g + ci_l) * kernel + k;
                                let wv = w[widx];
                                let (lo, hi) = conv_tap_range(l_in, l_out, stride, padding, k);
                                let mut acc = 0.0;
                                if stride == 1 {
                                    let off = base + lo + k - padding;
                                    let xs = &x[off..off + hi - lo];
                                    let dxs = &mut dx[off..off + hi - lo];
                                    for ((g, xv), dxv) in dyrow[lo..hi].iter().zip(xs).zip(dxs) {
                                        acc += g * xv;
                                        *dxv += wv * g;
                                    }
                                } else {
                                    for (l, g) in dyrow.iter().enumerate().take(hi).skip(lo) {
                                        let xi = base + l * stride + k - padding;
                                        acc += g * x[xi];
                                        dx[xi] += wv * g;
                                    }
                                }
                                dw[widx] += acc;
                            }
                        }
                    }
                }
                send(input, Tensor::new(xt.shape().to_vec(), dx).expect("shape"));
                send(weight, Tensor::new(wt.shape().to_vec(), dw).expect("shape"));
                if let Some(b) = bias {
                    send(b, Tensor::new(vec![c_out], db).expect("shape"));
                }
            }
            &Op::Linear { input, weight, bias } => {
                let (xt, wt) = (self.value(input), self.value(weight));
                let (n_out, n_in) = (wt.shape()[0], wt.shape()[1]);
                let rows = xt.len() / n_in;
                let (x, w) = (xt.data(), wt.data());
                let mut dx = vec![0.0; x.len()];
                let mut dw = vec![0.0; w.len()];
                let mut db = vec![0.0; n_out];
                for r in 0..rows {
                    let xr = &x[r * n_in..(r + 1) * n_in];
                    let dxr = &mut dx[r * n_in..(r + 1) * n_in];
                    for o in 0..n_out {
                        let g = dy[r * n_out + o];
                        if g == 0.0 {
                            continue;
                        }
                        db[o] += g;
                        let wr = &w[o * n_in..(o + 1) * n_in];
                        let dwr = &mut dw[o * n_in..(o + 1) * n_in];
                        for j in 0..n_in {
                            dxr[j] += g * wr[j];
                            dwr[j] += g * xr[j];
                        }
                    }
                }
                send(input, Tensor::new(xt.shape().to_vec(), dx).expect("shape"));
                send(weight, Tensor::new(wt.shape().to_vec(), dw).expect("shape"));
                if let Some(b) = bias {
                    send(b, Tensor::new(vec![n_out], db).expect("shape"));
                }
            }
            &Op::Relu(input) => {
                let x = self.value(input);
                let dx = x
                    .data()
                    .iter()
                    .zip(dy)
                    .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                    .collect();
                send(input, Tensor::new(x.shape().to_vec(), dx).expect("shape"));
            }
            &Op::Sigmoid(input) => {
                let y = node.value.data();
                let dx = y.iter().zip(dy).map(|(&s, &g)| g * s * (1.0 - s)).collect();
                send(input, Tensor::new(node.value.shape().to_vec(), dx).expect("shape"));
            }
            &Op::Add(a, b) => {
                send(a, gout.clone());
                send(b, gout.clone());
            }
            &Op::AddRows { input, table } => {
                let ts = self.value(table).shape().to_vec();
                let per = ts[0] * ts[1];
                let mut dt = vec![0.0; per];
                for (i, g) in dy.iter().enumerate() {
                    dt[i % per] += g;
                }
                send(input, gout.clone());
                send(table, Tensor::new(ts, dt).expect("shape"));
            }
            &Op::ScaleChannels { input, gate } => {
                let (xt, gt) = (self.value(input), self.value(gate));
                let len = xt.shape()[2];
                let (x, gv) = (xt.data(), gt.data());
                let mut dx = vec![0.0; x.len()];
                let mut dg = vec![0.0; gv.len()];
                for (i, g) in dy.iter().enumerate() {
                    dx[i] = g * gv[i / len];
                    dg[i / len] += g * x[i];
                }
                send(input, Tensor::new(xt.shape().to_vec(), dx).expect("shape"));
                send(gate, Tensor::new(gt.shape().to_vec(), dg).expect("shape"));
            }
            Op::MaxPool1d { input, argmax } => {
                let xt = self.value(*input);
                let mut dx = vec![0.0; xt.len()];
                for (&src, g) in argmax.iter().zip(dy) {
                    dx[src] += g;
                }
                send(*input, Tensor::new(xt.shape().to_vec(), dx).expect("shape"));
            }
            &Op::AvgPool1d { input, kernel, stride } => {
                let xt = self.value(input);
                let l_in = xt.shape()[2];
                let l_out = node.value.shape()[2];
                let mut dx = vec![0.0; xt.len()];
                for (o, g) in dy.iter().enumerate() {
                    let (r, l) = (o / l_out, o % l_out);
                    let start = r * l_in + l * stride;
                    for v in &mut dx[start..start + kernel] {
                        *v += g / kernel as f64;
                    }
                }
                send(input, Tensor::new(xt.shape().to_vec(), dx).expect("shape"));
            }
            &Op::GlobalAvgPool(input) => {
                let xt = self.value(input);
                let l = xt.shape()[2];
                let dx = (0..xt.len()).map(|i| dy[i / l] / l as f64).collect();
                send(input, Tensor::new(xt.shape().to_vec(), dx).expect("shape"));
            }
            &Op::CenterRows(input) => {
                let l = node.value.shape()[2];
                let mut dx = dy.to_vec();
                for row in dx.chunks_mut(l) {
                    let mean = row.iter().sum::<f64>() / l as f64;
                    row.iter_mut().for_each(|v| *v -= mean);
                }
                send(input, Tensor::new(node.value.shape().to_vec(), dx).expect("shape"));
            }
            Op::Concat(inputs) => {
                let batch = node.value.shape()[0];
                let total = node.value.shape()[1];
                let mut offset = 0;
                for &v in inputs {
                    let w = self.value(v).shape()[1];
                    let mut dv = Vec::with_capacity(batch * w);
                    for b in 0..batch {
                        dv.extend_from_slice(&dy[b * total + offset..b * total + offset + w]);
                    }
                    send(v, Tensor::new(vec![batch, w], dv).expect("shape"));
                    offset += w;
                }
            }
            &Op::Softmax(input) => {
                let y = node.value.data();
                let n = *node.value.shape().last().unwrap_or(&1);
                let mut dx = vec![0.0; y.len()];
                for ((yr, gr), dr) in y.chunks(n).zip(dy.chunks(n)).zip(dx.chunks_mut(n)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        dr[j] = yr[j] * (gr[j] - dot);
                    }
                }
                send(input, Tensor::new(node.value.shape().to_vec(), dx).expect("shape"));
            }
            Op::Attention { q, k, v, heads, probs } => {
                let shape = node.value.shape().to_vec();
                let (batch, t, d) = (shape[0], shape[1], shape[2]);
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let (qv, kv, vv) = (self.value(*q).data(), self.value(*k).data(), self.value(*v).data());
                let mut dq = vec![0.0; qv.len()];
                let mut dk = vec![0.0; kv.len()];
                let mut dv = vec![0.0; vv.len()];
                let mut dp = vec![0.0; t];
                for b in 0..batch {
                    for h in 0..*heads {
                        let col = h * dh;
                        let at = |i: usize| (b * t + i) * d + col;
                        for i in 0..t {
                            let prow = &probs[((b * heads + h) * t + i) * t..((b * heads + h) * t + i + 1) * t];
                            let doi = &dy[at(i)..at(i) + dh];
                            for j in 0..t {
                                let vj = &vv[at(j)..at(j) + dh];
                                dp[j] = doi.iter().zip(vj).map(|(a, c)| a * c).sum();
                                let p = prow[j];
                                for (dvx, g) in dv[at(j)..at(j) + dh].iter_mut().zip(doi) {
                                    *dvx += p * g;
                                }
                            }
                            let dot: f64 = prow.iter().zip(&dp).map(|(a, c)| a * c).sum();
                            for j in 0..t {
                                let ds = prow[j] * (dp[j] - dot) * scale;
                                if ds == 0.0 {
                                    continue;
                                }
                                for c in 0..dh {
                                    dq[at(i) + c] += ds * kv[at(j) + c];
                                    dk[at(j) + c] += ds * qv[at(i) + c];
                                }
                            }
                        }
                    }
                }
                send(*q, Tensor::new(shape.clone(), dq).expect("shape"));
                send(*k, Tensor::new(shape.clone(), dk).expect("shape"));
                send(*v, Tensor::new(shape, dv).expect("shape"));
            }
            Op::LayerNorm {
                input,
                gamma,
                beta,
                normed,
                inv_std,
            } => {
                let n = self.value(*gamma).len();
                let g = self.value(*gamma).data();
                let rows = normed.len() / n;
                let mut dx = vec![0.0; normed.len()];
                let mut dgamma = vec![0.0; n];
                let mut dbeta = vec![0.0; n];
                for r in 0..rows {
                    let xh = &normed[r * n..(r + 1) * n];
                    let gr = &dy[r * n..(r + 1) * n];
                    let mut sum_dxh = 0.0;
                    let mut sum_dxh_xh = 0.0;
                    for j in 0..n {
                        dgamma[j] += gr[j] * xh[j];
                        dbeta[j] += gr[j];
                        let dxh = gr[j] * g[j];
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xh[j];
                    }
                    let is = inv_std[r];
                    for j in 0..n {
                        let dxh = gr[j] * g[j];
                        dx[r * n + j] = is * (dxh - sum_dxh / n as f64 - xh[j] * sum_dxh_xh / n as f64);
                    }
                }
                send(*input, Tensor::new(node.value.shape().to_vec(), dx).expect("shape"));
                send(*gamma, Tensor::new(vec![n], dgamma).expect("shape"));
                send(*beta, Tensor::new(vec![n], dbeta).expect("shape"));
            }
            &Op::Transpose12(input) => {
                let s = node.value.shape();
                let (b, c, a) = (s[0], s[1], s[2]);
                let mut dx = vec![0.0; dy.len()];
                for bi in 0..b {
                    for j in 0..c {
                        for i in 0..a {
                            dx[(bi * a + i) * c + j] = dy[(bi * c + j) * a + i];
                        }
                    }
                }
                send(input, Tensor::new(vec![b, a, c], dx).expect("shape"));
            }
            &Op::Reshape(input) => {
                let shape = self.value(input).shape().to_vec();
                send(input, gout.clone().reshaped(&shape).expect("same count"));
            }
            Op::BceWithLogits { logits, targets } => {
                let z = self.value(*logits);
                let scale = dy[0] / targets.len() as f64;
                let dz = z
                    .data()
                    .iter()
                    .zip(targets)
                    .map(|(&zi, &yi)| (stable_sigmoid(zi) - yi) * scale)
                    .collect();
                send(*logits, Tensor::new(z.shape().to_vec(), dz).expect("shape"));
            }
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    stable_sigmoid(z)
}
