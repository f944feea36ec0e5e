//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Operations are recorded in execution order together with their outputs and
//! whatever intermediate values the backward pass needs. `backward` walks the
//! tape in reverse, accumulating gradients via the chain rule. The op set is
//! exactly what the models in this crate require; there is no general graph
//! compiler here.

use crate::error::{Error, Result};
use crate::nn::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Value(pub(crate) usize);

/// Whether batch normalization consumes batch statistics (training) or the
/// stored running statistics (evaluation).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug)]
enum Op {
    Leaf,
    ParamLeaf(ParamId),
    Conv1d {
        stride: usize,
        padding: usize,
    },
    BatchNorm {
        // x_hat and inv_std are saved from the forward pass; inv_std is
        // per-channel. In eval mode x_hat is computed from running stats and
        // the batch-statistics path of the backward rule is skipped.
        x_hat: Vec<f64>,
        inv_std: Vec<f64>,
        train_stats: bool,
    },
    LayerNorm {
        x_hat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Linear,
    Embedding {
        ids: Vec<usize>,
    },
    SoftmaxCrossEntropy {
        labels: Vec<usize>,
        weights: Vec<f64>,
        probs: Vec<f64>,
    },
    Relu,
    Tanh,
    Add,
    Scale(f64),
    AddScalar,
    MeanPoolTime,
    SegmentMean {
        offsets: Vec<usize>,
    },
    RowAffine,
    ConcatLast {
        widths: Vec<usize>,
    },
    ConcatRows {
        sizes: Vec<usize>,
    },
    SliceRows {
        start: usize,
    },
    Matmul,
    MatmulNT,
    SoftmaxCols {
        probs: Vec<f64>,
    },
    RowNormalize {
        row_sums: Vec<f64>,
    },
    ChannelSummaries {
        argmax: Vec<usize>,
        argmin: Vec<usize>,
        means: Vec<f64>,
        stds: Vec<f64>,
    },
    Reshape,
}

struct Node {
    op: Op,
    inputs: Vec<usize>,
    output: Tensor,
    requires_grad: bool,
}

/// The recording tape. One tape per forward/backward pass.
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), grads: Vec::new() }
    }

    fn push(&mut self, op: Op, inputs: Vec<usize>, output: Tensor, requires_grad: bool) -> Value {
        self.nodes.push(Node { op, inputs, output, requires_grad });
        Value(self.nodes.len() - 1)
    }

    fn rg(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    pub fn value(&self, v: Value) -> &Tensor {
        &self.nodes[v.0].output
    }

    /// Gradient of the last `backward` call with respect to node `v`.
    pub fn grad(&self, v: Value) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    // ── Leaves ──────────────────────────────────────────────────────────

    pub fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Value {
        self.push(Op::Leaf, vec![], t, requires_grad)
    }

    /// Record a parameter as a leaf. The value is snapshotted; gradients are
    /// scattered back into the store by `accumulate_param_grads`.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Value {
        let t = store.value(id).clone();
        self.push(Op::ParamLeaf(id), vec![], t, true)
    }

    // ── Arithmetic / activation ─────────────────────────────────────────

    pub fn add(&mut self, a: Value, b: Value) -> Result<Value> {
        let (ta, tb) = (&self.nodes[a.0].output, &self.nodes[b.0].output);
        if ta.shape() != tb.shape() {
            return Err(Error::Config(format!(
                "add: shape mismatch {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data);
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(Op::Add, vec![a.0, b.0], out, rg))
    }

    pub fn scale(&mut self, a: Value, c: f64) -> Value {
        let ta = &self.nodes[a.0].output;
        let data = ta.data().iter().map(|x| c * x).collect();
        let out = Tensor::new(ta.shape().to_vec(), data);
        let rg = self.rg(&[a.0]);
        self.push(Op::Scale(c), vec![a.0], out, rg)
    }

    pub fn add_scalar(&mut self, a: Value, c: f64) -> Value {
        let ta = &self.nodes[a.0].output;
        let data = ta.data().iter().map(|x| x + c).collect();
        let out = Tensor::new(ta.shape().to_vec(), data);
        let rg = self.rg(&[a.0]);
        self.push(Op::AddScalar, vec![a.0], out, rg)
    }

    pub fn relu(&mut self, a: Value) -> Value {
        let ta = &self.nodes[a.0].output;
        let data = ta.data().iter().map(|x| x.max(0.0)).collect();
        let out = Tensor::new(ta.shape().to_vec(), data);
        let rg = self.rg(&[a.0]);
        self.push(Op::Relu, vec![a.0], out, rg)
    }

    pub fn tanh(&mut self, a: Value) -> Value {
        let ta = &self.nodes[a.0].output;
        let data = ta.data().iter().map(|x| x.tanh()).collect();
        let out = Tensor::new(ta.shape().to_vec(), data);
        let rg = self.rg(&[a.0]);
        self.push(Op::Tanh, vec![a.0], out, rg)
    }

    pub fn reshape(&mut self, a: Value, shape: &[usize]) -> Value {
        let ta = &self.nodes[a.0].output;
        assert_eq!(shape.iter().product::<usize>(), ta.numel());
        let out = ta.clone().reshape(shape);
        let rg = self.rg(&[a.0]);
        self.push(Op::Reshape, vec![a.0], out, rg)
    }

    // ── Convolution ─────────────────────────────────────────────────────

    /// 1-d cross-correlation. `input` is `[n, c_in, l]`, `weight` is
    /// `[c_out, c_in, k]`, optional `bias` is `[c_out]`. Output length is
    /// `(l + 2·padding − k)/stride + 1`.
    pub fn conv1d(
        &mut self,
        input: Value,
        weight: Value,
        bias: Option<Value>,
        stride: usize,
        padding: usize,
    ) -> Result<Value> {
        let x = &self.nodes[input.0].output;
        let w = &self.nodes[weight.0].output;
        if x.shape().len() != 3 || w.shape().len() != 3 {
            return Err(Error::Config(format!(
                "conv1d: expected 3-d input and weight, got {:?} and {:?}",
                x.shape(),
                w.shape()
            )));
        }
        let (n, c_in, l) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (c_out, w_cin, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
        if w_cin != c_in {
            return Err(Error::Config(format!(
                "conv1d: input has {c_in} channels but weight expects {w_cin}"
            )));
        }
        if k % 2 == 0 || k == 0 {
            return Err(Error::Config(format!("conv1d: kernel size {k} must be odd")));
        }
        if stride == 0 {
            return Err(Error::Config("conv1d: stride must be positive".into()));
        }
        if l + 2 * padding < k {
            return Err(Error::Config(format!(
                "conv1d: input length {l} too short for kernel {k} with padding {padding}"
            )));
        }
        x.check_finite("conv1d input")?;
        if let Some(b) = bias {
            let tb = &self.nodes[b.0].output;
            if tb.shape() != [c_out] {
                return Err(Error::Config(format!(
                    "conv1d: bias shape {:?} does not match {c_out} output channels",
                    tb.shape()
                )));
            }
        }

        let lo = (l + 2 * padding - k) / stride + 1;
        let mut out = vec![0.0f64; n * c_out * lo];
        let xd = x.data();
        let wd = w.data();
        for i in 0..n {
            for co in 0..c_out {
                let o_base = (i * c_out + co) * lo;
                let orow = &mut out[o_base..o_base + lo];
                for ci in 0..c_in {
                    let x_base = (i * c_in + ci) * l;
                    let xrow = &xd[x_base..x_base + l];
                    let w_base = (co * c_in + ci) * k;
                    for dk in 0..k {
                        let wv = wd[w_base + dk];
                        if wv == 0.0 {
                            continue;
                        }
                        // src = t*stride + dk - padding must stay in [0, l)
                        let t_min = padding.saturating_sub(dk).div_ceil(stride);
                        let t_max = if l + padding > dk {
                            (((l + padding - dk - 1) / stride) + 1).min(lo)
                        } else {
                            0
                        };
                        if t_min >= t_max {
                            continue;
                        }
                        let src0 = t_min * stride + dk - padding;
                        if stride == 1 {
                            let xs = &xrow[src0..src0 + (t_max - t_min)];
                            for (ov, xv) in orow[t_min..t_max].iter_mut().zip(xs) {
                                *ov += wv * xv;
                            }
                        } else {
                            let xs = &xrow[src0..];
                            for (ov, xv) in
                                orow[t_min..t_max].iter_mut().zip(xs.iter().step_by(stride))
                            {
                                *ov += wv * xv;
                            }
                        }
                    }
                }
                if let Some(b) = bias {
                    let bv = self.nodes[b.0].output.data()[co];
                    if bv != 0.0 {
                        for ov in orow.iter_mut() {
                            *ov += bv;
                        }
                    }
                }
            }
        }
        let mut inputs = vec![input.0, weight.0];
        if let Some(b) = bias {
            inputs.push(b.0);
        }
        let rg = self.rg(&inputs);
        Ok(self.push(
            Op::Conv1d { stride, padding },
            inputs,
            Tensor::new(vec![n, c_out, lo], out),
            rg,
        ))
    }

    // ── Normalization ───────────────────────────────────────────────────

    /// Batch normalization over `[n, ch, l]`, statistics per channel over the
    /// `(n, l)` axes. In `Mode::Train` batch statistics are used and returned
    /// (mean, biased variance) so the caller can update its running buffers;
    /// in `Mode::Eval` the provided running statistics are used.
    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm1d(
        &mut self,
        input: Value,
        gamma: Value,
        beta: Value,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
        mode: Mode,
    ) -> Result<(Value, Option<(Vec<f64>, Vec<f64>)>)> {
        let x = &self.nodes[input.0].output;
        if x.shape().len() != 3 {
            return Err(Error::Config(format!(
                "batchnorm1d: expected [n, ch, l], got {:?}",
                x.shape()
            )));
        }
        let (n, ch, l) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        if self.nodes[gamma.0].output.shape() != [ch] || self.nodes[beta.0].output.shape() != [ch] {
            return Err(Error::Config("batchnorm1d: affine parameter shape mismatch".into()));
        }
        let m = n * l;
        if mode == Mode::Train && m < 2 {
            return Err(Error::Config(format!(
                "batchnorm1d: need at least 2 values per channel in train mode, got {m}"
            )));
        }

        let xd = x.data();
        let (mean, var): (Vec<f64>, Vec<f64>) = match mode {
            Mode::Train => {
                let mut mean = vec![0.0; ch];
                let mut var = vec![0.0; ch];
                for c in 0..ch {
                    let mut s = 0.0;
                    for i in 0..n {
                        let base = (i * ch + c) * l;
                        for t in 0..l {
                            s += xd[base + t];
                        }
                    }
                    let mu = s / m as f64;
                    let mut sq = 0.0;
                    for i in 0..n {
                        let base = (i * ch + c) * l;
                        for t in 0..l {
                            let d = xd[base + t] - mu;
                            sq += d * d;
                        }
                    }
                    mean[c] = mu;
                    var[c] = sq / m as f64;
                }
                (mean, var)
            }
            Mode::Eval => (running_mean.to_vec(), running_var.to_vec()),
        };

        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let gd = self.nodes[gamma.0].output.data().to_vec();
        let bd = self.nodes[beta.0].output.data().to_vec();
        let mut x_hat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        for i in 0..n {
            for c in 0..ch {
                let base = (i * ch + c) * l;
                let (mu, inv, g, b) = (mean[c], inv_std[c], gd[c], bd[c]);
                for t in 0..l {
                    let xh = (xd[base + t] - mu) * inv;
                    x_hat[base + t] = xh;
                    out[base + t] = g * xh + b;
                }
            }
        }

        let batch_stats = match mode {
            Mode::Train => Some((mean, var)),
            Mode::Eval => None,
        };
        let rg = self.rg(&[input.0, gamma.0, beta.0]);
        let v = self.push(
            Op::BatchNorm { x_hat, inv_std, train_stats: mode == Mode::Train },
            vec![input.0, gamma.0, beta.0],
            Tensor::new(vec![n, ch, l], out),
            rg,
        );
        Ok((v, batch_stats))
    }

    /// Layer normalization over the last axis.
    pub fn layer_norm(&mut self, input: Value, gamma: Value, beta: Value, eps: f64) -> Result<Value> {
        let x = &self.nodes[input.0].output;
        let shape = x.shape().to_vec();
        let d = *shape.last().ok_or_else(|| Error::Config("layer_norm: scalar input".into()))?;
        if self.nodes[gamma.0].output.shape() != [d] || self.nodes[beta.0].output.shape() != [d] {
            return Err(Error::Config("layer_norm: affine parameter shape mismatch".into()));
        }
        let rows = x.numel() / d;
        let xd = x.data();
        let gd = self.nodes[gamma.0].output.data().to_vec();
        let bd = self.nodes[beta.0].output.data().to_vec();
        let mut x_hat = vec![0.0; xd.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; xd.len()];
        for r in 0..rows {
            let base = r * d;
            let mu = xd[base..base + d].iter().sum::<f64>() / d as f64;
            let var = xd[base..base + d].iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[r] = inv;
            for j in 0..d {
                let xh = (xd[base + j] - mu) * inv;
                x_hat[base + j] = xh;
                out[base + j] = gd[j] * xh + bd[j];
            }
        }
        let rg = self.rg(&[input.0, gamma.0, beta.0]);
        Ok(self.push(
            Op::LayerNorm { x_hat, inv_std },
            vec![input.0, gamma.0, beta.0],
            Tensor::new(shape, out),
            rg,
        ))
    }

    // ── Linear algebra ──────────────────────────────────────────────────

    /// Affine map on the last axis: `[.., d_in] × [d_out, d_in]ᵀ + [d_out]`.
    pub fn linear(&mut self, input: Value, weight: Value, bias: Value) -> Result<Value> {
        let x = &self.nodes[input.0].output;
        let w = &self.nodes[weight.0].output;
        let b = &self.nodes[bias.0].output;
        let d_in = *x
            .shape()
            .last()
            .ok_or_else(|| Error::Config("linear: scalar input".into()))?;
        if w.shape().len() != 2 || w.shape()[1] != d_in {
            return Err(Error::Config(format!(
                "linear: weight {:?} incompatible with input {:?}",
                w.shape(),
                x.shape()
            )));
        }
        let d_out = w.shape()[0];
        if b.shape() != [d_out] {
            return Err(Error::Config("linear: bias shape mismatch".into()));
        }
        let rows = x.numel() / d_in;
        let (xd, wd, bd) = (x.data(), w.data(), b.data());
        let mut out = vec![0.0; rows * d_out];
        for r in 0..rows {
            let xb = r * d_in;
            let ob = r * d_out;
            for o in 0..d_out {
                let wb = o * d_in;
                let mut acc = bd[o];
                for j in 0..d_in {
                    acc += xd[xb + j] * wd[wb + j];
                }
                out[ob + o] = acc;
            }
        }
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = d_out;
        let rg = self.rg(&[input.0, weight.0, bias.0]);
        Ok(self.push(Op::Linear, vec![input.0, weight.0, bias.0], Tensor::new(shape, out), rg))
    }

    /// Plain 2-d matrix product `[m, k] × [k, n]`.
    pub fn matmul(&mut self, a: Value, b: Value) -> Result<Value> {
        let (ta, tb) = (&self.nodes[a.0].output, &self.nodes[b.0].output);
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(Error::Config(format!(
                "matmul: incompatible shapes {:?} × {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let (ad, bd) = (ta.data(), tb.data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let av = ad[i * k + p];
                if av == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out[i * n + j] += av * bd[p * n + j];
                }
            }
        }
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(Op::Matmul, vec![a.0, b.0], Tensor::new(vec![m, n], out), rg))
    }

    /// `[m, k] × [n, k]ᵀ` — matmul with the second operand transposed.
    pub fn matmul_nt(&mut self, a: Value, b: Value) -> Result<Value> {
        let (ta, tb) = (&self.nodes[a.0].output, &self.nodes[b.0].output);
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[1] {
            return Err(Error::Config(format!(
                "matmul_nt: incompatible shapes {:?} × {:?}ᵀ",
                ta.shape(),
                tb.shape()
            )));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[0]);
        let (ad, bd) = (ta.data(), tb.data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for p in 0..k {
                    acc += ad[i * k + p] * bd[j * k + p];
                }
                out[i * n + j] = acc;
            }
        }
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(Op::MatmulNT, vec![a.0, b.0], Tensor::new(vec![m, n], out), rg))
    }

    // ── Lookup / loss ───────────────────────────────────────────────────

    /// Row gather from an embedding table `[v, d]`; gradient scatters back
    /// into the looked-up rows only.
    pub fn embedding(&mut self, table: Value, ids: &[usize]) -> Result<Value> {
        let t = &self.nodes[table.0].output;
        if t.shape().len() != 2 {
            return Err(Error::Config("embedding: table must be 2-d".into()));
        }
        let (v, d) = (t.shape()[0], t.shape()[1]);
        if let Some(&bad) = ids.iter().find(|&&id| id >= v) {
            return Err(Error::Input(format!("embedding id {bad} out of range (vocab {v})")));
        }
        let td = t.data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            out.extend_from_slice(&td[id * d..(id + 1) * d]);
        }
        let rg = self.rg(&[table.0]);
        Ok(self.push(
            Op::Embedding { ids: ids.to_vec() },
            vec![table.0],
            Tensor::new(vec![ids.len(), d], out),
            rg,
        ))
    }

    /// Weighted softmax cross-entropy: `Σ_i w_i · (−log softmax(logits_i)[label_i])`.
    /// Stabilized by per-row max subtraction.
    pub fn softmax_cross_entropy_weighted(
        &mut self,
        logits: Value,
        labels: &[usize],
        weights: &[f64],
    ) -> Result<Value> {
        let t = &self.nodes[logits.0].output;
        if t.shape().len() != 2 {
            return Err(Error::Config("cross_entropy: logits must be [n, classes]".into()));
        }
        let (n, c) = (t.shape()[0], t.shape()[1]);
        if labels.len() != n || weights.len() != n {
            return Err(Error::Input(format!(
                "cross_entropy: {n} rows but {} labels / {} weights",
                labels.len(),
                weights.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(Error::Input(format!("cross_entropy label {bad} out of range ({c} classes)")));
        }
        let xd = t.data();
        let mut probs = vec![0.0; n * c];
        let mut loss = 0.0;
        for i in 0..n {
            let row = &xd[i * c..(i + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for j in 0..c {
                let e = (row[j] - max).exp();
                probs[i * c + j] = e;
                z += e;
            }
            for j in 0..c {
                probs[i * c + j] /= z;
            }
            // -log p[y] = log z - (x[y] - max)
            loss += weights[i] * (z.ln() - (row[labels[i]] - max));
        }
        let rg = self.rg(&[logits.0]);
        Ok(self.push(
            Op::SoftmaxCrossEntropy {
                labels: labels.to_vec(),
                weights: weights.to_vec(),
                probs,
            },
            vec![logits.0],
            Tensor::scalar(loss),
            rg,
        ))
    }

    /// Mean softmax cross-entropy over the batch.
    pub fn softmax_cross_entropy(&mut self, logits: Value, labels: &[usize]) -> Result<Value> {
        let n = self.nodes[logits.0].output.shape()[0];
        let w = vec![1.0 / n as f64; n];
        self.softmax_cross_entropy_weighted(logits, labels, &w)
    }

    // ── Pooling / gathering ─────────────────────────────────────────────

    /// Global average pooling over time: `[n, ch, l] → [n, ch]`.
    pub fn mean_pool_time(&mut self, input: Value) -> Result<Value> {
        let x = &self.nodes[input.0].output;
        if x.shape().len() != 3 {
            return Err(Error::Config(format!("mean_pool_time: expected 3-d, got {:?}", x.shape())));
        }
        let (n, ch, l) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let xd = x.data();
        let mut out = vec![0.0; n * ch];
        for i in 0..n {
            for c in 0..ch {
                let base = (i * ch + c) * l;
                out[i * ch + c] = xd[base..base + l].iter().sum::<f64>() / l as f64;
            }
        }
        let rg = self.rg(&[input.0]);
        Ok(self.push(Op::MeanPoolTime, vec![input.0], Tensor::new(vec![n, ch], out), rg))
    }

    /// Mean over contiguous row segments: rows `offsets[i]..offsets[i+1]`
    /// of `[n, d]` are averaged into output row `i`. Every segment must be
    /// non-empty.
    pub fn segment_mean(&mut self, input: Value, offsets: &[usize]) -> Result<Value> {
        let x = &self.nodes[input.0].output;
        if x.shape().len() != 2 {
            return Err(Error::Config("segment_mean: expected [n, d]".into()));
        }
        let (n, d) = (x.shape()[0], x.shape()[1]);
        if offsets.len() < 2 || offsets[0] != 0 || *offsets.last().unwrap() != n {
            return Err(Error::Input(format!(
                "segment_mean: offsets {:?} do not partition {n} rows",
                offsets
            )));
        }
        let segs = offsets.len() - 1;
        let xd = x.data();
        let mut out = vec![0.0; segs * d];
        for s in 0..segs {
            let (lo, hi) = (offsets[s], offsets[s + 1]);
            if lo >= hi {
                return Err(Error::Input(format!("segment_mean: empty segment {s}")));
            }
            let len = (hi - lo) as f64;
            for r in lo..hi {
                for j in 0..d {
                    out[s * d + j] += xd[r * d + j];
                }
            }
            for j in 0..d {
                out[s * d + j] /= len;
            }
        }
        let rg = self.rg(&[input.0]);
        Ok(self.push(
            Op::SegmentMean { offsets: offsets.to_vec() },
            vec![input.0],
            Tensor::new(vec![segs, d], out),
            rg,
        ))
    }

    /// Per-row scale and shift broadcast over time:
    /// `out[i, c, t] = x[i, c, t] · s[i, c] + b[i, c]`.
    pub fn row_affine(&mut self, input: Value, s: Value, b: Value) -> Result<Value> {
        let x = &self.nodes[input.0].output;
        if x.shape().len() != 3 {
            return Err(Error::Config("row_affine: expected [n, ch, l] input".into()));
        }
        let (n, ch, l) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let ts = &self.nodes[s.0].output;
        let tb = &self.nodes[b.0].output;
        if ts.shape() != [n, ch] || tb.shape() != [n, ch] {
            return Err(Error::Input(format!(
                "row_affine: modulation shapes {:?}/{:?} do not match [{n}, {ch}]",
                ts.shape(),
                tb.shape()
            )));
        }
        let (xd, sd, bd) = (x.data(), ts.data(), tb.data());
        let mut out = vec![0.0; xd.len()];
        for rc in 0..n * ch {
            let (sv, bv) = (sd[rc], bd[rc]);
            let base = rc * l;
            for t in 0..l {
                out[base + t] = xd[base + t] * sv + bv;
            }
        }
        let rg = self.rg(&[input.0, s.0, b.0]);
        Ok(self.push(
            Op::RowAffine,
            vec![input.0, s.0, b.0],
            Tensor::new(vec![n, ch, l], out),
            rg,
        ))
    }

    /// Concatenate along the last axis; all inputs share leading shape `[n]`.
    pub fn concat_last(&mut self, parts: &[Value]) -> Result<Value> {
        if parts.is_empty() {
            return Err(Error::Config("concat_last: no inputs".into()));
        }
        let n = self.nodes[parts[0].0].output.shape()[0];
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let t = &self.nodes[p.0].output;
            if t.shape().len() != 2 || t.shape()[0] != n {
                return Err(Error::Config("concat_last: inputs must be [n, d_i] with equal n".into()));
            }
            widths.push(t.shape()[1]);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; n * total];
        let mut col = 0;
        for (p, &w) in parts.iter().zip(&widths) {
            let td = self.nodes[p.0].output.data();
            for r in 0..n {
                out[r * total + col..r * total + col + w].copy_from_slice(&td[r * w..(r + 1) * w]);
            }
            col += w;
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let rg = self.rg(&ids);
        Ok(self.push(Op::ConcatLast { widths }, ids, Tensor::new(vec![n, total], out), rg))
    }

    /// Concatenate along axis 0; trailing shapes must agree.
    pub fn concat_rows(&mut self, parts: &[Value]) -> Result<Value> {
        if parts.is_empty() {
            return Err(Error::Config("concat_rows: no inputs".into()));
        }
        let trailing: Vec<usize> = self.nodes[parts[0].0].output.shape()[1..].to_vec();
        let mut sizes = Vec::with_capacity(parts.len());
        let mut data = Vec::new();
        for p in parts {
            let t = &self.nodes[p.0].output;
            if t.shape()[1..] != trailing[..] {
                return Err(Error::Config("concat_rows: trailing shapes differ".into()));
            }
            sizes.push(t.shape()[0]);
            data.extend_from_slice(t.data());
        }
        let rows: usize = sizes.iter().sum();
        let mut shape = vec![rows];
        shape.extend_from_slice(&trailing);
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let rg = self.rg(&ids);
        Ok(self.push(Op::ConcatRows { sizes }, ids, Tensor::new(shape, data), rg))
    }

    /// View of rows `start..start+len` along axis 0.
    pub fn slice_rows(&mut self, input: Value, start: usize, len: usize) -> Result<Value> {
        let x = &self.nodes[input.0].output;
        let n = x.shape()[0];
        if start + len > n {
            return Err(Error::Input(format!(
                "slice_rows: {start}+{len} exceeds {n} rows"
            )));
        }
        let row_elems: usize = x.shape()[1..].iter().product();
        let data = x.data()[start * row_elems..(start + len) * row_elems].to_vec();
        let mut shape = vec![len];
        shape.extend_from_slice(&x.shape()[1..]);
        let rg = self.rg(&[input.0]);
        Ok(self.push(Op::SliceRows { start }, vec![input.0], Tensor::new(shape, data), rg))
    }

    // ── Slot-attention pieces ───────────────────────────────────────────

    /// Column-wise softmax of a `[k, c]` matrix (softmax over the slot axis
    /// for each channel).
    pub fn softmax_cols(&mut self, input: Value) -> Result<Value> {
        let x = &self.nodes[input.0].output;
        if x.shape().len() != 2 {
            return Err(Error::Config("softmax_cols: expected 2-d".into()));
        }
        let (k, c) = (x.shape()[0], x.shape()[1]);
        let xd = x.data();
        let mut out = vec![0.0; k * c];
        for j in 0..c {
            let mut max = f64::NEG_INFINITY;
            for i in 0..k {
                max = max.max(xd[i * c + j]);
            }
            let mut z = 0.0;
            for i in 0..k {
                let e = (xd[i * c + j] - max).exp();
                out[i * c + j] = e;
                z += e;
            }
            for i in 0..k {
                out[i * c + j] /= z;
            }
        }
        let rg = self.rg(&[input.0]);
        let probs = out.clone();
        Ok(self.push(
            Op::SoftmaxCols { probs },
            vec![input.0],
            Tensor::new(vec![k, c], out),
            rg,
        ))
    }

    /// Divide each row of a `[k, c]` matrix by its sum.
    pub fn row_normalize(&mut self, input: Value) -> Result<Value> {
        let x = &self.nodes[input.0].output;
        if x.shape().len() != 2 {
            return Err(Error::Config("row_normalize: expected 2-d".into()));
        }
        let (k, c) = (x.shape()[0], x.shape()[1]);
        let xd = x.data();
        let mut out = vec![0.0; k * c];
        let mut row_sums = vec![0.0; k];
        for i in 0..k {
            let s: f64 = xd[i * c..(i + 1) * c].iter().sum();
            if s <= 0.0 {
                return Err(Error::Numeric("row_normalize: non-positive row sum".into()));
            }
            row_sums[i] = s;
            for j in 0..c {
                out[i * c + j] = xd[i * c + j] / s;
            }
        }
        let rg = self.rg(&[input.0]);
        Ok(self.push(
            Op::RowNormalize { row_sums },
            vec![input.0],
            Tensor::new(vec![k, c], out),
            rg,
        ))
    }

    /// Per-row waveform summaries of `[n, l]`: mean, std, max, min, energy
    /// (mean of squares), in that column order. Output `[n, 5]`.
    pub fn channel_summaries(&mut self, input: Value) -> Result<Value> {
        let x = &self.nodes[input.0].output;
        if x.shape().len() != 2 {
            return Err(Error::Config("channel_summaries: expected [n, l]".into()));
        }
        let (n, l) = (x.shape()[0], x.shape()[1]);
        if l == 0 {
            return Err(Error::Input("channel_summaries: empty waveform".into()));
        }
        let xd = x.data();
        let mut out = vec![0.0; n * 5];
        let mut argmax = vec![0usize; n];
        let mut argmin = vec![0usize; n];
        let mut means = vec![0.0; n];
        let mut stds = vec![0.0; n];
        for i in 0..n {
            let row = &xd[i * l..(i + 1) * l];
            let mean = row.iter().sum::<f64>() / l as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / l as f64;
            // tiny floor keeps the std gradient finite on constant rows
            let std = (var + 1e-12).sqrt();
            let (mut amax, mut amin) = (0usize, 0usize);
            for (t, &v) in row.iter().enumerate() {
                if v > row[amax] {
                    amax = t;
                }
                if v < row[amin] {
                    amin = t;
                }
            }
            let energy = row.iter().map(|v| v * v).sum::<f64>() / l as f64;
            out[i * 5] = mean;
            out[i * 5 + 1] = std;
            out[i * 5 + 2] = row[amax];
            out[i * 5 + 3] = row[amin];
            out[i * 5 + 4] = energy;
            argmax[i] = amax;
            argmin[i] = amin;
            means[i] = mean;
            stds[i] = std;
        }
        let rg = self.rg(&[input.0]);
        Ok(self.push(
            Op::ChannelSummaries { argmax, argmin, means, stds },
            vec![input.0],
            Tensor::new(vec![n, 5], out),
            rg,
        ))
    }

    // ── Backward ────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss node. Gradients for every
    /// `requires_grad` node become available through `grad`.
    pub fn backward(&mut self, loss: Value) -> Result<()> {
        if self.nodes[loss.0].output.numel() != 1 {
            return Err(Error::Config("backward: loss must be scalar".into()));
        }
        let n = self.nodes.len();
        self.grads = (0..n).map(|_| None).collect();
        self.grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let g = match self.grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.backprop_node(idx, &g)?;
            self.grads[idx] = Some(g);
        }
        Ok(())
    }

    fn accum(&mut self, node: usize, grad_data: Vec<f64>) {
        let shape = self.nodes[node].output.shape().to_vec();
        match &mut self.grads[node] {
            Some(existing) => {
                for (e, g) in existing.data_mut().iter_mut().zip(&grad_data) {
                    *e += g;
                }
            }
            slot @ None => {
                *slot = Some(Tensor::new(shape, grad_data));
            }
        }
    }

    fn backprop_node(&mut self, idx: usize, g: &Tensor) -> Result<()> {
        let inputs = self.nodes[idx].inputs.clone();
        let needs: Vec<bool> = inputs.iter().map(|&i| self.nodes[i].requires_grad).collect();
        match &self.nodes[idx].op {
            Op::Leaf | Op::ParamLeaf(_) => {}
            Op::Add => {
                if needs[0] {
                    self.accum(inputs[0], g.data().to_vec());
                }
                if needs[1] {
                    self.accum(inputs[1], g.data().to_vec());
                }
            }
            Op::Scale(c) => {
                let c = *c;
                if needs[0] {
                    self.accum(inputs[0], g.data().iter().map(|v| c * v).collect());
                }
            }
            Op::AddScalar | Op::Reshape => {
                if needs[0] {
                    self.accum(inputs[0], g.data().to_vec());
                }
            }
            Op::Relu => {
                if needs[0] {
                    let out = self.nodes[idx].output.data();
                    let gd: Vec<f64> = g
                        .data()
                        .iter()
                        .zip(out)
                        .map(|(gv, ov)| if *ov > 0.0 { *gv } else { 0.0 })
                        .collect();
                    self.accum(inputs[0], gd);
                }
            }
            Op::Tanh => {
                if needs[0] {
                    let out = self.nodes[idx].output.data();
                    let gd: Vec<f64> = g.data().iter().zip(out).map(|(gv, ov)| gv * (1.0 - ov * ov)).collect();
                    self.accum(inputs[0], gd);
                }
            }
            Op::Conv1d { stride, padding } => {
                let (stride, padding) = (*stride, *padding);
                let x = &self.nodes[inputs[0]].output;
                let w = &self.nodes[inputs[1]].output;
                let (n, c_in, l) = (x.shape()[0], x.shape()[1], x.shape()[2]);
                let (c_out, _, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
                let lo = self.nodes[idx].output.shape()[2];
                let gd = g.data();
                let xd = x.data().to_vec();
                let wd = w.data().to_vec();

                if needs[0] {
                    let mut dx = vec![0.0; n * c_in * l];
                    for i in 0..n {
                        for co in 0..c_out {
                            let g_base = (i * c_out + co) * lo;
                            let grow = &gd[g_base..g_base + lo];
                            for ci in 0..c_in {
                                let x_base = (i * c_in + ci) * l;
                                let dxrow = &mut dx[x_base..x_base + l];
                                let w_base = (co * c_in + ci) * k;
                                for dk in 0..k {
                                    let wv = wd[w_base + dk];
                                    if wv == 0.0 {
                                        continue;
                                    }
                                    let t_min = padding.saturating_sub(dk).div_ceil(stride);
                                    let t_max = if l + padding > dk {
                                        (((l + padding - dk - 1) / stride) + 1).min(lo)
                                    } else {
                                        0
                                    };
                                    if t_min >= t_max {
                                        continue;
                                    }
                                    let src0 = t_min * stride + dk - padding;
                                    if stride == 1 {
                                        let dxs = &mut dxrow[src0..src0 + (t_max - t_min)];
                                        for (dv, gv) in dxs.iter_mut().zip(&grow[t_min..t_max]) {
                                            *dv += wv * gv;
                                        }
                                    } else {
                                        for (dv, gv) in dxrow[src0..]
                                            .iter_mut()
                                            .step_by(stride)
                                            .zip(&grow[t_min..t_max])
                                        {
                                            *dv += wv * gv;
                                        }
                                    }
                                }
                            }
                        }
                    }
                    self.accum(inputs[0], dx);
                }
                if needs[1] {
                    let mut dw = vec![0.0; c_out * c_in * k];
                    for i in 0..n {
                        for co in 0..c_out {
                            let g_base = (i * c_out + co) * lo;
                            let grow = &gd[g_base..g_base + lo];
                            for ci in 0..c_in {
                                let x_base = (i * c_in + ci) * l;
                                let xrow = &xd[x_base..x_base + l];
                                let w_base = (co * c_in + ci) * k;
                                for dk in 0..k {
                                    let t_min = padding.saturating_sub(dk).div_ceil(stride);
                                    let t_max = if l + padding > dk {
                                        (((l + padding - dk - 1) / stride) + 1).min(lo)
                                    } else {
                                        0
                                    };
                                    if t_min >= t_max {
                                        continue;
                                    }
                                    let src0 = t_min * stride + dk - padding;
                                    let mut acc = 0.0;
                                    if stride == 1 {
                                        let xs = &xrow[src0..src0 + (t_max - t_min)];
                                        for (gv, xv) in grow[t_min..t_max].iter().zip(xs) {
                                            acc += gv * xv;
                                        }
                                    } else {
                                        for (gv, xv) in grow[t_min..t_max]
                                            .iter()
                                            .zip(xrow[src0..].iter().step_by(stride))
                                        {
                                            acc += gv * xv;
                                        }
                                    }
                                    dw[w_base + dk] += acc;
                                }
                            }
                        }
                    }
                    self.accum(inputs[1], dw);
                }
                if inputs.len() == 3 && needs[2] {
                    let mut db = vec![0.0; c_out];
                    for i in 0..n {
                        for co in 0..c_out {
                            let g_base = (i * c_out + co) * lo;
                            db[co] += gd[g_base..g_base + lo].iter().sum::<f64>();
                        }
                    }
                    self.accum(inputs[2], db);
                }
            }
            Op::BatchNorm { x_hat, inv_std, train_stats } => {
                let train_stats = *train_stats;
                let x_hat = x_hat.clone();
                let inv_std = inv_std.clone();
                let shape = self.nodes[idx].output.shape().to_vec();
                let (n, ch, l) = (shape[0], shape[1], shape[2]);
                let m = (n * l) as f64;
                let gd = g.data();
                let gamma = self.nodes[inputs[1]].output.data().to_vec();

                if needs[1] {
                    let mut dgamma = vec![0.0; ch];
                    for i in 0..n {
                        for c in 0..ch {
                            let base = (i * ch + c) * l;
                            for t in 0..l {
                                dgamma[c] += gd[base + t] * x_hat[base + t];
                            }
                        }
                    }
                    self.accum(inputs[1], dgamma);
                }
                if needs[2] {
                    let mut dbeta = vec![0.0; ch];
                    for i in 0..n {
                        for c in 0..ch {
                            let base = (i * ch + c) * l;
                            dbeta[c] += gd[base..base + l].iter().sum::<f64>();
                        }
                    }
                    self.accum(inputs[2], dbeta);
                }
                if needs[0] {
                    let mut dx = vec![0.0; n * ch * l];
                    if train_stats {
                        // dx = γ·inv/m · (m·g − Σg − x̂·Σ(g·x̂)) per channel
                        for c in 0..ch {
                            let mut sum_g = 0.0;
                            let mut sum_gx = 0.0;
                            for i in 0..n {
                                let base = (i * ch + c) * l;
                                for t in 0..l {
                                    sum_g += gd[base + t];
                                    sum_gx += gd[base + t] * x_hat[base + t];
                                }
                            }
                            let coef = gamma[c] * inv_std[c] / m;
                            for i in 0..n {
                                let base = (i * ch + c) * l;
                                for t in 0..l {
                                    dx[base + t] = coef
                                        * (m * gd[base + t] - sum_g - x_hat[base + t] * sum_gx);
                                }
                            }
                        }
                    } else {
                        for c in 0..ch {
                            let coef = gamma[c] * inv_std[c];
                            for i in 0..n {
                                let base = (i * ch + c) * l;
                                for t in 0..l {
                                    dx[base + t] = coef * gd[base + t];
                                }
                            }
                        }
                    }
                    self.accum(inputs[0], dx);
                }
            }
            Op::LayerNorm { x_hat, inv_std } => {
                let x_hat = x_hat.clone();
                let inv_std = inv_std.clone();
                let d = *self.nodes[idx].output.shape().last().unwrap();
                let rows = self.nodes[idx].output.numel() / d;
                let gd = g.data();
                let gamma = self.nodes[inputs[1]].output.data().to_vec();

                if needs[1] {
                    let mut dgamma = vec![0.0; d];
                    for r in 0..rows {
                        for j in 0..d {
                            dgamma[j] += gd[r * d + j] * x_hat[r * d + j];
                        }
                    }
                    self.accum(inputs[1], dgamma);
                }
                if needs[2] {
                    let mut dbeta = vec![0.0; d];
                    for r in 0..rows {
                        for j in 0..d {
                            dbeta[j] += gd[r * d + j];
                        }
                    }
                    self.accum(inputs[2], dbeta);
                }
                if needs[0] {
                    let mut dx = vec![0.0; rows * d];
                    for r in 0..rows {
                        let base = r * d;
                        let mut sum_h = 0.0;
                        let mut sum_hx = 0.0;
                        for j in 0..d {
                            let h = gd[base + j] * gamma[j];
                            sum_h += h;
                            sum_hx += h * x_hat[base + j];
                        }
                        let inv = inv_std[r];
                        for j in 0..d {
                            let h = gd[base + j] * gamma[j];
                            dx[base + j] = inv
                                * (h - sum_h / d as f64 - x_hat[base + j] * sum_hx / d as f64);
                        }
                    }
                    self.accum(inputs[0], dx);
                }
            }
            Op::Linear => {
                let x = self.nodes[inputs[0]].output.clone();
                let w = self.nodes[inputs[1]].output.clone();
                let d_in = *x.shape().last().unwrap();
                let d_out = w.shape()[0];
                let rows = x.numel() / d_in;
                let gd = g.data();
                if needs[0] {
                    let mut dx = vec![0.0; rows * d_in];
                    for r in 0..rows {
                        for o in 0..d_out {
                            let gv = gd[r * d_out + o];
                            if gv == 0.0 {
                                continue;
                            }
                            let wb = o * d_in;
                            for j in 0..d_in {
                                dx[r * d_in + j] += gv * w.data()[wb + j];
                            }
                        }
                    }
                    self.accum(inputs[0], dx);
                }
                if needs[1] {
                    let mut dw = vec![0.0; d_out * d_in];
                    for r in 0..rows {
                        for o in 0..d_out {
                            let gv = gd[r * d_out + o];
                            if gv == 0.0 {
                                continue;
                            }
                            let xb = r * d_in;
                            let wb = o * d_in;
                            for j in 0..d_in {
                                dw[wb + j] += gv * x.data()[xb + j];
                            }
                        }
                    }
                    self.accum(inputs[1], dw);
                }
                if needs[2] {
                    let mut db = vec![0.0; d_out];
                    for r in 0..rows {
                        for o in 0..d_out {
                            db[o] += gd[r * d_out + o];
                        }
                    }
                    self.accum(inputs[2], db);
                }
            }
            Op::Matmul => {
                let a = self.nodes[inputs[0]].output.clone();
                let b = self.nodes[inputs[1]].output.clone();
                let (m, k) = (a.shape()[0], a.shape()[1]);
                let n2 = b.shape()[1];
                let gd = g.data();
                if needs[0] {
                    // dA = dY · Bᵀ
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        for p in 0..k {
                            let mut acc = 0.0;
                            for j in 0..n2 {
                                acc += gd[i * n2 + j] * b.data()[p * n2 + j];
                            }
                            da[i * k + p] = acc;
                        }
                    }
                    self.accum(inputs[0], da);
                }
                if needs[1] {
                    // dB = Aᵀ · dY
                    let mut dbm = vec![0.0; k * n2];
                    for p in 0..k {
                        for i in 0..m {
                            let av = a.data()[i * k + p];
                            if av == 0.0 {
                                continue;
                            }
                            for j in 0..n2 {
                                dbm[p * n2 + j] += av * gd[i * n2 + j];
                            }
                        }
                    }
                    self.accum(inputs[1], dbm);
                }
            }
            Op::MatmulNT => {
                let a = self.nodes[inputs[0]].output.clone();
                let b = self.nodes[inputs[1]].output.clone();
                let (m, k) = (a.shape()[0], a.shape()[1]);
                let n2 = b.shape()[0];
                let gd = g.data();
                if needs[0] {
                    // Y = A·Bᵀ ⇒ dA = dY·B
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        for j in 0..n2 {
                            let gv = gd[i * n2 + j];
                            if gv == 0.0 {
                                continue;
                            }
                            for p in 0..k {
                                da[i * k + p] += gv * b.data()[j * k + p];
                            }
                        }
                    }
                    self.accum(inputs[0], da);
                }
                if needs[1] {
                    // dB = dYᵀ·A
                    let mut dbm = vec![0.0; n2 * k];
                    for j in 0..n2 {
                        for i in 0..m {
                            let gv = gd[i * n2 + j];
                            if gv == 0.0 {
                                continue;
                            }
                            for p in 0..k {
                                dbm[j * k + p] += gv * a.data()[i * k + p];
                            }
                        }
                    }
                    self.accum(inputs[1], dbm);
                }
            }
            Op::Embedding { ids } => {
                if needs[0] {
                    let ids = ids.clone();
                    let table_shape = self.nodes[inputs[0]].output.shape().to_vec();
                    let d = table_shape[1];
                    let gd = g.data();
                    let mut dt = vec![0.0; table_shape[0] * d];
                    for (r, &id) in ids.iter().enumerate() {
                        for j in 0..d {
                            dt[id * d + j] += gd[r * d + j];
                        }
                    }
                    self.accum(inputs[0], dt);
                }
            }
            Op::SoftmaxCrossEntropy { labels, weights, probs } => {
                if needs[0] {
                    let labels = labels.clone();
                    let weights = weights.clone();
                    let probs = probs.clone();
                    let n = labels.len();
                    let c = probs.len() / n;
                    let gv = g.item();
                    let mut dl = vec![0.0; n * c];
                    for i in 0..n {
                        for j in 0..c {
                            let ind = if j == labels[i] { 1.0 } else { 0.0 };
                            dl[i * c + j] = gv * weights[i] * (probs[i * c + j] - ind);
                        }
                    }
                    self.accum(inputs[0], dl);
                }
            }
            Op::MeanPoolTime => {
                if needs[0] {
                    let in_shape = self.nodes[inputs[0]].output.shape().to_vec();
                    let (n, ch, l) = (in_shape[0], in_shape[1], in_shape[2]);
                    let gd = g.data();
                    let mut dx = vec![0.0; n * ch * l];
                    for rc in 0..n * ch {
                        let gv = gd[rc] / l as f64;
                        for t in 0..l {
                            dx[rc * l + t] = gv;
                        }
                    }
                    self.accum(inputs[0], dx);
                }
            }
            Op::SegmentMean { offsets } => {
                if needs[0] {
                    let offsets = offsets.clone();
                    let d = self.nodes[idx].output.shape()[1];
                    let n = self.nodes[inputs[0]].output.shape()[0];
                    let gd = g.data();
                    let mut dx = vec![0.0; n * d];
                    for s in 0..offsets.len() - 1 {
                        let (lo, hi) = (offsets[s], offsets[s + 1]);
                        let inv_len = 1.0 / (hi - lo) as f64;
                        for r in lo..hi {
                            for j in 0..d {
                                dx[r * d + j] = gd[s * d + j] * inv_len;
                            }
                        }
                    }
                    self.accum(inputs[0], dx);
                }
            }
            Op::RowAffine => {
                let x = self.nodes[inputs[0]].output.clone();
                let s = self.nodes[inputs[1]].output.clone();
                let (n, ch, l) = (x.shape()[0], x.shape()[1], x.shape()[2]);
                let gd = g.data();
                if needs[0] {
                    let mut dx = vec![0.0; n * ch * l];
                    for rc in 0..n * ch {
                        let sv = s.data()[rc];
                        for t in 0..l {
                            dx[rc * l + t] = gd[rc * l + t] * sv;
                        }
                    }
                    self.accum(inputs[0], dx);
                }
                if needs[1] {
                    let mut ds = vec![0.0; n * ch];
                    for rc in 0..n * ch {
                        let mut acc = 0.0;
                        for t in 0..l {
                            acc += gd[rc * l + t] * x.data()[rc * l + t];
                        }
                        ds[rc] = acc;
                    }
                    self.accum(inputs[1], ds);
                }
                if needs[2] {
                    let mut db = vec![0.0; n * ch];
                    for rc in 0..n * ch {
                        db[rc] = gd[rc * l..(rc + 1) * l].iter().sum();
                    }
                    self.accum(inputs[2], db);
                }
            }
            Op::ConcatLast { widths } => {
                let widths = widths.clone();
                let total: usize = widths.iter().sum();
                let n = self.nodes[idx].output.shape()[0];
                let gd = g.data().to_vec();
                let mut col = 0;
                for (part, &w) in inputs.iter().zip(&widths) {
                    if self.nodes[*part].requires_grad {
                        let mut dp = vec![0.0; n * w];
                        for r in 0..n {
                            dp[r * w..(r + 1) * w]
                                .copy_from_slice(&gd[r * total + col..r * total + col + w]);
                        }
                        self.accum(*part, dp);
                    }
                    col += w;
                }
            }
            Op::ConcatRows { sizes } => {
                let sizes = sizes.clone();
                let row_elems: usize = self.nodes[idx].output.shape()[1..].iter().product();
                let gd = g.data().to_vec();
                let mut row = 0;
                for (part, &sz) in inputs.iter().zip(&sizes) {
                    if self.nodes[*part].requires_grad {
                        let dp = gd[row * row_elems..(row + sz) * row_elems].to_vec();
                        self.accum(*part, dp);
                    }
                    row += sz;
                }
            }
            Op::SliceRows { start } => {
                if needs[0] {
                    let start = *start;
                    let len = self.nodes[idx].output.shape()[0];
                    let row_elems: usize = self.nodes[idx].output.shape()[1..].iter().product();
                    let n = self.nodes[inputs[0]].output.shape()[0];
                    let mut dx = vec![0.0; n * row_elems];
                    dx[start * row_elems..(start + len) * row_elems].copy_from_slice(g.data());
                    self.accum(inputs[0], dx);
                }
            }
            Op::SoftmaxCols { probs } => {
                if needs[0] {
                    let probs = probs.clone();
                    let shape = self.nodes[idx].output.shape().to_vec();
                    let (k, c) = (shape[0], shape[1]);
                    let gd = g.data();
                    let mut dx = vec![0.0; k * c];
                    for j in 0..c {
                        let mut dot = 0.0;
                        for i in 0..k {
                            dot += gd[i * c + j] * probs[i * c + j];
                        }
                        for i in 0..k {
                            dx[i * c + j] = probs[i * c + j] * (gd[i * c + j] - dot);
                        }
                    }
                    self.accum(inputs[0], dx);
                }
            }
            Op::RowNormalize { row_sums } => {
                if needs[0] {
                    let row_sums = row_sums.clone();
                    let out = self.nodes[idx].output.data().to_vec();
                    let shape = self.nodes[idx].output.shape().to_vec();
                    let (k, c) = (shape[0], shape[1]);
                    let gd = g.data();
                    let mut dx = vec![0.0; k * c];
                    for i in 0..k {
                        let mut dot = 0.0;
                        for j in 0..c {
                            dot += gd[i * c + j] * out[i * c + j];
                        }
                        for j in 0..c {
                            dx[i * c + j] = (gd[i * c + j] - dot) / row_sums[i];
                        }
                    }
                    self.accum(inputs[0], dx);
                }
            }
            Op::ChannelSummaries { argmax, argmin, means, stds } => {
                if needs[0] {
                    let argmax = argmax.clone();
                    let argmin = argmin.clone();
                    let means = means.clone();
                    let stds = stds.clone();
                    let x = self.nodes[inputs[0]].output.clone();
                    let (n, l) = (x.shape()[0], x.shape()[1]);
                    let lf = l as f64;
                    let gd = g.data();
                    let mut dx = vec![0.0; n * l];
                    for i in 0..n {
                        let (g_mean, g_std, g_max, g_min, g_energy) = (
                            gd[i * 5],
                            gd[i * 5 + 1],
                            gd[i * 5 + 2],
                            gd[i * 5 + 3],
                            gd[i * 5 + 4],
                        );
                        let base = i * l;
                        for t in 0..l {
                            let xv = x.data()[base + t];
                            // mean and energy are smooth; std via (x−μ)/(l·σ)
                            dx[base + t] += g_mean / lf
                                + g_std * (xv - means[i]) / (lf * stds[i])
                                + g_energy * 2.0 * xv / lf;
                        }
                        dx[base + argmax[i]] += g_max;
                        dx[base + argmin[i]] += g_min;
                    }
                    self.accum(inputs[0], dx);
                }
            }
        }
        Ok(())
    }

    /// Scatter accumulated gradients of parameter leaves back into the store.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) {
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::ParamLeaf(pid) = node.op {
                if let Some(g) = &self.grads[i] {
                    store.accumulate_grad(pid, g);
                }
            }
        }
    }
}
