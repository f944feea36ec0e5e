//! Trainable parameters, persistent buffers, and the layer structs that tie
//! tape ops to stored state.

use crate::error::{Error, Result};
use crate::tape::{Mode, Tape, Value};
use crate::tensor::Tensor;
use rand::Rng;
use std::collections::HashMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BufferId(pub(crate) usize);

/// A trainable tensor with its optimizer state.
#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Option<Tensor>,
    /// Adam first/second moment estimates, same shape as `value`.
    pub moment1: Tensor,
    pub moment2: Tensor,
    pub step: u64,
    pub trainable: bool,
}

/// Non-trainable persistent state (batch-norm running statistics).
#[derive(Clone, Debug)]
pub struct Buffer {
    pub name: String,
    pub value: Tensor,
    /// False until the first train-mode pass (or checkpoint load) fills it.
    pub initialized: bool,
}

/// Named collection of parameters and buffers. One store per model instance;
/// the trainer that owns the store is the only mutator.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    buffers: Vec<Buffer>,
    param_names: HashMap<String, ParamId>,
    buffer_names: HashMap<String, BufferId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_param(&mut self, name: &str, value: Tensor) -> ParamId {
        assert!(
            !self.param_names.contains_key(name),
            "duplicate parameter name {name}"
        );
        let shape = value.shape().to_vec();
        let id = ParamId(self.params.len());
        self.params.push(Param {
            name: name.to_string(),
            value,
            grad: None,
            moment1: Tensor::zeros(&shape),
            moment2: Tensor::zeros(&shape),
            step: 0,
            trainable: true,
        });
        self.param_names.insert(name.to_string(), id);
        id
    }

    pub fn add_buffer(&mut self, name: &str, value: Tensor) -> BufferId {
        assert!(
            !self.buffer_names.contains_key(name),
            "duplicate buffer name {name}"
        );
        let id = BufferId(self.buffers.len());
        self.buffers.push(Buffer { name: name.to_string(), value, initialized: false });
        self.buffer_names.insert(name.to_string(), id);
        id
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn buffer(&self, id: BufferId) -> &Buffer {
        &self.buffers[id.0]
    }

    pub fn buffer_mut(&mut self, id: BufferId) -> &mut Buffer {
        &mut self.buffers[id.0]
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn buffers(&self) -> impl Iterator<Item = (BufferId, &Buffer)> {
        self.buffers.iter().enumerate().map(|(i, b)| (BufferId(i), b))
    }

    pub fn lookup_param(&self, name: &str) -> Option<ParamId> {
        self.param_names.get(name).copied()
    }

    pub fn lookup_buffer(&self, name: &str) -> Option<BufferId> {
        self.buffer_names.get(name).copied()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn accumulate_grad(&mut self, id: ParamId, g: &Tensor) {
        let p = &mut self.params[id.0];
        match &mut p.grad {
            Some(existing) => {
                for (e, v) in existing.data_mut().iter_mut().zip(g.data()) {
                    *e += v;
                }
            }
            slot @ None => *slot = Some(g.clone()),
        }
    }

    pub fn clear_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Mark every parameter whose name fails the predicate as frozen.
    pub fn freeze_except<F: Fn(&str) -> bool>(&mut self, keep_trainable: F) {
        for p in &mut self.params {
            p.trainable = keep_trainable(&p.name);
        }
    }

    /// Copy values (and buffer state) from `other` for every identically
    /// named, identically shaped entry. Returns the number of parameters
    /// copied. Entries missing on either side are left untouched.
    pub fn copy_matching_from(&mut self, other: &ParamStore) -> usize {
        let mut copied = 0;
        for p in &mut self.params {
            if let Some(oid) = other.param_names.get(&p.name) {
                let ov = &other.params[oid.0].value;
                if ov.shape() == p.value.shape() {
                    p.value = ov.clone();
                    copied += 1;
                }
            }
        }
        for b in &mut self.buffers {
            if let Some(oid) = other.buffer_names.get(&b.name) {
                let src = &other.buffers[oid.0];
                if src.value.shape() == b.value.shape() {
                    b.value = src.value.clone();
                    b.initialized = src.initialized;
                }
            }
        }
        copied
    }

    /// Append `extra` freshly initialized rows to a 2-d parameter (embedding
    /// table growth when a shared vocabulary gains entries).
    pub fn grow_rows<R: Rng>(&mut self, id: ParamId, extra: usize, std: f64, rng: &mut R) {
        if extra == 0 {
            return;
        }
        let p = &mut self.params[id.0];
        let shape = p.value.shape().to_vec();
        assert_eq!(shape.len(), 2, "grow_rows on non-2d parameter {}", p.name);
        let d = shape[1];
        let new_rows = Tensor::normal(&[extra, d], std, rng);
        let mut data = p.value.clone().into_data();
        data.extend_from_slice(new_rows.data());
        p.value = Tensor::new(vec![shape[0] + extra, d], data);
        p.moment1 = Tensor::zeros(&[shape[0] + extra, d]);
        p.moment2 = Tensor::zeros(&[shape[0] + extra, d]);
        p.grad = None;
    }
}

// ── Initializers ────────────────────────────────────────────────────────

/// Fan-in-scaled uniform: U(−1/√fan_in, 1/√fan_in).
pub fn uniform_fan_in<R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Tensor::uniform(shape, bound, rng)
}

/// Embedding initializer: N(0, 0.02²).
pub const EMBED_STD: f64 = 0.02;

// ── Forward session ─────────────────────────────────────────────────────

/// One forward (and optionally backward) pass: a fresh tape plus mutable
/// access to the owning store. Only train-mode batch norm mutates the store
/// (its running statistics); evaluation is a pure function of the state.
pub struct Forward<'a> {
    pub tape: Tape,
    pub store: &'a mut ParamStore,
    pub mode: Mode,
}

impl<'a> Forward<'a> {
    pub fn new(store: &'a mut ParamStore, mode: Mode) -> Self {
        Forward { tape: Tape::new(), store, mode }
    }

    pub fn param(&mut self, id: ParamId) -> Value {
        self.tape.param(self.store, id)
    }

    pub fn input(&mut self, t: Tensor) -> Value {
        self.tape.leaf(t, false)
    }
}

// ── Layers ──────────────────────────────────────────────────────────────

#[derive(Clone, Debug)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub padding: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
}

impl Conv1d {
    /// "Same"-style symmetric padding of (k−1)/2 unless the caller overrides.
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        with_bias: bool,
        rng: &mut R,
    ) -> Self {
        assert!(kernel % 2 == 1, "conv kernel must be odd");
        let fan_in = c_in * kernel;
        let weight = store.add_param(
            &format!("{name}.weight"),
            uniform_fan_in(&[c_out, c_in, kernel], fan_in, rng),
        );
        let bias = with_bias.then(|| {
            store.add_param(&format!("{name}.bias"), uniform_fan_in(&[c_out], fan_in, rng))
        });
        Conv1d {
            weight,
            bias,
            stride,
            padding: (kernel - 1) / 2,
            c_in,
            c_out,
            kernel,
        }
    }

    pub fn forward(&self, fw: &mut Forward, x: Value) -> Result<Value> {
        let w = fw.param(self.weight);
        let b = self.bias.map(|id| fw.param(id));
        fw.tape.conv1d(x, w, b, self.stride, self.padding)
    }

    /// Multiply-accumulate count for one sample of the given input length.
    pub fn macs(&self, l_in: usize) -> usize {
        let l_out = (l_in + 2 * self.padding - self.kernel) / self.stride + 1;
        l_out * self.kernel * self.c_in * self.c_out
    }

    pub fn out_len(&self, l_in: usize) -> usize {
        (l_in + 2 * self.padding - self.kernel) / self.stride + 1
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm1d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
    pub eps: f64,
    pub momentum: f64,
    pub channels: usize,
}

impl BatchNorm1d {
    pub const DEFAULT_EPS: f64 = 1e-5;
    pub const DEFAULT_MOMENTUM: f64 = 0.1;

    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        let gamma = store.add_param(&format!("{name}.gamma"), Tensor::full(&[channels], 1.0));
        let beta = store.add_param(&format!("{name}.beta"), Tensor::zeros(&[channels]));
        let running_mean =
            store.add_buffer(&format!("{name}.running_mean"), Tensor::zeros(&[channels]));
        let running_var =
            store.add_buffer(&format!("{name}.running_var"), Tensor::full(&[channels], 1.0));
        BatchNorm1d {
            gamma,
            beta,
            running_mean,
            running_var,
            eps: Self::DEFAULT_EPS,
            momentum: Self::DEFAULT_MOMENTUM,
            channels,
        }
    }

    /// Normalize; in train mode update the running statistics in place
    /// (exponential moving average, unbiased variance for the running copy).
    pub fn forward(&self, fw: &mut Forward, x: Value) -> Result<Value> {
        if fw.mode == Mode::Eval && !fw.store.buffer(self.running_mean).initialized {
            return Err(Error::Config(format!(
                "batch norm '{}' evaluated before any train-mode pass initialized its running statistics",
                fw.store.buffer(self.running_mean).name
            )));
        }
        let gamma = fw.param(self.gamma);
        let beta = fw.param(self.beta);
        let rm = fw.store.buffer(self.running_mean).value.data().to_vec();
        let rv = fw.store.buffer(self.running_var).value.data().to_vec();
        let (out, batch_stats) =
            fw.tape.batchnorm1d(x, gamma, beta, &rm, &rv, self.eps, fw.mode)?;
        if let Some((mean, var)) = batch_stats {
            let n_items = fw.tape.value(x).shape()[0] * fw.tape.value(x).shape()[2];
            let unbias = if n_items > 1 {
                n_items as f64 / (n_items - 1) as f64
            } else {
                1.0
            };
            let mom = self.momentum;
            {
                let buf = fw.store.buffer_mut(self.running_mean);
                for (r, m) in buf.value.data_mut().iter_mut().zip(&mean) {
                    *r = (1.0 - mom) * *r + mom * m;
                }
                buf.initialized = true;
            }
            {
                let buf = fw.store.buffer_mut(self.running_var);
                for (r, v) in buf.value.data_mut().iter_mut().zip(&var) {
                    *r = (1.0 - mom) * *r + mom * (v * unbias);
                }
                buf.initialized = true;
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Self {
        let weight =
            store.add_param(&format!("{name}.weight"), uniform_fan_in(&[d_out, d_in], d_in, rng));
        let bias = store.add_param(&format!("{name}.bias"), uniform_fan_in(&[d_out], d_in, rng));
        Linear { weight, bias, d_in, d_out }
    }

    /// All-zero weights and bias: the identity element for additive
    /// modulation paths.
    pub fn new_zeroed(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize) -> Self {
        let weight = store.add_param(&format!("{name}.weight"), Tensor::zeros(&[d_out, d_in]));
        let bias = store.add_param(&format!("{name}.bias"), Tensor::zeros(&[d_out]));
        Linear { weight, bias, d_in, d_out }
    }

    pub fn forward(&self, fw: &mut Forward, x: Value) -> Result<Value> {
        let w = fw.param(self.weight);
        let b = fw.param(self.bias);
        fw.tape.linear(x, w, b)
    }

    pub fn macs_per_row(&self) -> usize {
        self.d_in * self.d_out
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
    pub dim: usize,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        let gamma = store.add_param(&format!("{name}.gamma"), Tensor::full(&[dim], 1.0));
        let beta = store.add_param(&format!("{name}.beta"), Tensor::zeros(&[dim]));
        LayerNorm { gamma, beta, eps: 1e-5, dim }
    }

    pub fn forward(&self, fw: &mut Forward, x: Value) -> Result<Value> {
        let g = fw.param(self.gamma);
        let b = fw.param(self.beta);
        fw.tape.layer_norm(x, g, b, self.eps)
    }
}

#[derive(Clone, Debug)]
pub struct Embedding {
    pub table: ParamId,
    pub dim: usize,
}

impl Embedding {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        vocab: usize,
        dim: usize,
        rng: &mut R,
    ) -> Self {
        let table =
            store.add_param(&format!("{name}.table"), Tensor::normal(&[vocab, dim], EMBED_STD, rng));
        Embedding { table, dim }
    }

    pub fn forward(&self, fw: &mut Forward, ids: &[usize]) -> Result<Value> {
        let t = fw.param(self.table);
        fw.tape.embedding(t, ids)
    }

    pub fn vocab_size(&self, store: &ParamStore) -> usize {
        store.value(self.table).shape()[0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn store_roundtrip_names() {
        let mut store = ParamStore::new();
        let id = store.add_param("w", Tensor::zeros(&[2, 2]));
        assert_eq!(store.lookup_param("w"), Some(id));
        assert_eq!(store.param_count(), 4);
    }

    #[test]
    fn grow_rows_preserves_existing() {
        let mut store = ParamStore::new();
        let id = store.add_param("emb", Tensor::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        store.grow_rows(id, 2, 0.02, &mut rng);
        assert_eq!(store.value(id).shape(), &[4, 3]);
        assert_eq!(&store.value(id).data()[..6], &[1., 2., 3., 4., 5., 6.]);
    }

    #[test]
    fn bn_eval_before_train_is_config_error() {
        let mut store = ParamStore::new();
        let bn = BatchNorm1d::new(&mut store, "bn", 2);
        let mut fw = Forward::new(&mut store, Mode::Eval);
        let x = fw.input(Tensor::zeros(&[1, 2, 4]));
        let err = bn.forward(&mut fw, x).unwrap_err();
        assert!(matches!(err, crate::error::Error::Config(_)));
    }

    #[test]
    fn copy_matching_skips_shape_mismatch() {
        let mut a = ParamStore::new();
        a.add_param("w", Tensor::full(&[2], 1.0));
        a.add_param("v", Tensor::full(&[3], 1.0));
        let mut b = ParamStore::new();
        let wb = b.add_param("w", Tensor::zeros(&[2]));
        let vb = b.add_param("v", Tensor::zeros(&[4]));
        let copied = b.copy_matching_from(&a);
        assert_eq!(copied, 1);
        assert_eq!(b.value(wb).data(), &[1.0, 1.0]);
        assert_eq!(b.value(vb).data(), &[0.0; 4]);
    }
}
