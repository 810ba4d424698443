use std::fmt::Write as _;

use rand::{Rng, RngCore};

use super::{gemm, AutodiffError, Gradients, Result, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

const CHECKPOINT_MAGIC: &str = "sgfn-params v1";

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Text checkpoint: a magic line, the tensor count, then per tensor a
    /// header `<name> <rank> <dims...>` and one line of values.
    pub fn to_checkpoint(&self) -> String {
        let mut out = format!("{CHECKPOINT_MAGIC}\n{}\n", self.values.len());
        for (name, t) in self.names.iter().zip(&self.values) {
            let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
            let _ = writeln!(out, "{name} {} {}", t.shape().len(), dims.join(" ").trim());
            let vals: Vec<String> = t.data().iter().map(|v| format!("{v:e}")).collect();
            let _ = writeln!(out, "{}", vals.join(" "));
        }
        out
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let bad = |m: String| AutodiffError::Checkpoint(m);
        let mut lines = text.lines();
        if lines.next() != Some(CHECKPOINT_MAGIC) {
            return Err(bad("missing header line".into()));
        }
        let count: usize = lines
            .next()
            .and_then(|l| l.trim().parse().ok())
            .ok_or_else(|| bad("missing tensor count".into()))?;
        let mut store = ParamStore::new();
        for i in 0..count {
            let header = lines.next().ok_or_else(|| bad(format!("tensor {i}: missing header")))?;
            let mut parts = header.split_whitespace();
            let name = parts.next().ok_or_else(|| bad(format!("tensor {i}: empty header")))?;
            let rank: usize = parts
                .next()
                .and_then(|r| r.parse().ok())
                .ok_or_else(|| bad(format!("tensor `{name}`: bad rank")))?;
            let shape: Vec<usize> = parts
                .map(|d| d.parse().map_err(|_| bad(format!("tensor `{name}`: bad dimension `{d}`"))))
                .collect::<Result<_>>()?;
            if shape.len() != rank {
                return Err(bad(format!("tensor `{name}`: rank {rank} but {} dims", shape.len())));
            }
            let body = lines.next().ok_or_else(|| bad(format!("tensor `{name}`: missing values")))?;
            let data: Vec<f64> = body
                .split_whitespace()
                .map(|v| v.parse().map_err(|_| bad(format!("tensor `{name}`: bad value `{v}`"))))
                .collect::<Result<_>>()?;
            let t = Tensor::new(shape, data).map_err(|e| bad(format!("tensor `{name}`: {e}")))?;
            store.add(name, t);
        }
        Ok(store)
    }

    /// Copies values from `other` for every tensor with a matching name.
    pub fn load_matching(&mut self, other: &ParamStore) -> Result<()> {
        for id in self.ids().collect::<Vec<_>>() {
            let name = self.names[id.0].clone();
            let src = other
                .find(&name)
                .ok_or_else(|| AutodiffError::Checkpoint(format!("tensor `{name}` missing")))?;
            let src = other.get(src);
            if src.shape() != self.values[id.0].shape() {
                return Err(AutodiffError::ShapeMismatch {
                    op: "load",
                    left: self.values[id.0].shape().to_vec(),
                    right: src.shape().to_vec(),
                });
            }
            self.values[id.0] = src.clone();
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    LeakyRelu(f64),
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::LeakyRelu(s) => {
                if x > 0.0 {
                    x
                } else {
                    s * x
                }
            }
            Activation::Relu => x.max(0.0),
        }
    }

    fn slope(self) -> f64 {
        match self {
            Activation::LeakyRelu(s) => s,
            Activation::Relu => 0.0,
        }
    }
}

/// Fully connected network; the activation follows every layer but the last.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<(ParamId, ParamId)>,
    dims: Vec<usize>,
    activation: Activation,
}

impl Mlp {
    /// Registers weights `prefix.{i}.w` (`in × out`) and biases `prefix.{i}.b`,
    /// initialized uniformly in `±1/sqrt(fan_in)`.
    pub fn new(store: &mut ParamStore, prefix: &str, dims: &[usize], activation: Activation, rng: &mut dyn RngCore) -> Self {
        assert!(dims.len() >= 2, "an MLP needs input and output dimensions");
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for (i, w) in dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
            let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-bound..bound)).collect() };
            let wt = Tensor::from_vec(vec![fan_in, fan_out], draw(fan_in * fan_out));
            let bt = Tensor::from_vec(vec![fan_out], draw(fan_out));
            let wid = store.add(format!("{prefix}.{i}.w"), wt);
            let bid = store.add(format!("{prefix}.{i}.b"), bt);
            layers.push((wid, bid));
        }
        Self { layers, dims: dims.to_vec(), activation }
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn params(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.layers.iter().flat_map(|&(w, b)| [w, b])
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let wv = tape.param(store, w);
            let bv = tape.param(store, b);
            h = tape.affine(wv, bv, h)?;
            if i + 1 < self.layers.len() {
                h = tape.leaky_relu(h, self.activation.slope());
            }
        }
        Ok(h)
    }

    /// Tape-free forward pass over a `rows × input_dim` batch.
    pub fn infer(&self, store: &ParamStore, rows: usize, input: &[f64]) -> Vec<f64> {
        debug_assert_eq!(input.len(), rows * self.input_dim());
        let mut h = input.to_vec();
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let (fan_in, fan_out) = (self.dims[i], self.dims[i + 1]);
            let bias = store.get(b).data();
            let mut out = Vec::with_capacity(rows * fan_out);
            for _ in 0..rows {
                out.extend_from_slice(bias);
            }
            gemm(rows, fan_in, fan_out, &h, false, store.get(w).data(), false, &mut out, 1.0);
            if i + 1 < self.layers.len() {
                out.iter_mut().for_each(|v| *v = self.activation.apply(*v));
            }
            h = out;
        }
        h
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Bias-corrected Adam with a learning rate per parameter tensor.
#[derive(Clone, Debug)]
pub struct Adam {
    cfg: AdamConfig,
    lrs: Vec<f64>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl Adam {
    pub fn new(store: &ParamStore, cfg: AdamConfig) -> Self {
        let zeros: Vec<Tensor> = store.ids().map(|id| Tensor::zeros(store.get(id).shape())).collect();
        Self { cfg, lrs: vec![cfg.lr; store.len()], m: zeros.clone(), v: zeros, t: 0 }
    }

    pub fn set_lr(&mut self, id: ParamId, lr: f64) {
        self.lrs[id.0] = lr;
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update. Parameters without a gradient are treated as having a
    /// zero gradient. Fails before touching anything if a gradient is not
    /// finite.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<()> {
        let gs: Vec<Option<Tensor>> = store.ids().map(|id| grads.param(id)).collect();
        self.step_with(store, &gs)
    }

    pub fn step_with(&mut self, store: &mut ParamStore, grads: &[Option<Tensor>]) -> Result<()> {
        for (id, g) in store.ids().zip(grads) {
            if let Some(g) = g {
                if g.shape() != store.get(id).shape() {
                    return Err(AutodiffError::ShapeMismatch {
                        op: "adam",
                        left: store.get(id).shape().to_vec(),
                        right: g.shape().to_vec(),
                    });
                }
                if !g.is_finite() {
                    return Err(AutodiffError::NonFiniteGradient(store.name(id).to_string()));
                }
            }
        }
        self.t += 1;
        let AdamConfig { beta1, beta2, eps, .. } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (i, g) in grads.iter().enumerate() {
            let lr = self.lrs[i];
            let p = store.get_mut(ParamId(i)).data_mut();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for j in 0..p.len() {
                let gj = g.as_ref().map_or(0.0, |g| g.data()[j]);
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p[j] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
