//! Transition model P̂(s'|s,a) learned by maximum likelihood, and the replay
//! buffer it trains from.
//!
//! The candidate next states of `(s, a)` are the intended outcomes of every
//! valid action at `s`, so a prediction is a distribution over the action
//! slots of `s`: slot `j` stands for "landed where action `j` aims".

mod buffer;

use std::collections::HashMap;
use std::sync::Arc;

use rand::RngCore;
use thiserror::Error;

use crate::autodiff::{
    log_floor, log_softmax_rows, Activation, Adam, AdamConfig, AutodiffError, Mlp, ParamStore, Tape, Tensor, Var,
    PROB_FLOOR,
};
use crate::env::{ActionId, EnvError, Environment, EvenState, StepRecord};

pub use buffer::ReplayBuffer;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("{s_next} is not a candidate outcome of ({s}, a{a})")]
    OutsideCandidates { s: EvenState, a: usize, s_next: EvenState },
    #[error("empty batch")]
    EmptyBatch,
    #[error("replay buffer: {0}")]
    Buffer(String),
    #[error("invalid dynamics configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, DynamicsError>;

/// One `(s, a, s')` triple.
pub type Transition<'a> = (&'a EvenState, ActionId, &'a EvenState);

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DynKind {
    /// The true kernel.
    Oracle,
    /// Smoothed counts `(n(s,a,s') + λ) / (Σ n + λ·|candidates|)`.
    Tabular { lambda: f64 },
    /// MLP on `[encode(s), onehot(a)]` with one logit per candidate slot.
    Neural { hidden: usize, layers: usize },
}

#[derive(Clone, Debug)]
enum Body {
    Oracle,
    Counts { lambda: f64, counts: HashMap<(EvenState, ActionId), Vec<f64>> },
    Neural { net: Mlp, store: ParamStore, adam: Adam },
}

/// Anything that can score transitions with log P̂(s'|s,a).
pub trait TransitionModel {
    /// Log-probabilities clamped at `ln(1e-30)`, and how many were clamped.
    fn log_probs(&self, items: &[Transition<'_>]) -> Result<(Vec<f64>, usize)>;
}

#[derive(Clone, Debug)]
pub struct DynModel {
    env: Arc<dyn Environment>,
    body: Body,
}

impl DynModel {
    pub fn new(env: Arc<dyn Environment>, kind: DynKind, lr: f64, activation: Activation, rng: &mut dyn RngCore) -> Result<Self> {
        let body = match kind {
            DynKind::Oracle => Body::Oracle,
            DynKind::Tabular { lambda } => {
                if !(lambda >= 0.0 && lambda.is_finite()) {
                    return Err(DynamicsError::Config(format!("smoothing must be >= 0, got {lambda}")));
                }
                Body::Counts { lambda, counts: HashMap::new() }
            }
            DynKind::Neural { hidden, layers } => {
                if hidden == 0 || layers == 0 {
                    return Err(DynamicsError::Config("neural model needs hidden > 0 and layers > 0".into()));
                }
                if !(lr > 0.0) {
                    return Err(DynamicsError::Config(format!("model learning rate must be > 0, got {lr}")));
                }
                let a = env.num_action_slots();
                let mut dims = vec![env.encoding_dim() + a];
                dims.extend(std::iter::repeat_n(hidden, layers));
                dims.push(a);
                let mut store = ParamStore::new();
                let net = Mlp::new(&mut store, "dyn", &dims, activation, rng);
                let adam = Adam::new(&store, AdamConfig { lr, ..Default::default() });
                Body::Neural { net, store, adam }
            }
        };
        Ok(Self { env, body })
    }

    pub fn oracle(env: Arc<dyn Environment>) -> Self {
        Self { env, body: Body::Oracle }
    }

    pub fn tabular(env: Arc<dyn Environment>, lambda: f64) -> Self {
        Self { env, body: Body::Counts { lambda, counts: HashMap::new() } }
    }

    pub fn is_oracle(&self) -> bool {
        matches!(self.body, Body::Oracle)
    }

    pub fn env(&self) -> &Arc<dyn Environment> {
        &self.env
    }

    /// Neural parameters, if any.
    pub fn store(&self) -> Option<&ParamStore> {
        match &self.body {
            Body::Neural { store, .. } => Some(store),
            _ => None,
        }
    }

    fn slot_of(&self, s: &EvenState, a: ActionId, s_next: &EvenState) -> Result<usize> {
        self.env.outcome_action(s, s_next).map(|b| b.0).ok_or_else(|| DynamicsError::OutsideCandidates {
            s: s.clone(),
            a: a.0,
            s_next: s_next.clone(),
        })
    }

    fn input_batch(&self, pairs: &[(&EvenState, ActionId)]) -> Vec<f64> {
        let d = self.env.encoding_dim();
        let a = self.env.num_action_slots();
        let mut x = vec![0.0; pairs.len() * (d + a)];
        for (row, (s, act)) in x.chunks_mut(d + a).zip(pairs) {
            self.env.encode_into(s, &mut row[..d]);
            row[d + act.0] = 1.0;
        }
        x
    }

    fn candidate_mask(&self, pairs: &[(&EvenState, ActionId)]) -> Vec<bool> {
        pairs.iter().flat_map(|(s, _)| self.env.action_mask(s)).collect()
    }

    /// P̂ over candidate slots for a batch of `(s, a)`, row-major
    /// `pairs.len() × A`; non-candidate slots are 0.
    pub fn predict_slots(&self, pairs: &[(&EvenState, ActionId)]) -> Result<Vec<f64>> {
        let a = self.env.num_action_slots();
        for (s, act) in pairs {
            self.env.check_action(s, *act)?;
        }
        let mut out = vec![0.0; pairs.len() * a];
        match &self.body {
            Body::Oracle => {
                for (row, (s, act)) in out.chunks_mut(a).zip(pairs) {
                    for (next, p) in self.env.kernel_support(s, *act)? {
                        row[self.slot_of(s, *act, &next)?] += p;
                    }
                }
            }
            Body::Counts { lambda, counts } => {
                for (row, (s, act)) in out.chunks_mut(a).zip(pairs) {
                    let mask = self.env.action_mask(s);
                    let m = mask.iter().filter(|&&b| b).count() as f64;
                    let c = counts.get(&((*s).clone(), *act));
                    let total = c.map_or(0.0, |c| c.iter().sum::<f64>());
                    let denom = total + lambda * m;
                    for j in (0..a).filter(|&j| mask[j]) {
                        let n = c.map_or(0.0, |c| c[j]);
                        row[j] = if denom > 0.0 { (n + lambda) / denom } else { 1.0 / m };
                    }
                }
            }
            Body::Neural { net, store, .. } => {
                let logits = net.infer(store, pairs.len(), &self.input_batch(pairs));
                let mask = self.candidate_mask(pairs);
                let lp = log_softmax_rows(&logits, a, Some(&mask));
                for (o, (l, m)) in out.iter_mut().zip(lp.iter().zip(&mask)) {
                    *o = if *m { l.exp() } else { 0.0 };
                }
            }
        }
        Ok(out)
    }

    /// P̂(·|s,a) over the candidate next states.
    pub fn predict(&self, s: &EvenState, a: ActionId) -> Result<Vec<(EvenState, f64)>> {
        let probs = self.predict_slots(&[(s, a)])?;
        Ok(self
            .env
            .valid_actions(s)
            .into_iter()
            .map(|b| (self.env.intended_outcome(s, b), probs[b.0]))
            .collect())
    }

    /// Total-variation distance between P̂(·|s,a) and the true kernel.
    pub fn tv_to_kernel(&self, s: &EvenState, a: ActionId) -> Result<f64> {
        let model = self.predict_slots(&[(s, a)])?;
        let truth = DynModel::oracle(self.env.clone()).predict_slots(&[(s, a)])?;
        Ok(0.5 * model.iter().zip(&truth).map(|(p, q)| (p - q).abs()).sum::<f64>())
    }

    /// Mean negative log-likelihood of the observed next states.
    pub fn model_loss(&self, batch: &[StepRecord]) -> Result<f64> {
        if batch.is_empty() {
            return Err(DynamicsError::EmptyBatch);
        }
        let items: Vec<Transition<'_>> = batch.iter().map(|r| (&r.s, r.a, &r.s_next)).collect();
        let (lp, _) = self.log_probs(&items)?;
        Ok(-lp.iter().sum::<f64>() / lp.len() as f64)
    }

    /// Neural model loss on a tape, reading parameters from `store`.
    pub fn model_loss_on_tape(&self, tape: &mut Tape, store: &ParamStore, batch: &[StepRecord]) -> Result<Var> {
        let Body::Neural { net, .. } = &self.body else {
            return Err(DynamicsError::Config("only the neural model has a differentiable loss".into()));
        };
        if batch.is_empty() {
            return Err(DynamicsError::EmptyBatch);
        }
        let a = self.env.num_action_slots();
        let pairs: Vec<(&EvenState, ActionId)> = batch.iter().map(|r| (&r.s, r.a)).collect();
        let mut idx = Vec::with_capacity(batch.len());
        for (i, r) in batch.iter().enumerate() {
            idx.push(Some(i * a + self.slot_of(&r.s, r.a, &r.s_next)?));
        }
        let x = Tensor::matrix(batch.len(), self.env.encoding_dim() + a, self.input_batch(&pairs))?;
        let xv = tape.leaf(x);
        let logits = net.forward(tape, store, xv)?;
        let lp = tape.log_softmax(logits, Some(self.candidate_mask(&pairs)))?;
        let picked = tape.gather(lp, idx)?;
        let mean = tape.mean(picked);
        Ok(tape.scale(mean, -1.0))
    }

    /// One learning step on `batch`; returns the batch loss before the step.
    /// The oracle does not learn and only reports its loss.
    pub fn update(&mut self, batch: &[StepRecord]) -> Result<f64> {
        if batch.is_empty() {
            return Err(DynamicsError::EmptyBatch);
        }
        match &self.body {
            Body::Oracle => self.model_loss(batch),
            Body::Counts { .. } => {
                let loss = self.model_loss(batch)?;
                let a = self.env.num_action_slots();
                let mut slots = Vec::with_capacity(batch.len());
                for r in batch {
                    slots.push(self.slot_of(&r.s, r.a, &r.s_next)?);
                }
                if let Body::Counts { counts, .. } = &mut self.body {
                    for (r, slot) in batch.iter().zip(slots) {
                        counts.entry((r.s.clone(), r.a)).or_insert_with(|| vec![0.0; a])[slot] += 1.0;
                    }
                }
                Ok(loss)
            }
            Body::Neural { store, .. } => {
                let mut tape = Tape::new();
                let root = self.model_loss_on_tape(&mut tape, store, batch)?;
                let loss = tape.value(root).item();
                let grads = tape.backward(root)?;
                if let Body::Neural { store, adam, .. } = &mut self.body {
                    adam.step(store, &grads)?;
                }
                Ok(loss)
            }
        }
    }
}

impl TransitionModel for DynModel {
    fn log_probs(&self, items: &[Transition<'_>]) -> Result<(Vec<f64>, usize)> {
        let a = self.env.num_action_slots();
        let pairs: Vec<(&EvenState, ActionId)> = items.iter().map(|(s, act, _)| (*s, *act)).collect();
        let probs = self.predict_slots(&pairs)?;
        let mut clamped = 0;
        let mut out = Vec::with_capacity(items.len());
        for (i, (s, act, s_next)) in items.iter().enumerate() {
            let p = probs[i * a + self.slot_of(s, *act, s_next)?];
            if p < PROB_FLOOR {
                clamped += 1;
                out.push(log_floor());
            } else {
                out.push(p.ln());
            }
        }
        Ok((out, clamped))
    }
}

#[cfg(test)]
mod tests;
