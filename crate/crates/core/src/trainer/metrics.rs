use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::env::{Environment, EvenState, Trajectory};
use crate::eval::{EmpiricalWindow, ModeTracker, TerminatingDistribution, TopK};

/// One line of a metrics JSONL stream. Fields serialize in declaration
/// order; absent values are `null`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iteration: usize,
    pub wall_ms: u128,
    /// Mean GFlowNet loss over the updates since the previous record.
    pub loss: Option<f64>,
    /// Mean model loss over the model steps since the previous record.
    pub model_loss: Option<f64>,
    pub l1_exact: Option<f64>,
    pub l1_empirical: Option<f64>,
    pub modes: usize,
    pub top100_mean: Option<f64>,
    pub top100_median: Option<f64>,
    /// Log terms clamped at the probability floor since the previous record.
    pub clamped_terms: usize,
    pub seed: u64,
    pub method: String,
    pub env: String,
}

impl MetricsRecord {
    /// The record with `wall_ms` zeroed, for determinism comparisons.
    pub fn without_time(&self) -> Self {
        Self { wall_ms: 0, ..self.clone() }
    }
}

#[derive(Clone, Copy, Debug, Default)]
struct Mean {
    sum: f64,
    n: usize,
}

impl Mean {
    fn push(&mut self, v: f64) {
        self.sum += v;
        self.n += 1;
    }

    fn take(&mut self) -> Option<f64> {
        let out = (self.n > 0).then(|| self.sum / self.n as f64);
        *self = Mean::default();
        out
    }
}

/// Sample-side statistics shared by GFlowNet and MCMC runs.
#[derive(Clone, Debug)]
pub struct RunObserver {
    pub modes: ModeTracker,
    pub topk: TopK,
    pub window: EmpiricalWindow,
    loss: Mean,
    model_loss: Mean,
    clamped: usize,
}

impl RunObserver {
    pub fn new(env: &dyn Environment, window: usize, topk: usize) -> Self {
        Self {
            modes: ModeTracker::new(env.num_modes()),
            topk: TopK::new(topk),
            window: EmpiricalWindow::new(window),
            loss: Mean::default(),
            model_loss: Mean::default(),
            clamped: 0,
        }
    }

    pub fn observe(&mut self, env: &dyn Environment, t: &Trajectory, iteration: u64) -> Result<(), TrainError> {
        match t.terminal_state() {
            Some(x) => self.observe_terminal(env, x, iteration),
            None => Ok(()),
        }
    }

    pub fn observe_terminal(&mut self, env: &dyn Environment, x: &EvenState, iteration: u64) -> Result<(), TrainError> {
        self.modes.observe(env, x, iteration);
        self.topk.observe(x, env.reward(x)?);
        self.window.push(x.clone());
        Ok(())
    }

    pub fn record_loss(&mut self, loss: f64, clamped: usize) {
        self.loss.push(loss);
        self.clamped += clamped;
    }

    pub fn record_model_loss(&mut self, loss: f64) {
        self.model_loss.push(loss);
    }

    #[allow(clippy::too_many_arguments)]
    pub fn tick(
        &mut self,
        iteration: usize,
        start: Instant,
        l1_exact: Option<f64>,
        target: Option<&TerminatingDistribution>,
        seed: u64,
        method: &str,
        env: &str,
    ) -> MetricsRecord {
        let top = self.topk.stats();
        let rec = MetricsRecord {
            iteration,
            wall_ms: start.elapsed().as_millis(),
            loss: self.loss.take(),
            model_loss: self.model_loss.take(),
            l1_exact,
            l1_empirical: target.and_then(|t| self.window.l1_error(t)),
            modes: self.modes.count(),
            top100_mean: top.map(|t| t.0),
            top100_median: top.map(|t| t.1),
            clamped_terms: self.clamped,
            seed,
            method: method.to_string(),
            env: env.to_string(),
        };
        self.clamped = 0;
        rec
    }
}
