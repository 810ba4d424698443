//! The training loop: each iteration samples `M` fresh trajectories, takes
//! one optimizer step on the GFlowNet objective over them, then (with a
//! learned model) one step on the dynamics model over `K` records replayed
//! from the buffer.

mod fit;
mod metrics;

use std::sync::Arc;
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::autodiff::{Activation, Adam, AdamConfig, AutodiffError};
use crate::dynamics::{DynKind, DynModel, DynamicsError, ReplayBuffer, TransitionModel};
use crate::env::{enumerate_states, EnvError, Environment, StateGraph, Trajectory};
use crate::eval::{self, EvalError, TerminatingDistribution};
use crate::gfnmodel::{sample_batch, GfnConfig, GfnParams, ModelError, Parameterization};
use crate::mcmc::{ChainSet, McmcError};
use crate::objectives::{self, Objective, ObjectiveError};

pub use fit::{all_trajectories, all_transitions, fit_exhaustive, FitConfig, FitReport};
pub use metrics::{MetricsRecord, RunObserver};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Mcmc(#[from] McmcError),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("training aborted at iteration {}: {}", .0.iteration, .0.reason)]
    NonFinite(Box<Diagnostic>),
}

/// State captured when a run aborts on a non-finite loss or gradient.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Diagnostic {
    pub iteration: usize,
    pub reason: String,
    pub loss: f64,
    pub clamped_terms: usize,
    /// The offending batch, one trajectory per entry as `s -a-> s' ...`.
    pub batch: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DynamicsMode {
    Learned,
    Oracle,
}

impl DynamicsMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            DynamicsMode::Learned => "learned",
            DynamicsMode::Oracle => "oracle",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub objective: Objective,
    pub dynamics_mode: DynamicsMode,
    /// Learned-model form; ignored in oracle mode.
    pub model: DynKind,
    pub gfn: GfnConfig,
    pub iterations: usize,
    /// Trajectories per iteration, `M`.
    pub rollouts: usize,
    /// Replayed records per model step, `K`.
    pub model_batch: usize,
    pub lr: f64,
    pub lr_logz: f64,
    pub lr_model: f64,
    pub epsilon: f64,
    pub buffer_capacity: usize,
    pub seed: u64,
    pub eval_every: usize,
    /// Iterations that skip the stochastic-objective update while a learned
    /// model leaves its initialization.
    pub warmup: usize,
    /// Sliding window for the empirical terminating distribution.
    pub window: usize,
    pub topk: usize,
    /// Largest even-state count evaluated exactly.
    pub eval_state_cap: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            objective: Objective::StochDb,
            dynamics_mode: DynamicsMode::Learned,
            model: DynKind::Neural { hidden: 256, layers: 2 },
            gfn: GfnConfig { parameterization: Parameterization::Neural { hidden: 256, layers: 2 }, ..Default::default() },
            iterations: 20_000,
            rollouts: 16,
            model_batch: 16,
            lr: 1e-3,
            lr_logz: 0.1,
            lr_model: 1e-4,
            epsilon: 0.0,
            buffer_capacity: 100_000,
            seed: 0,
            eval_every: 100,
            warmup: 10,
            window: 100_000,
            topk: 100,
            eval_state_cap: 200_000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.lr > 0.0 && self.lr_logz > 0.0 && self.lr_model > 0.0) {
            return bad("learning rates must be > 0");
        }
        if self.iterations == 0 || self.rollouts == 0 || self.model_batch == 0 {
            return bad("iterations, rollouts and model_batch must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad("epsilon must be in [0,1]");
        }
        if self.buffer_capacity == 0 || self.eval_every == 0 || self.window == 0 || self.topk == 0 {
            return bad("buffer_capacity, eval_every, window and topk must be >= 1");
        }
        if !(self.gfn.beta > 0.0) {
            return bad("reward exponent must be > 0");
        }
        Ok(())
    }

    fn learns_model(&self) -> bool {
        self.dynamics_mode == DynamicsMode::Learned && self.objective.is_stochastic()
    }
}

/// Independent random streams split from one root seed.
pub fn stream(seed: u64, purpose: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose as u64);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Init = 1,
    Rollouts = 2,
    Buffer = 3,
    ModelInit = 4,
    Eval = 5,
}

/// Result of [`train`].
#[derive(Debug)]
pub struct TrainRun {
    pub params: GfnParams,
    pub model: DynModel,
    pub buffer: ReplayBuffer,
    pub metrics: Vec<MetricsRecord>,
    /// Global gradient norm of every GFlowNet update, in order.
    pub grad_norms: Vec<f64>,
    pub wall_ms: u128,
}

/// Exact-evaluation context for enumerable environments.
#[derive(Clone, Debug)]
pub struct ExactEval {
    pub graph: Arc<StateGraph>,
    pub target: TerminatingDistribution,
}

impl ExactEval {
    /// `None` when the environment is too large to enumerate under `cap`.
    pub fn try_new(env: &dyn Environment, beta: f64, cap: usize) -> Result<Option<Self>, TrainError> {
        match enumerate_states(env, cap) {
            Ok(g) => {
                let target = eval::target_distribution(env, &g, beta)?;
                Ok(Some(Self { graph: Arc::new(g), target }))
            }
            Err(EnvError::NotEnumerable { .. }) => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    pub fn l1(&self, params: &GfnParams) -> Result<f64, TrainError> {
        let pt = eval::exact_terminating_distribution(params, &self.graph)?;
        Ok(eval::l1_error(&pt, &self.target)?)
    }
}

fn describe_batch(trajs: &[Trajectory]) -> Vec<String> {
    trajs
        .iter()
        .map(|t| {
            let mut s = String::new();
            for (i, st) in t.steps.iter().enumerate() {
                if i == 0 {
                    s.push_str(&st.s.to_string());
                }
                s.push_str(&format!(" -a{}-> {}", st.a.0, st.s_next));
            }
            s
        })
        .collect()
}

/// Builds the GFlowNet parameters, reusing `exact`'s enumeration in tabular
/// mode.
pub fn init_params(env: &Arc<dyn Environment>, cfg: &TrainConfig, exact: Option<&ExactEval>) -> Result<GfnParams, TrainError> {
    let mut rng = stream(cfg.seed, Stream::Init);
    Ok(match (cfg.gfn.parameterization, exact) {
        (Parameterization::Tabular, Some(ex)) => GfnParams::tabular(env.clone(), cfg.gfn.clone(), ex.graph.clone())?,
        _ => GfnParams::new(env.clone(), cfg.gfn.clone(), &mut rng)?,
    })
}

pub fn init_model(env: &Arc<dyn Environment>, cfg: &TrainConfig) -> Result<DynModel, TrainError> {
    if !cfg.learns_model() {
        return Ok(DynModel::oracle(env.clone()));
    }
    let mut rng = stream(cfg.seed, Stream::ModelInit);
    Ok(DynModel::new(env.clone(), cfg.model, cfg.lr_model, cfg.gfn.activation, &mut rng)?)
}

/// Runs the training loop, handing every metrics record to `sink` as it is
/// produced.
pub fn train(env: Arc<dyn Environment>, cfg: &TrainConfig, sink: &mut dyn FnMut(&MetricsRecord)) -> Result<TrainRun, TrainError> {
    cfg.validate()?;
    let start = Instant::now();
    let exact = ExactEval::try_new(env.as_ref(), cfg.gfn.beta, cfg.eval_state_cap)?;
    let mut params = init_params(&env, cfg, exact.as_ref())?;
    let mut model = init_model(&env, cfg)?;
    let mut adam = Adam::new(params.store(), AdamConfig { lr: cfg.lr, ..Default::default() });
    adam.set_lr(params.logz_id(), cfg.lr_logz);
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity)?;
    let mut roll_rng = stream(cfg.seed, Stream::Rollouts);
    let mut buf_rng = stream(cfg.seed, Stream::Buffer);

    let method = cfg.objective.as_str();
    let mut obs = RunObserver::new(env.as_ref(), cfg.window, cfg.topk);
    let mut metrics = Vec::new();
    let mut grad_norms = Vec::with_capacity(cfg.iterations);

    for it in 0..cfg.iterations {
        let trajs = sample_batch(&params, cfg.rollouts, cfg.epsilon, &mut roll_rng)?;
        for t in &trajs {
            buffer.push(t)?;
            obs.observe(env.as_ref(), t, it as u64 + 1)?;
        }

        let warming = cfg.learns_model() && it < cfg.warmup;
        if !warming {
            let dyn_ref: Option<&dyn TransitionModel> = cfg.objective.is_stochastic().then_some(&model as _);
            let (report, grads) = objectives::evaluate(&params, cfg.objective, &trajs, dyn_ref)?;
            let abort = |reason: String| {
                TrainError::NonFinite(Box::new(Diagnostic {
                    iteration: it + 1,
                    reason,
                    loss: report.loss,
                    clamped_terms: report.clamped,
                    batch: describe_batch(&trajs),
                }))
            };
            if !report.loss.is_finite() {
                return Err(abort(format!("non-finite {method} loss {}", report.loss)));
            }
            match adam.step(params.store_mut(), &grads) {
                Ok(()) => {}
                Err(AutodiffError::NonFiniteGradient(name)) => {
                    return Err(abort(format!("non-finite gradient for `{name}`")))
                }
                Err(e) => return Err(ObjectiveError::from(e).into()),
            }
            grad_norms.push(report.total_grad_norm());
            obs.record_loss(report.loss, report.clamped);
        }

        if cfg.learns_model() {
            let batch = buffer.sample(cfg.model_batch, &mut buf_rng)?;
            let ml = model.update(&batch)?;
            if !ml.is_finite() {
                return Err(TrainError::NonFinite(Box::new(Diagnostic {
                    iteration: it + 1,
                    reason: format!("non-finite model loss {ml}"),
                    loss: ml,
                    clamped_terms: 0,
                    batch: Vec::new(),
                })));
            }
            obs.record_model_loss(ml);
        }

        let done = it + 1;
        if done % cfg.eval_every == 0 || done == cfg.iterations {
            let l1_exact = exact.as_ref().map(|ex| ex.l1(&params)).transpose()?;
            let rec = obs.tick(done, start, l1_exact, exact.as_ref().map(|e| &e.target), cfg.seed, method, &env.fingerprint());
            sink(&rec);
            metrics.push(rec);
        }
    }

    Ok(TrainRun { params, model, buffer, metrics, grad_norms, wall_ms: start.elapsed().as_millis() })
}

/// Metropolis–Hastings baseline reporting through the same metrics schema.
/// One iteration advances each of `chains` chains by `rollouts / chains`
/// steps (at least one), so the sample budget per iteration matches a
/// GFlowNet iteration of `rollouts` trajectories.
pub fn run_mcmc(
    env: Arc<dyn Environment>,
    cfg: &TrainConfig,
    chains: usize,
    sink: &mut dyn FnMut(&MetricsRecord),
) -> Result<Vec<MetricsRecord>, TrainError> {
    cfg.validate()?;
    if chains == 0 {
        return Err(TrainError::Config("mcmc needs at least one chain".into()));
    }
    let start = Instant::now();
    let exact = ExactEval::try_new(env.as_ref(), cfg.gfn.beta, cfg.eval_state_cap)?;
    let mut set = ChainSet::new(env.as_ref(), chains, cfg.gfn.beta, cfg.seed)?;
    let per_iter = (cfg.rollouts / chains).max(1);
    let mut obs = RunObserver::new(env.as_ref(), cfg.window, cfg.topk);
    let mut metrics = Vec::new();
    for it in 0..cfg.iterations {
        for _ in 0..per_iter {
            for x in set.advance(env.as_ref())? {
                obs.observe_terminal(env.as_ref(), &x, it as u64 + 1)?;
            }
        }
        let done = it + 1;
        if done % cfg.eval_every == 0 || done == cfg.iterations {
            let rec = obs.tick(done, start, None, exact.as_ref().map(|e| &e.target), cfg.seed, "mcmc", &env.fingerprint());
            sink(&rec);
            metrics.push(rec);
        }
    }
    Ok(metrics)
}

/// Trace of the covariance of the GFlowNet gradient across `batches` fresh
/// batches of `m` trajectories, at fixed parameters.
pub fn gradient_variance(
    params: &GfnParams,
    objective: Objective,
    model: Option<&dyn TransitionModel>,
    batches: usize,
    m: usize,
    epsilon: f64,
    rng: &mut dyn RngCore,
) -> Result<f64, TrainError> {
    if batches < 2 {
        return Err(TrainError::Config("gradient variance needs at least two batches".into()));
    }
    let store = params.store();
    let mut sum: Vec<f64> = Vec::new();
    let mut sum_sq: Vec<f64> = Vec::new();
    for _ in 0..batches {
        let trajs = sample_batch(params, m, epsilon, rng)?;
        let (_, grads) = objectives::evaluate(params, objective, &trajs, model)?;
        let flat: Vec<f64> = store
            .ids()
            .flat_map(|id| grads.param(id).map_or_else(|| vec![0.0; store.get(id).len()], |g| g.into_data()))
            .collect();
        if sum.is_empty() {
            sum = vec![0.0; flat.len()];
            sum_sq = vec![0.0; flat.len()];
        }
        for (i, g) in flat.iter().enumerate() {
            sum[i] += g;
            sum_sq[i] += g * g;
        }
    }
    let n = batches as f64;
    Ok(sum
        .iter()
        .zip(&sum_sq)
        .map(|(s, q)| (q - s * s / n) / (n - 1.0))
        .sum())
}

/// Activation used by the built-in networks.
pub const DEFAULT_ACTIVATION: Activation = Activation::LeakyRelu(0.01);

#[cfg(test)]
mod tests;
