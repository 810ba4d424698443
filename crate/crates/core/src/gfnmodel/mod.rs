//! GFlowNet quantities: forward policy π(a|s), backward policy
//! π_B((s,a)|s'), state log-flow log F(s) and log Z.
//!
//! Both parameterizations produce the same per-state head row of width
//! `A + B + 1`: forward logits over the env's action slots, backward logits
//! over its backward slots, then log F. Tabular mode stores one such row per
//! enumerated even state (zero-initialized, so every head starts uniform);
//! neural mode computes it with one shared MLP trunk. log Z is a separate
//! scalar in both.

mod sampler;

use std::collections::HashMap;
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use thiserror::Error;

use crate::autodiff::{log_softmax_rows, Activation, AutodiffError, Mlp, ParamId, ParamStore, Tape, Tensor, Var};
use crate::env::{enumerate_states, ActionId, EnvError, Environment, EvenState, OddState, StateGraph};

pub use sampler::{mixed_probs, sample_batch, sample_trajectory};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("state {0} has no row in the tabular parameters")]
    UnknownState(EvenState),
    #[error("trajectory exceeded the horizon bound of {0} steps")]
    HorizonExceeded(usize),
    #[error("invalid model configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Parameterization {
    Tabular,
    Neural { hidden: usize, layers: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct GfnConfig {
    pub parameterization: Parameterization,
    /// Reward exponent β.
    pub beta: f64,
    /// Fix π_B to the uniform distribution over parents.
    pub uniform_backward: bool,
    pub activation: Activation,
    /// Enumeration cap for tabular mode.
    pub state_cap: usize,
}

impl Default for GfnConfig {
    fn default() -> Self {
        Self {
            parameterization: Parameterization::Tabular,
            beta: 1.0,
            uniform_backward: false,
            activation: Activation::LeakyRelu(0.01),
            state_cap: crate::env::DEFAULT_STATE_CAP,
        }
    }
}

/// Parent set π_B is normalized over.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BackwardView {
    /// Every odd state that can reach `s'` under the stochastic kernel.
    Kernel,
    /// Odd states whose intended outcome is `s'`: the deterministic view
    /// used by plain DB and TB.
    Intended,
}

#[derive(Clone, Debug)]
enum Body {
    Tabular { graph: Arc<StateGraph>, table: ParamId },
    Neural { net: Mlp },
}

#[derive(Clone, Debug)]
pub struct GfnParams {
    env: Arc<dyn Environment>,
    cfg: GfnConfig,
    store: ParamStore,
    body: Body,
    logz: ParamId,
    n_actions: usize,
    n_back: usize,
}

impl GfnParams {
    pub fn new(env: Arc<dyn Environment>, cfg: GfnConfig, rng: &mut dyn RngCore) -> Result<Self> {
        let graph = match cfg.parameterization {
            Parameterization::Tabular => Some(Arc::new(enumerate_states(env.as_ref(), cfg.state_cap)?)),
            Parameterization::Neural { .. } => None,
        };
        Self::build(env, cfg, graph, rng)
    }

    /// Tabular parameters over an already enumerated graph.
    pub fn tabular(env: Arc<dyn Environment>, cfg: GfnConfig, graph: Arc<StateGraph>) -> Result<Self> {
        let cfg = GfnConfig { parameterization: Parameterization::Tabular, ..cfg };
        // tabular bodies draw nothing
        let mut unused = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        Self::build(env, cfg, Some(graph), &mut unused)
    }

    fn build(
        env: Arc<dyn Environment>,
        cfg: GfnConfig,
        graph: Option<Arc<StateGraph>>,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        if !(cfg.beta > 0.0 && cfg.beta.is_finite()) {
            return Err(ModelError::Config(format!("reward exponent must be > 0, got {}", cfg.beta)));
        }
        let n_actions = env.num_action_slots();
        let n_back = env.num_backward_slots();
        let width = n_actions + n_back + 1;
        let mut store = ParamStore::new();
        let body = match (cfg.parameterization, graph) {
            (Parameterization::Tabular, Some(graph)) => {
                let table = store.add("table", Tensor::zeros(&[graph.evens.len(), width]));
                Body::Tabular { graph, table }
            }
            (Parameterization::Tabular, None) => unreachable!("tabular parameters are built from a graph"),
            (Parameterization::Neural { hidden, layers }, _) => {
                if hidden == 0 || layers == 0 {
                    return Err(ModelError::Config("neural trunk needs hidden > 0 and layers > 0".into()));
                }
                let mut dims = vec![env.encoding_dim()];
                dims.extend(std::iter::repeat_n(hidden, layers));
                dims.push(width);
                Body::Neural { net: Mlp::new(&mut store, "trunk", &dims, cfg.activation, rng) }
            }
        };
        let logz = store.add("logz", Tensor::vector(vec![0.0]));
        Ok(Self { env, cfg, store, body, logz, n_actions, n_back })
    }

    pub fn env(&self) -> &Arc<dyn Environment> {
        &self.env
    }

    pub fn config(&self) -> &GfnConfig {
        &self.cfg
    }

    pub fn beta(&self) -> f64 {
        self.cfg.beta
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn logz_id(&self) -> ParamId {
        self.logz
    }

    pub fn logz(&self) -> f64 {
        self.store.get(self.logz).item()
    }

    pub fn graph(&self) -> Option<&Arc<StateGraph>> {
        match &self.body {
            Body::Tabular { graph, .. } => Some(graph),
            Body::Neural { .. } => None,
        }
    }

    pub fn is_tabular(&self) -> bool {
        matches!(self.body, Body::Tabular { .. })
    }

    /// Width of a head row: forward slots, backward slots, log F.
    pub fn width(&self) -> usize {
        self.n_actions + self.n_back + 1
    }

    pub fn num_actions(&self) -> usize {
        self.n_actions
    }

    pub fn num_backward(&self) -> usize {
        self.n_back
    }

    /// Column of log F in a head row.
    pub fn flow_col(&self) -> usize {
        self.n_actions + self.n_back
    }

    fn table_rows(&self, graph: &StateGraph, states: &[&EvenState]) -> Result<Vec<usize>> {
        states
            .iter()
            .map(|s| graph.even_index(s).ok_or_else(|| ModelError::UnknownState((*s).clone())))
            .collect()
    }

    fn encode_batch(&self, states: &[&EvenState]) -> Vec<f64> {
        let d = self.env.encoding_dim();
        let mut x = vec![0.0; states.len() * d];
        for (row, s) in x.chunks_mut(d).zip(states) {
            self.env.encode_into(s, row);
        }
        x
    }

    /// Raw head rows for `states`, `states.len() × width`, without a tape.
    pub fn head_rows(&self, states: &[&EvenState]) -> Result<Vec<f64>> {
        let w = self.width();
        match &self.body {
            Body::Tabular { graph, table } => {
                let data = self.store.get(*table).data();
                let mut out = Vec::with_capacity(states.len() * w);
                for r in self.table_rows(graph, states)? {
                    out.extend_from_slice(&data[r * w..(r + 1) * w]);
                }
                Ok(out)
            }
            Body::Neural { net } => Ok(net.infer(&self.store, states.len(), &self.encode_batch(states))),
        }
    }

    /// Head rows recorded on `tape` so losses can differentiate through them.
    pub fn head_on_tape(&self, tape: &mut Tape, store: &ParamStore, states: &[&EvenState]) -> Result<Var> {
        match &self.body {
            Body::Tabular { graph, table } => {
                let rows = self.table_rows(graph, states)?;
                let t = tape.param(store, *table);
                Ok(tape.gather_rows(t, rows)?)
            }
            Body::Neural { net } => {
                let x = Tensor::matrix(states.len(), self.env.encoding_dim(), self.encode_batch(states))?;
                let xv = tape.leaf(x);
                Ok(net.forward(tape, store, xv)?)
            }
        }
    }

    /// Forward mask over action slots, flattened row-major.
    pub fn forward_mask(&self, states: &[&EvenState]) -> Vec<bool> {
        states.iter().flat_map(|s| self.env.action_mask(s)).collect()
    }

    /// Parents of `s_next` under `view` with their backward slots.
    pub fn backward_parents(&self, s_next: &EvenState, view: BackwardView) -> Result<Vec<(OddState, usize)>> {
        let parents = match view {
            BackwardView::Kernel => self.env.parents(s_next)?,
            BackwardView::Intended => self.env.deterministic_parents(s_next)?,
        };
        Ok(parents
            .into_iter()
            .map(|p| {
                let slot = self.env.backward_slot(s_next, &p);
                (p, slot)
            })
            .collect())
    }

    /// Backward mask row for `s_next`; all false at the initial state.
    pub fn backward_mask(&self, s_next: &EvenState, view: BackwardView) -> Result<Vec<bool>> {
        let mut mask = vec![false; self.n_back];
        if *s_next == self.env.initial_state() {
            return Ok(mask);
        }
        for (_, slot) in self.backward_parents(s_next, view)? {
            mask[slot] = true;
        }
        Ok(mask)
    }

    /// Masked forward log-probabilities over action slots for a batch.
    pub fn forward_log_probs(&self, states: &[&EvenState]) -> Result<Vec<f64>> {
        let w = self.width();
        let a = self.n_actions;
        let rows = self.head_rows(states)?;
        let logits: Vec<f64> = rows.chunks(w).flat_map(|r| r[..a].iter().copied()).collect();
        let mask = self.forward_mask(states);
        Ok(log_softmax_rows(&logits, a.max(1), Some(&mask)))
    }

    /// π(·|s) over the valid actions of `s`.
    pub fn forward_dist(&self, s: &EvenState) -> Result<Vec<(ActionId, f64)>> {
        let actions = self.env.actions(s)?;
        let lp = self.forward_log_probs(&[s])?;
        Ok(actions.into_iter().map(|a| (a, lp[a.0].exp())).collect())
    }

    /// π_B(·|s') over the parents of `s'` under `view`.
    pub fn backward_dist(&self, s_next: &EvenState, view: BackwardView) -> Result<Vec<(OddState, f64)>> {
        let parents = self.backward_parents(s_next, view)?;
        if self.cfg.uniform_backward {
            let p = 1.0 / parents.len() as f64;
            return Ok(parents.into_iter().map(|(o, _)| (o, p)).collect());
        }
        let row = self.head_rows(&[s_next])?;
        let logits = &row[self.n_actions..self.n_actions + self.n_back];
        let mask = self.backward_mask(s_next, view)?;
        let lp = log_softmax_rows(logits, self.n_back.max(1), Some(&mask));
        Ok(parents.into_iter().map(|(o, slot)| (o, lp[slot].exp())).collect())
    }

    /// β·log R(s) at terminals, the learned value elsewhere.
    pub fn log_flow(&self, s: &EvenState) -> Result<f64> {
        if self.env.is_terminal(s) {
            return self.terminal_log_flow(s);
        }
        Ok(self.head_rows(&[s])?[self.flow_col()])
    }

    pub fn terminal_log_flow(&self, x: &EvenState) -> Result<f64> {
        Ok(self.cfg.beta * self.env.reward(x)?.ln())
    }

    /// Sets one tabular head row; used to hand-construct solutions.
    pub fn set_table_row(&mut self, s: &EvenState, row: &[f64]) -> Result<()> {
        let w = self.width();
        let Body::Tabular { graph, table } = &self.body else {
            return Err(ModelError::Config("only tabular parameters have rows".into()));
        };
        let r = graph.even_index(s).ok_or_else(|| ModelError::UnknownState(s.clone()))?;
        if row.len() != w {
            return Err(ModelError::Config(format!("row has {} values, expected {w}", row.len())));
        }
        let table = *table;
        self.store.get_mut(table).data_mut()[r * w..(r + 1) * w].copy_from_slice(row);
        Ok(())
    }

    pub fn set_logz(&mut self, v: f64) {
        self.store.get_mut(self.logz).data_mut()[0] = v;
    }

    /// Text checkpoint of every parameter tensor. Tabular rows follow the
    /// enumeration's state index order.
    pub fn to_checkpoint(&self) -> String {
        self.store.to_checkpoint()
    }

    pub fn load_checkpoint(&mut self, text: &str) -> Result<()> {
        let other = ParamStore::from_checkpoint(text)?;
        self.store.load_matching(&other)?;
        Ok(())
    }

    /// Row index of each distinct state, in first-seen order.
    pub(crate) fn index_states<'a>(states: impl IntoIterator<Item = &'a EvenState>) -> (Vec<&'a EvenState>, HashMap<&'a EvenState, usize>) {
        let mut order = Vec::new();
        let mut index = HashMap::new();
        for s in states {
            index.entry(s).or_insert_with(|| {
                order.push(s);
                order.len() - 1
            });
        }
        (order, index)
    }
}
