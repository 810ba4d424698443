//! Stochastic-DAG environments with an explicit even/odd structure.
//!
//! An *even* state is an ordinary environment state, the input to the
//! agent's choice. Choosing action `a` at even state `s` moves
//! deterministically to the *odd* state `(s, a)`; the environment kernel
//! then resolves `(s, a)` into the next even state. Every policy edge is
//! even → odd and every kernel edge is odd → even.
//!
//! Built-in environments:
//!
//! * [`Figure1Toy`]: one decision, two terminals, a symmetric slip kernel.
//! * [`HyperGrid`]: the GridWorld of increment/stop moves with slip noise.
//! * [`SeqEnv`]: autoregressive word-by-word sequence construction with
//!   token noise, rewarded by edit distance to a mode set or by an external
//!   reward table.

mod figure1;
mod graph;
mod hypergrid;
mod sequence;
mod spec;

use std::fmt;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use figure1::Figure1Toy;
pub use graph::{enumerate_states, NodeRef, StateGraph, DEFAULT_STATE_CAP};
pub use hypergrid::{HyperGrid, HyperGridConfig};
pub use sequence::{edit_distance, random_modes, RewardTable, SeqEnv, SeqReward};
pub use spec::{EnvKind, EnvSpec};

/// Tolerance used when checking that kernel rows are normalized.
pub const KERNEL_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("state {0} is terminal and has no actions")]
    TerminalState(EvenState),
    #[error("state {0} is not terminal")]
    NonTerminalState(EvenState),
    #[error("the initial state has no parents")]
    InitialState,
    #[error("action {action} is not valid at state {state}")]
    InvalidAction { action: usize, state: EvenState },
    #[error("environment is not enumerable at this size ({count} even states, cap {cap})")]
    NotEnumerable { count: String, cap: usize },
    #[error("invalid environment configuration: {0}")]
    Config(String),
    #[error("reward table line {line}: {msg}")]
    RewardTable { line: usize, msg: String },
    #[error("trajectory is invalid: {0}")]
    InvalidTrajectory(String),
}

/// An ordinary environment state.
///
/// `payload` holds grid coordinates or word tokens; `terminal` marks the
/// absorbing copy reached after stopping (or the completed sequence).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EvenState {
    pub payload: Vec<u16>,
    pub terminal: bool,
}

impl EvenState {
    pub fn new(payload: Vec<u16>, terminal: bool) -> Self {
        Self { payload, terminal }
    }
}

/// Formats as `[1,2]`, with a trailing `*` for terminal states.
impl fmt::Display for EvenState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, v) in self.payload.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, "]")?;
        if self.terminal {
            write!(f, "*")?;
        }
        Ok(())
    }
}

impl std::str::FromStr for EvenState {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (body, terminal) = match s.strip_suffix('*') {
            Some(b) => (b, true),
            None => (s, false),
        };
        let inner = body
            .strip_prefix('[')
            .and_then(|b| b.strip_suffix(']'))
            .ok_or_else(|| format!("malformed state `{s}`"))?;
        let payload = if inner.is_empty() {
            Vec::new()
        } else {
            inner
                .split(',')
                .map(|v| v.trim().parse::<u16>().map_err(|e| format!("state `{s}`: {e}")))
                .collect::<Result<_, _>>()?
        };
        Ok(Self { payload, terminal })
    }
}

/// Index into an environment's fixed action-slot list.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ActionId(pub usize);

/// Afterstate `(s, a)`: the action is chosen, the environment has not moved yet.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OddState {
    pub even: EvenState,
    pub action: ActionId,
}

impl fmt::Display for OddState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},a{})", self.even, self.action.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub s: EvenState,
    pub a: ActionId,
    pub s_next: EvenState,
    pub terminal: bool,
    /// Present iff `terminal`.
    pub reward: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<StepRecord>,
}

impl Trajectory {
    pub fn terminal_state(&self) -> Option<&EvenState> {
        self.steps.last().filter(|s| s.terminal).map(|s| &s.s_next)
    }

    pub fn reward(&self) -> Option<f64> {
        self.steps.last().and_then(|s| s.reward)
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Checks the chaining, start and termination invariants against `env`.
    pub fn validate(&self, env: &dyn Environment) -> Result<(), EnvError> {
        let bad = |m: String| Err(EnvError::InvalidTrajectory(m));
        let Some(first) = self.steps.first() else {
            return bad("empty trajectory".into());
        };
        if first.s != env.initial_state() {
            return bad(format!("starts at {} instead of the initial state", first.s));
        }
        for (i, st) in self.steps.iter().enumerate() {
            let last = i + 1 == self.steps.len();
            if st.terminal != last {
                return bad(format!("step {i} terminal flag is {}", st.terminal));
            }
            if st.terminal != env.is_terminal(&st.s_next) {
                return bad(format!("step {i} terminal flag disagrees with {}", st.s_next));
            }
            if st.terminal && st.reward.is_none_or(|r| r <= 0.0) {
                return bad(format!("step {i} is terminal without a positive reward"));
            }
            if !st.terminal && st.reward.is_some() {
                return bad(format!("step {i} carries a reward but is not terminal"));
            }
            if !last && self.steps[i + 1].s != st.s_next {
                return bad(format!("step {} does not continue from step {i}", i + 1));
            }
            let support = env.kernel_support(&st.s, st.a)?;
            if !support.iter().any(|(n, p)| *n == st.s_next && *p > 0.0) {
                return bad(format!(
                    "step {i}: {} is not reachable from ({}, a{})",
                    st.s_next, st.s, st.a.0
                ));
            }
        }
        Ok(())
    }
}

/// Complete-object view used by the MCMC baseline: an object is a vector of
/// `sites` values, each in `0..cardinality`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ObjectSpace {
    pub sites: usize,
    pub cardinality: usize,
}

/// The stochastic-DAG environment contract.
///
/// Implementations are immutable after construction; every method is a pure
/// function of its arguments except [`Environment::step`], which draws from
/// the supplied random stream.
pub trait Environment: Send + Sync {
    /// Short kind label (`hypergrid`, `bitseq`, ...).
    fn kind(&self) -> &'static str;

    /// Identifies the environment and every parameter affecting its dynamics
    /// or rewards.
    fn fingerprint(&self) -> String;

    fn initial_state(&self) -> EvenState;

    fn is_terminal(&self, s: &EvenState) -> bool {
        s.terminal
    }

    /// Size of the fixed action-slot list shared by every state.
    fn num_action_slots(&self) -> usize;

    /// Valid action slots at a non-terminal state, in slot order.
    fn valid_actions(&self, s: &EvenState) -> Vec<ActionId>;

    fn actions(&self, s: &EvenState) -> Result<Vec<ActionId>, EnvError> {
        if self.is_terminal(s) {
            return Err(EnvError::TerminalState(s.clone()));
        }
        Ok(self.valid_actions(s))
    }

    fn action_mask(&self, s: &EvenState) -> Vec<bool> {
        let mut mask = vec![false; self.num_action_slots()];
        if !self.is_terminal(s) {
            for a in self.valid_actions(s) {
                mask[a.0] = true;
            }
        }
        mask
    }

    /// Outcome of `a` at `s` when the environment does not slip.
    fn intended_outcome(&self, s: &EvenState, a: ActionId) -> EvenState;

    /// Actions the slip may substitute for `a` at `s`. Empty when `a` is
    /// exempt from noise.
    fn noise_actions(&self, s: &EvenState, a: ActionId) -> Vec<ActionId>;

    /// Slip probability.
    fn alpha(&self) -> f64;

    /// Next-state distribution of the odd state `(s, a)`.
    ///
    /// With slip probability α and `m` noise-eligible actions, the intended
    /// outcome has probability `(1 − α) + α/m` and each other eligible
    /// outcome `α/m`.
    fn kernel_support(&self, s: &EvenState, a: ActionId) -> Result<Vec<(EvenState, f64)>, EnvError> {
        self.check_action(s, a)?;
        let alpha = self.alpha();
        let noise = self.noise_actions(s, a);
        if alpha == 0.0 || noise.is_empty() {
            return Ok(vec![(self.intended_outcome(s, a), 1.0)]);
        }
        let m = noise.len() as f64;
        let mut out: Vec<(EvenState, f64)> = Vec::with_capacity(noise.len() + 1);
        let mut push = |next: EvenState, p: f64| {
            if let Some(e) = out.iter_mut().find(|(n, _)| *n == next) {
                e.1 += p;
            } else {
                out.push((next, p));
            }
        };
        push(self.intended_outcome(s, a), 1.0 - alpha);
        for b in noise {
            push(self.intended_outcome(s, b), alpha / m);
        }
        Ok(out)
    }

    /// Draws the next even state and fills in the terminal reward.
    fn step(&self, s: &EvenState, a: ActionId, rng: &mut dyn RngCore) -> Result<StepRecord, EnvError> {
        let support = self.kernel_support(s, a)?;
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = support.len() - 1;
        for (i, (_, p)) in support.iter().enumerate() {
            acc += p;
            if u < acc {
                chosen = i;
                break;
            }
        }
        let s_next = support[chosen].0.clone();
        let terminal = self.is_terminal(&s_next);
        let reward = if terminal { Some(self.reward(&s_next)?) } else { None };
        Ok(StepRecord { s: s.clone(), a, s_next, terminal, reward })
    }

    /// Even states that have at least one action able to reach `s_next`.
    fn predecessor_candidates(&self, s_next: &EvenState) -> Vec<EvenState>;

    /// Odd states with positive kernel probability of reaching `s_next`.
    fn parents(&self, s_next: &EvenState) -> Result<Vec<OddState>, EnvError> {
        if *s_next == self.initial_state() {
            return Err(EnvError::InitialState);
        }
        let mut out = Vec::new();
        for p in self.predecessor_candidates(s_next) {
            for a in self.valid_actions(&p) {
                let support = self.kernel_support(&p, a)?;
                if support.iter().any(|(n, pr)| n == s_next && *pr > 0.0) {
                    out.push(OddState { even: p.clone(), action: a });
                }
            }
        }
        Ok(out)
    }

    /// Parents under the noise-free view, where `(s, a)` reaches only its
    /// intended outcome.
    fn deterministic_parents(&self, s_next: &EvenState) -> Result<Vec<OddState>, EnvError> {
        if *s_next == self.initial_state() {
            return Err(EnvError::InitialState);
        }
        let mut out = Vec::new();
        for p in self.predecessor_candidates(s_next) {
            for a in self.valid_actions(&p) {
                if self.intended_outcome(&p, a) == *s_next {
                    out.push(OddState { even: p.clone(), action: a });
                }
            }
        }
        Ok(out)
    }

    /// The action at `s` whose intended outcome is `s_next`, if any. This is
    /// also the candidate index of `s_next` in a dynamics model's output.
    fn outcome_action(&self, s: &EvenState, s_next: &EvenState) -> Option<ActionId> {
        self.valid_actions(s)
            .into_iter()
            .find(|&a| self.intended_outcome(s, a) == *s_next)
    }

    /// Width of the backward-policy logit layout.
    fn num_backward_slots(&self) -> usize;

    /// Logit slot of `parent` in the backward distribution at `s_next`.
    fn backward_slot(&self, s_next: &EvenState, parent: &OddState) -> usize;

    /// Positive reward of a terminal state.
    fn reward(&self, x: &EvenState) -> Result<f64, EnvError>;

    /// Strictly increasing along every edge.
    fn potential(&self, s: &EvenState) -> usize;

    /// Upper bound on the number of steps in any trajectory.
    fn max_trajectory_len(&self) -> usize;

    fn encoding_dim(&self) -> usize;

    /// Writes the network input encoding of `s` into `out` (zeroed by the
    /// caller, length [`Environment::encoding_dim`]).
    fn encode_into(&self, s: &EvenState, out: &mut [f64]);

    /// Number of even states, `None` when it overflows `u128`.
    fn even_state_count(&self) -> Option<u128>;

    fn num_modes(&self) -> usize;

    /// Modes hit by the terminal state `x`.
    fn modes_hit(&self, x: &EvenState) -> Vec<usize>;

    fn object_space(&self) -> ObjectSpace;

    /// Terminal state for an MCMC object.
    fn object_to_state(&self, object: &[u16]) -> EvenState;

    fn state_to_object(&self, x: &EvenState) -> Vec<u16>;

    fn check_action(&self, s: &EvenState, a: ActionId) -> Result<(), EnvError> {
        if self.is_terminal(s) {
            return Err(EnvError::TerminalState(s.clone()));
        }
        if !self.valid_actions(s).contains(&a) {
            return Err(EnvError::InvalidAction { action: a.0, state: s.clone() });
        }
        Ok(())
    }

    fn encode(&self, s: &EvenState) -> Vec<f64> {
        let mut v = vec![0.0; self.encoding_dim()];
        self.encode_into(s, &mut v);
        v
    }
}

impl fmt::Debug for dyn Environment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.fingerprint())
    }
}

/// Samples an index from a probability vector.
pub fn sample_index(probs: &[f64], rng: &mut dyn RngCore) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn state_display_round_trips() {
        for s in [
            EvenState::new(vec![], false),
            EvenState::new(vec![3, 7], true),
            EvenState::new(vec![0], false),
        ] {
            let text = s.to_string();
            assert_eq!(text.parse::<EvenState>().unwrap(), s);
        }
        assert!("3,4".parse::<EvenState>().is_err());
    }
}
