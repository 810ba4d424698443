//! Exact and empirical evaluation: the terminating distribution by forward
//! dynamic programming over the even/odd graph, L1 error against the
//! reward-proportional target, mode discovery and top-k reward statistics.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, HashSet, VecDeque};

use thiserror::Error;

use crate::env::{EnvError, Environment, EvenState, StateGraph};
use crate::gfnmodel::{GfnParams, ModelError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("top-{k} statistics need at least {k} samples, got {got}")]
    TooFewSamples { k: usize, got: usize },
    #[error("distribution over {0} terminals does not match the graph")]
    Mismatch(usize),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Probabilities over the terminal states of an enumerated graph, in the
/// graph's terminal order.
#[derive(Clone, Debug, PartialEq)]
pub struct TerminatingDistribution {
    pub states: Vec<EvenState>,
    pub probs: Vec<f64>,
}

impl TerminatingDistribution {
    pub fn get(&self, x: &EvenState) -> Option<f64> {
        self.states.iter().position(|s| s == x).map(|i| self.probs[i])
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Pushes unit mass from the initial state through `policy` and the true
/// kernel. `policy(i)` returns π over the action slots of even state `i`.
pub fn terminating_distribution_with(
    graph: &StateGraph,
    mut policy: impl FnMut(usize) -> Vec<f64>,
) -> TerminatingDistribution {
    let mut mass = vec![0.0; graph.evens.len()];
    mass[0] = 1.0;
    // Evens are sorted by potential and kernel edges raise it, so index
    // order is a valid processing order.
    for i in 0..graph.evens.len() {
        if graph.evens[i].terminal || graph.even_odds[i].is_empty() || mass[i] == 0.0 {
            continue;
        }
        let pi = policy(i);
        for &j in &graph.even_odds[i] {
            let m = mass[i] * pi[graph.odds[j].action.0];
            if m == 0.0 {
                continue;
            }
            for &(c, p) in &graph.odd_children[j] {
                mass[c] += m * p;
            }
        }
    }
    TerminatingDistribution {
        states: graph.terminals.iter().map(|&i| graph.evens[i].clone()).collect(),
        probs: graph.terminals.iter().map(|&i| mass[i]).collect(),
    }
}

/// Exact P_T under the forward policy of `params` (no exploration mixing).
pub fn exact_terminating_distribution(params: &GfnParams, graph: &StateGraph) -> Result<TerminatingDistribution> {
    let a = params.num_actions();
    let rows: Vec<usize> = graph.non_terminal_indices();
    let states: Vec<&EvenState> = rows.iter().map(|&i| &graph.evens[i]).collect();
    let mut lp = Vec::with_capacity(states.len() * a);
    for chunk in states.chunks(4096) {
        lp.extend(params.forward_log_probs(chunk)?);
    }
    let mut row_of = vec![usize::MAX; graph.evens.len()];
    for (r, &i) in rows.iter().enumerate() {
        row_of[i] = r;
    }
    Ok(terminating_distribution_with(graph, |i| {
        let r = row_of[i];
        lp[r * a..(r + 1) * a].iter().map(|l| l.exp()).collect()
    }))
}

/// `p(x) = R(x)^β / Σ R^β` over the graph's terminals.
pub fn target_distribution(env: &dyn Environment, graph: &StateGraph, beta: f64) -> Result<TerminatingDistribution> {
    let mut states = Vec::with_capacity(graph.terminals.len());
    let mut w = Vec::with_capacity(graph.terminals.len());
    for x in graph.terminal_states() {
        states.push(x.clone());
        w.push(beta * env.reward(x)?.ln());
    }
    // normalize in log space; β·log R can be large
    let max = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = w.iter().map(|v| (v - max).exp()).sum();
    let probs = w.iter().map(|v| (v - max).exp() / z).collect();
    Ok(TerminatingDistribution { states, probs })
}

/// Uniform mean over terminals of `|p(x) − π(x)|`.
pub fn l1_error(pi: &TerminatingDistribution, target: &TerminatingDistribution) -> Result<f64> {
    Ok(l1_error_sum(pi, target)? / target.len() as f64)
}

/// `Σ_x |p(x) − π(x)|`.
pub fn l1_error_sum(pi: &TerminatingDistribution, target: &TerminatingDistribution) -> Result<f64> {
    if pi.len() != target.len() || pi.states != target.states {
        return Err(EvalError::Mismatch(pi.len()));
    }
    Ok(pi.probs.iter().zip(&target.probs).map(|(a, b)| (a - b).abs()).sum())
}

/// First-discovery record of every mode.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeTracker {
    discovered: Vec<Option<u64>>,
    order: Vec<(usize, u64)>,
}

impl ModeTracker {
    pub fn new(num_modes: usize) -> Self {
        Self { discovered: vec![None; num_modes], order: Vec::new() }
    }

    pub fn observe(&mut self, env: &dyn Environment, x: &EvenState, iteration: u64) {
        for m in env.modes_hit(x) {
            if self.discovered[m].is_none() {
                self.discovered[m] = Some(iteration);
                self.order.push((m, iteration));
            }
        }
    }

    pub fn count(&self) -> usize {
        self.order.len()
    }

    pub fn total(&self) -> usize {
        self.discovered.len()
    }

    pub fn is_discovered(&self, mode: usize) -> bool {
        self.discovered[mode].is_some()
    }

    /// `(mode, iteration)` in discovery order.
    pub fn discoveries(&self) -> &[(usize, u64)] {
        &self.order
    }
}

fn median_of_sorted_desc(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Mean and median of the `k` largest rewards.
pub fn topk_stats(rewards: &[f64], k: usize) -> Result<(f64, f64)> {
    if k == 0 || rewards.len() < k {
        return Err(EvalError::TooFewSamples { k, got: rewards.len() });
    }
    let mut v = rewards.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    v.truncate(k);
    let mean = v.iter().sum::<f64>() / k as f64;
    Ok((mean, median_of_sorted_desc(&v)))
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Ord64(f64);

impl Eq for Ord64 {}

impl PartialOrd for Ord64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ord64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Running top-k rewards over the distinct terminal objects seen so far.
#[derive(Clone, Debug)]
pub struct TopK {
    k: usize,
    seen: HashSet<EvenState>,
    best: BinaryHeap<Reverse<Ord64>>,
}

impl TopK {
    pub fn new(k: usize) -> Self {
        Self { k, seen: HashSet::new(), best: BinaryHeap::new() }
    }

    pub fn observe(&mut self, x: &EvenState, reward: f64) {
        if !self.seen.insert(x.clone()) {
            return;
        }
        self.best.push(Reverse(Ord64(reward)));
        if self.best.len() > self.k {
            self.best.pop();
        }
    }

    pub fn distinct(&self) -> usize {
        self.seen.len()
    }

    /// `None` until `k` distinct objects have been seen.
    pub fn stats(&self) -> Option<(f64, f64)> {
        let v: Vec<f64> = self.best.iter().map(|r| r.0 .0).collect();
        topk_stats(&v, self.k).ok()
    }
}

/// Empirical terminating distribution over the most recent samples.
#[derive(Clone, Debug)]
pub struct EmpiricalWindow {
    capacity: usize,
    recent: VecDeque<EvenState>,
    counts: HashMap<EvenState, usize>,
}

impl EmpiricalWindow {
    pub fn new(capacity: usize) -> Self {
        Self { capacity: capacity.max(1), recent: VecDeque::new(), counts: HashMap::new() }
    }

    pub fn push(&mut self, x: EvenState) {
        if self.recent.len() == self.capacity {
            if let Some(old) = self.recent.pop_front() {
                if let Some(c) = self.counts.get_mut(&old) {
                    *c -= 1;
                    if *c == 0 {
                        self.counts.remove(&old);
                    }
                }
            }
        }
        *self.counts.entry(x.clone()).or_insert(0) += 1;
        self.recent.push_back(x);
    }

    pub fn len(&self) -> usize {
        self.recent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.recent.is_empty()
    }

    /// Frequencies over `target`'s terminals; `None` for an empty window.
    pub fn distribution(&self, target: &TerminatingDistribution) -> Option<TerminatingDistribution> {
        if self.recent.is_empty() {
            return None;
        }
        let n = self.recent.len() as f64;
        Some(TerminatingDistribution {
            states: target.states.clone(),
            probs: target.states.iter().map(|s| *self.counts.get(s).unwrap_or(&0) as f64 / n).collect(),
        })
    }

    pub fn l1_error(&self, target: &TerminatingDistribution) -> Option<f64> {
        self.distribution(target).and_then(|d| l1_error(&d, target).ok())
    }
}
