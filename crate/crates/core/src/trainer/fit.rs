//! Full-batch fitting over every transition or every trajectory of an
//! enumerated graph. Exactness checks use it to drive residuals to zero;
//! the training loop does not.

use crate::autodiff::{Adam, AdamConfig, Tape};
use crate::dynamics::TransitionModel;
use crate::env::{EnvError, Environment, StateGraph, StepRecord, Trajectory};
use crate::gfnmodel::GfnParams;
use crate::objectives::{self, Objective, ObjectiveError};

use super::TrainError;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitConfig {
    /// Adam rate at the first step, decayed geometrically to `lr_final`.
    pub lr: f64,
    pub lr_final: f64,
    pub max_steps: usize,
    /// Stop once every |residual| is below this.
    pub tol: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { lr: 0.05, lr_final: 1e-7, max_steps: 50_000, tol: 1e-8 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitReport {
    pub steps: usize,
    pub loss: f64,
    pub max_residual: f64,
}

/// Every `(s, a, s')` with positive kernel probability.
pub fn all_transitions(env: &dyn Environment, graph: &StateGraph) -> Result<Vec<StepRecord>, EnvError> {
    let mut out = Vec::new();
    for (j, odd) in graph.odds.iter().enumerate() {
        for &(c, _) in &graph.odd_children[j] {
            let s_next = graph.evens[c].clone();
            let terminal = env.is_terminal(&s_next);
            let reward = if terminal { Some(env.reward(&s_next)?) } else { None };
            out.push(StepRecord { s: odd.even.clone(), a: odd.action, s_next, terminal, reward });
        }
    }
    Ok(out)
}

/// Every complete trajectory, as distinct action/outcome sequences.
/// Fails once more than `cap` have been produced.
pub fn all_trajectories(env: &dyn Environment, graph: &StateGraph, cap: usize) -> Result<Vec<Trajectory>, EnvError> {
    let mut out = Vec::new();
    let mut stack: Vec<(usize, Vec<StepRecord>)> = vec![(0, Vec::new())];
    while let Some((i, steps)) = stack.pop() {
        for &j in &graph.even_odds[i] {
            let odd = &graph.odds[j];
            for &(c, _) in &graph.odd_children[j] {
                let s_next = graph.evens[c].clone();
                let terminal = env.is_terminal(&s_next);
                let reward = if terminal { Some(env.reward(&s_next)?) } else { None };
                let mut next = steps.clone();
                next.push(StepRecord { s: odd.even.clone(), a: odd.action, s_next, terminal, reward });
                if terminal {
                    if out.len() == cap {
                        return Err(EnvError::NotEnumerable { count: format!("more than {cap} trajectories"), cap });
                    }
                    out.push(Trajectory { steps: next });
                } else {
                    stack.push((c, next));
                }
            }
        }
    }
    Ok(out)
}

/// Minimizes `objective` over the whole of `graph` with full-batch Adam:
/// all transitions for DB-style objectives, all trajectories (up to
/// `trajectory_cap`) for TB-style ones.
pub fn fit_exhaustive(
    params: &mut GfnParams,
    objective: Objective,
    model: Option<&dyn TransitionModel>,
    graph: &StateGraph,
    cfg: &FitConfig,
    trajectory_cap: usize,
) -> Result<FitReport, TrainError> {
    if !(cfg.lr > 0.0 && cfg.lr_final > 0.0 && cfg.max_steps > 0) {
        return Err(TrainError::Config("fit needs positive rates and at least one step".into()));
    }
    let env = params.env().clone();
    let trajs = if objective.is_trajectory_level() {
        all_trajectories(env.as_ref(), graph, trajectory_cap)?
    } else {
        Vec::new()
    };
    let steps = if objective.is_trajectory_level() { Vec::new() } else { all_transitions(env.as_ref(), graph)? };

    let mut adam = Adam::new(params.store(), AdamConfig { lr: cfg.lr, ..Default::default() });
    let ids: Vec<_> = params.store().ids().collect();
    let decay = (cfg.lr_final / cfg.lr).powf(1.0 / cfg.max_steps as f64);
    let mut lr = cfg.lr;
    let mut report = FitReport { steps: 0, loss: f64::INFINITY, max_residual: f64::INFINITY };
    for step in 0..=cfg.max_steps {
        let mut tape = Tape::new();
        let out = if objective.is_trajectory_level() {
            objectives::build_loss(&mut tape, params, objective, &trajs, model)?
        } else {
            objectives::build_step_loss(&mut tape, params, objective, &steps, model)?
        };
        let max_residual = tape.value(out.residuals).data().iter().fold(0.0f64, |m, r| m.max(r.abs()));
        report = FitReport { steps: step, loss: tape.value(out.loss).item(), max_residual };
        if max_residual < cfg.tol || step == cfg.max_steps {
            break;
        }
        let grads = tape.backward(out.loss).map_err(ObjectiveError::from)?;
        for &id in &ids {
            adam.set_lr(id, lr);
        }
        adam.step(params.store_mut(), &grads).map_err(ObjectiveError::from)?;
        lr *= decay;
    }
    Ok(report)
}
