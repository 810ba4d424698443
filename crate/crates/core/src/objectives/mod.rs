//! The four training losses as log-squared consistency residuals.
//!
//! * DB and TB see the environment through its deterministic view: the edge
//!   `s → s'` is scored by `π(b|s)` where `b` is the action whose intended
//!   outcome is `s'`, and `P_B` ranges over intended parents only.
//! * Stochastic DB and TB factor each step through the odd state `(s, a)`
//!   and add `log P̂(s'|s,a)`, a constant for the GFlowNet gradient.
//!
//! Terminal flows are clamped to `β·log R(x)`. DB-style losses average over
//! transitions, TB-style losses over trajectories.

use std::str::FromStr;

use thiserror::Error;

use crate::autodiff::{log_floor, AutodiffError, Gradients, Tape, Tensor, Var};
use crate::dynamics::{DynamicsError, Transition, TransitionModel};
use crate::env::{ActionId, EnvError, EvenState, OddState, StepRecord, Trajectory};
use crate::gfnmodel::{BackwardView, GfnParams, ModelError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObjectiveError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("{0} needs a transition model")]
    MissingModel(Objective),
    #[error("{parent} is not a parent of {s_next} under this objective")]
    NotAParent { parent: OddState, s_next: EvenState },
    #[error("no action at {s} aims for {s_next}")]
    NoIntendedAction { s: EvenState, s_next: EvenState },
    #[error("empty batch")]
    EmptyBatch,
    #[error("trajectory {0} is empty or unterminated")]
    BadTrajectory(usize),
}

pub type Result<T> = std::result::Result<T, ObjectiveError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Objective {
    Db,
    Tb,
    StochDb,
    StochTb,
}

impl Objective {
    pub const ALL: [Objective; 4] = [Objective::Db, Objective::Tb, Objective::StochDb, Objective::StochTb];

    pub fn as_str(&self) -> &'static str {
        match self {
            Objective::Db => "db",
            Objective::Tb => "tb",
            Objective::StochDb => "stoch_db",
            Objective::StochTb => "stoch_tb",
        }
    }

    pub fn is_stochastic(&self) -> bool {
        matches!(self, Objective::StochDb | Objective::StochTb)
    }

    pub fn is_trajectory_level(&self) -> bool {
        matches!(self, Objective::Tb | Objective::StochTb)
    }

    pub fn backward_view(&self) -> BackwardView {
        if self.is_stochastic() {
            BackwardView::Kernel
        } else {
            BackwardView::Intended
        }
    }
}

impl std::fmt::Display for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Objective {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Objective::ALL
            .into_iter()
            .find(|o| o.as_str() == s)
            .ok_or_else(|| format!("unknown objective `{s}` (db|tb|stoch_db|stoch_tb)"))
    }
}

/// A loss recorded on a tape.
#[derive(Clone, Debug)]
pub struct LossOutput {
    /// Scalar mean of squared residuals.
    pub loss: Var,
    /// One residual per transition (DB-style) or trajectory (TB-style).
    pub residuals: Var,
    /// Log terms that hit the `1e-30` probability floor.
    pub clamped: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossBatchReport {
    pub loss: f64,
    pub residuals: Vec<f64>,
    pub clamped: usize,
    /// L2 norm of the gradient of each parameter tensor, by name.
    pub grad_norms: Vec<(String, f64)>,
}

impl LossBatchReport {
    /// L2 norm over every parameter gradient.
    pub fn total_grad_norm(&self) -> f64 {
        self.grad_norms.iter().map(|(_, n)| n * n).sum::<f64>().sqrt()
    }
}

/// `log F(s) + log P_F − log F(s') − log P_B`: the pre-squaring DB residual.
pub fn db_residual(log_f_s: f64, log_pf: f64, log_f_next: f64, log_pb: f64) -> f64 {
    log_f_s + log_pf - log_f_next - log_pb
}

fn count_floor(values: &[f64]) -> usize {
    let floor = log_floor();
    values.iter().filter(|&&v| v <= floor).count()
}

/// Records `objective` over `trajs` on `tape`. DB-style objectives use every
/// step of every trajectory as one transition.
pub fn build_loss(
    tape: &mut Tape,
    params: &GfnParams,
    objective: Objective,
    trajs: &[Trajectory],
    model: Option<&dyn TransitionModel>,
) -> Result<LossOutput> {
    if trajs.is_empty() {
        return Err(ObjectiveError::EmptyBatch);
    }
    for (i, t) in trajs.iter().enumerate() {
        if t.is_empty() || !t.steps.last().is_some_and(|s| s.terminal) {
            return Err(ObjectiveError::BadTrajectory(i));
        }
    }
    let steps: Vec<(usize, &StepRecord)> =
        trajs.iter().enumerate().flat_map(|(i, t)| t.steps.iter().map(move |s| (i, s))).collect();
    build_steps(tape, params, objective, &steps, trajs.len(), model)
}

/// DB-style loss over loose transitions.
pub fn build_step_loss(
    tape: &mut Tape,
    params: &GfnParams,
    objective: Objective,
    steps: &[StepRecord],
    model: Option<&dyn TransitionModel>,
) -> Result<LossOutput> {
    if steps.is_empty() {
        return Err(ObjectiveError::EmptyBatch);
    }
    let objective = match objective {
        Objective::Tb | Objective::Db => Objective::Db,
        Objective::StochTb | Objective::StochDb => Objective::StochDb,
    };
    let indexed: Vec<(usize, &StepRecord)> = steps.iter().enumerate().collect();
    build_steps(tape, params, objective, &indexed, steps.len(), model)
}

fn build_steps(
    tape: &mut Tape,
    params: &GfnParams,
    objective: Objective,
    steps: &[(usize, &StepRecord)],
    n_groups: usize,
    model: Option<&dyn TransitionModel>,
) -> Result<LossOutput> {
    let env = params.env().clone();
    let view = objective.backward_view();
    let (a_n, b_n, w, fc) = (params.num_actions(), params.num_backward(), params.width(), params.flow_col());
    let uniform_b = params.config().uniform_backward;

    let (rows, index) = GfnParams::index_states(steps.iter().flat_map(|(_, r)| [&r.s, &r.s_next]));
    let head = params.head_on_tape(tape, params.store(), &rows)?;

    let fwd = tape.slice_cols(head, 0, a_n)?;
    let fwd = tape.log_softmax(fwd, Some(params.forward_mask(&rows)))?;

    let n = steps.len();
    let mut fwd_idx = Vec::with_capacity(n);
    let mut bwd_idx = Vec::with_capacity(n);
    let mut flow_idx = Vec::with_capacity(n);
    let mut next_flow_idx = Vec::with_capacity(n);
    // Constant part of each transition's residual.
    let mut constant = vec![0.0; n];

    let mut bwd_masks: Vec<Option<Vec<bool>>> = vec![None; rows.len()];
    let mut bwd_consts = vec![0.0; n];
    for (t, (_, r)) in steps.iter().enumerate() {
        let (rs, rn) = (index[&r.s], index[&r.s_next]);
        let act = if objective.is_stochastic() {
            r.a
        } else {
            env.outcome_action(&r.s, &r.s_next)
                .ok_or_else(|| ObjectiveError::NoIntendedAction { s: r.s.clone(), s_next: r.s_next.clone() })?
        };
        env.check_action(&r.s, act)?;
        fwd_idx.push(Some(rs * a_n + act.0));
        flow_idx.push(Some(rs * w + fc));
        if r.terminal {
            next_flow_idx.push(None);
            constant[t] -= params.terminal_log_flow(&r.s_next)?;
        } else {
            next_flow_idx.push(Some(rn * w + fc));
        }

        let parent = OddState { even: r.s.clone(), action: act };
        let parents = params.backward_parents(&r.s_next, view)?;
        let Some(&(_, slot)) = parents.iter().find(|(p, _)| *p == parent) else {
            return Err(ObjectiveError::NotAParent { parent, s_next: r.s_next.clone() });
        };
        if uniform_b {
            bwd_consts[t] = -(parents.len() as f64).ln();
            bwd_idx.push(None);
        } else {
            if bwd_masks[rn].is_none() {
                let mut m = vec![false; b_n];
                for &(_, k) in &parents {
                    m[k] = true;
                }
                bwd_masks[rn] = Some(m);
            }
            bwd_idx.push(Some(rn * b_n + slot));
        }
    }

    let mut clamped = 0;
    if objective.is_stochastic() {
        let model = model.ok_or(ObjectiveError::MissingModel(objective))?;
        let items: Vec<Transition<'_>> = steps.iter().map(|(_, r)| (&r.s, r.a, &r.s_next)).collect();
        let (lp, c) = model.log_probs(&items)?;
        clamped += c;
        for (k, v) in constant.iter_mut().zip(&lp) {
            *k += v;
        }
    }

    let log_pf = tape.gather(fwd, fwd_idx)?;
    clamped += count_floor(tape.value(log_pf).data());
    let log_f = tape.gather(head, flow_idx)?;
    let log_f_next = tape.gather(head, next_flow_idx)?;

    let log_pb = if uniform_b {
        None
    } else {
        let bwd = tape.slice_cols(head, a_n, a_n + b_n)?;
        let mask: Vec<bool> = bwd_masks.into_iter().flat_map(|m| m.unwrap_or_else(|| vec![false; b_n])).collect();
        let bwd = tape.log_softmax(bwd, Some(mask))?;
        let v = tape.gather(bwd, bwd_idx)?;
        clamped += count_floor(tape.value(v).data());
        Some(v)
    };
    for (k, b) in constant.iter_mut().zip(&bwd_consts) {
        *k -= b;
    }

    let residuals = if objective.is_trajectory_level() {
        // Σ_t [log π + log P̂ − log π_B] per trajectory, then log Z and the
        // reward term. The flow terms cancel by telescoping.
        let mut per_step = log_pf;
        if let Some(pb) = log_pb {
            per_step = tape.sub(per_step, pb)?;
        }
        let per_step = tape.add_const(per_step, &Tensor::vector(constant))?;
        let groups: Vec<usize> = steps.iter().map(|(g, _)| *g).collect();
        let summed = tape.scatter_sum(per_step, groups, n_groups)?;
        let logz = tape.param(params.store(), params.logz_id());
        let logz = tape.broadcast(logz, n_groups)?;
        tape.add(summed, logz)?
    } else {
        let mut r = tape.add(log_f, log_pf)?;
        r = tape.sub(r, log_f_next)?;
        if let Some(pb) = log_pb {
            r = tape.sub(r, pb)?;
        }
        tape.add_const(r, &Tensor::vector(constant))?
    };
    let sq = tape.square(residuals);
    let loss = tape.mean(sq);
    Ok(LossOutput { loss, residuals, clamped })
}

/// Loss value, residuals and gradients for one batch of trajectories.
pub fn evaluate(
    params: &GfnParams,
    objective: Objective,
    trajs: &[Trajectory],
    model: Option<&dyn TransitionModel>,
) -> Result<(LossBatchReport, Gradients)> {
    let mut tape = Tape::new();
    let out = build_loss(&mut tape, params, objective, trajs, model)?;
    let grads = tape.backward(out.loss)?;
    let store = params.store();
    let grad_norms = store
        .ids()
        .map(|id| (store.name(id).to_string(), grads.param(id).map_or(0.0, |g| g.norm_sq().sqrt())))
        .collect();
    let report = LossBatchReport {
        loss: tape.value(out.loss).item(),
        residuals: tape.value(out.residuals).data().to_vec(),
        clamped: out.clamped,
        grad_norms,
    };
    Ok((report, grads))
}

fn single_value(
    params: &GfnParams,
    objective: Objective,
    steps: &[StepRecord],
    model: Option<&dyn TransitionModel>,
) -> Result<f64> {
    let mut tape = Tape::new();
    let out = if objective.is_trajectory_level() {
        build_loss(&mut tape, params, objective, &[Trajectory { steps: steps.to_vec() }], model)?
    } else {
        build_step_loss(&mut tape, params, objective, steps, model)?
    };
    Ok(tape.value(out.loss).item())
}

/// `(log F(s) + log P_F(s'|s) − log F(s') − log P_B(s|s'))²` for one edge.
pub fn db_loss(params: &GfnParams, step: &StepRecord) -> Result<f64> {
    single_value(params, Objective::Db, std::slice::from_ref(step), None)
}

/// `(log Z + Σ log P_F − β log R(x) − Σ log P_B)²` for one trajectory.
pub fn tb_loss(params: &GfnParams, traj: &Trajectory) -> Result<f64> {
    single_value(params, Objective::Tb, &traj.steps, None)
}

/// `(log F(s) + log π(a|s) + log P̂(s'|s,a) − log F(s') − log π_B((s,a)|s'))²`.
pub fn stoch_db_loss(params: &GfnParams, model: &dyn TransitionModel, step: &StepRecord) -> Result<f64> {
    single_value(params, Objective::StochDb, std::slice::from_ref(step), Some(model))
}

/// `(log Z + Σ [log π + log P̂] − β log R(x) − Σ log π_B)²`.
pub fn stoch_tb_loss(params: &GfnParams, model: &dyn TransitionModel, traj: &Trajectory) -> Result<f64> {
    single_value(params, Objective::StochTb, &traj.steps, Some(model))
}

/// Builds the record for `s --a--> s_next`, filling terminal data from the env.
pub fn step_record(params: &GfnParams, s: &EvenState, a: ActionId, s_next: &EvenState) -> Result<StepRecord> {
    let env = params.env();
    let terminal = env.is_terminal(s_next);
    let reward = if terminal { Some(env.reward(s_next)?) } else { None };
    Ok(StepRecord { s: s.clone(), a, s_next: s_next.clone(), terminal, reward })
}

#[cfg(test)]
mod tests;
