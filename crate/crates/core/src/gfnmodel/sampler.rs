use rand::{Rng, RngCore};

use super::{GfnParams, ModelError, Result};
use crate::env::{sample_index, ActionId, EvenState, Trajectory};

/// `(1 − ε)·π + ε·uniform` over the masked slots.
pub fn mixed_probs(log_probs: &[f64], mask: &[bool], epsilon: f64) -> Vec<f64> {
    let valid = mask.iter().filter(|&&m| m).count().max(1) as f64;
    log_probs
        .iter()
        .zip(mask)
        .map(|(&lp, &m)| if m { (1.0 - epsilon) * lp.exp() + epsilon / valid } else { 0.0 })
        .collect()
}

/// Draws `m` trajectories in lockstep so each step evaluates the policy on
/// one batch. At every even state the action is uniform over the valid
/// actions with probability `epsilon` and drawn from π otherwise.
pub fn sample_batch(params: &GfnParams, m: usize, epsilon: f64, rng: &mut dyn RngCore) -> Result<Vec<Trajectory>> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(ModelError::Config(format!("epsilon must be in [0,1], got {epsilon}")));
    }
    let env = params.env().clone();
    let horizon = env.max_trajectory_len();
    let a = params.num_actions();
    let mut trajs = vec![Trajectory::default(); m];
    let mut active: Vec<(usize, EvenState)> = (0..m).map(|i| (i, env.initial_state())).collect();
    while !active.is_empty() {
        let states: Vec<&EvenState> = active.iter().map(|(_, s)| s).collect();
        let lp = params.forward_log_probs(&states)?;
        let mut next = Vec::with_capacity(active.len());
        for (row, (i, s)) in active.iter().enumerate() {
            let mask = env.action_mask(s);
            let action = if epsilon > 0.0 && rng.random::<f64>() < epsilon {
                let valid: Vec<usize> = (0..a).filter(|&j| mask[j]).collect();
                valid[rng.random_range(0..valid.len())]
            } else {
                let probs: Vec<f64> =
                    lp[row * a..(row + 1) * a].iter().zip(&mask).map(|(&l, &ok)| if ok { l.exp() } else { 0.0 }).collect();
                sample_index(&probs, rng)
            };
            let rec = env.step(s, ActionId(action), rng)?;
            let done = rec.terminal;
            let s_next = rec.s_next.clone();
            trajs[*i].steps.push(rec);
            if trajs[*i].len() > horizon {
                return Err(ModelError::HorizonExceeded(horizon));
            }
            if !done {
                next.push((*i, s_next));
            }
        }
        active = next;
    }
    Ok(trajs)
}

pub fn sample_trajectory(params: &GfnParams, epsilon: f64, rng: &mut dyn RngCore) -> Result<Trajectory> {
    Ok(sample_batch(params, 1, epsilon, rng)?.remove(0))
}
