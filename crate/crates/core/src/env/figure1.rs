use super::{ActionId, EnvError, Environment, EvenState, ObjectSpace, OddState};

/// One decision with two terminal outcomes.
///
/// Action `a_i` aims for terminal `s_i`; with slip probability α the outcome
/// is redrawn uniformly over both, so the default α = 0.5 gives the
/// 0.75 / 0.25 kernel. Rewards are `R(s1) = 1`, `R(s2) = 2`.
///
/// States: root `[]`, terminals `[0]*` (s1) and `[1]*` (s2).
#[derive(Clone, Debug)]
pub struct Figure1Toy {
    alpha: f64,
    rewards: [f64; 2],
}

impl Default for Figure1Toy {
    fn default() -> Self {
        Self { alpha: 0.5, rewards: [1.0, 2.0] }
    }
}

impl Figure1Toy {
    pub fn new(alpha: f64) -> Result<Self, EnvError> {
        if !(0.0..1.0).contains(&alpha) {
            return Err(EnvError::Config(format!("alpha must be in [0,1), got {alpha}")));
        }
        Ok(Self { alpha, ..Default::default() })
    }

    pub fn terminal(i: u16) -> EvenState {
        EvenState::new(vec![i], true)
    }
}

impl Environment for Figure1Toy {
    fn kind(&self) -> &'static str {
        "figure1"
    }

    fn fingerprint(&self) -> String {
        format!("figure1(alpha={},R=({},{}))", self.alpha, self.rewards[0], self.rewards[1])
    }

    fn initial_state(&self) -> EvenState {
        EvenState::new(Vec::new(), false)
    }

    fn num_action_slots(&self) -> usize {
        2
    }

    fn valid_actions(&self, _s: &EvenState) -> Vec<ActionId> {
        vec![ActionId(0), ActionId(1)]
    }

    fn intended_outcome(&self, _s: &EvenState, a: ActionId) -> EvenState {
        Self::terminal(a.0 as u16)
    }

    fn noise_actions(&self, s: &EvenState, _a: ActionId) -> Vec<ActionId> {
        self.valid_actions(s)
    }

    fn alpha(&self) -> f64 {
        self.alpha
    }

    fn predecessor_candidates(&self, s_next: &EvenState) -> Vec<EvenState> {
        if s_next.terminal {
            vec![self.initial_state()]
        } else {
            Vec::new()
        }
    }

    fn num_backward_slots(&self) -> usize {
        2
    }

    fn backward_slot(&self, _s_next: &EvenState, parent: &OddState) -> usize {
        parent.action.0
    }

    fn reward(&self, x: &EvenState) -> Result<f64, EnvError> {
        if !x.terminal {
            return Err(EnvError::NonTerminalState(x.clone()));
        }
        Ok(self.rewards[x.payload[0] as usize])
    }

    fn potential(&self, s: &EvenState) -> usize {
        s.payload.len()
    }

    fn max_trajectory_len(&self) -> usize {
        1
    }

    fn encoding_dim(&self) -> usize {
        3
    }

    fn encode_into(&self, s: &EvenState, out: &mut [f64]) {
        match s.payload.first() {
            None => out[0] = 1.0,
            Some(&i) => out[1 + i as usize] = 1.0,
        }
    }

    fn even_state_count(&self) -> Option<u128> {
        Some(3)
    }

    fn num_modes(&self) -> usize {
        1
    }

    /// The higher-reward terminal `s2` is the single mode.
    fn modes_hit(&self, x: &EvenState) -> Vec<usize> {
        if *x == Self::terminal(1) {
            vec![0]
        } else {
            Vec::new()
        }
    }

    fn object_space(&self) -> ObjectSpace {
        ObjectSpace { sites: 1, cardinality: 2 }
    }

    fn object_to_state(&self, object: &[u16]) -> EvenState {
        Self::terminal(object[0])
    }

    fn state_to_object(&self, x: &EvenState) -> Vec<u16> {
        x.payload.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kernel_is_three_quarters_one_quarter() {
        let env = Figure1Toy::default();
        let k = env.kernel_support(&env.initial_state(), ActionId(0)).unwrap();
        assert_eq!(k, vec![(Figure1Toy::terminal(0), 0.75), (Figure1Toy::terminal(1), 0.25)]);
        let det = Figure1Toy::new(0.0).unwrap();
        assert_eq!(det.kernel_support(&det.initial_state(), ActionId(0)).unwrap(), vec![(Figure1Toy::terminal(0), 1.0)]);
    }

    #[test]
    fn rewards_and_errors() {
        let env = Figure1Toy::default();
        assert_eq!(env.reward(&Figure1Toy::terminal(0)).unwrap(), 1.0);
        assert_eq!(env.reward(&Figure1Toy::terminal(1)).unwrap(), 2.0);
        assert!(env.reward(&env.initial_state()).is_err());
        assert!(env.actions(&Figure1Toy::terminal(0)).is_err());
        assert_eq!(env.actions(&env.initial_state()).unwrap().len(), 2);
    }

    #[test]
    fn step_frequencies_match_kernel() {
        let env = Figure1Toy::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1_000_000;
        let s0 = env.initial_state();
        let hits = (0..n)
            .filter(|_| env.step(&s0, ActionId(0), &mut rng).unwrap().s_next == Figure1Toy::terminal(0))
            .count();
        let freq = hits as f64 / n as f64;
        assert!((freq - 0.75).abs() < 0.002, "freq {freq}");
    }
}
