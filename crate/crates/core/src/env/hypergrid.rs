use super::{ActionId, EnvError, Environment, EvenState, ObjectSpace, OddState};

#[derive(Clone, Debug, PartialEq)]
pub struct HyperGridConfig {
    pub side: usize,
    pub ndim: usize,
    pub alpha: f64,
    pub r0: f64,
    pub r1: f64,
    pub r2: f64,
    /// Include the stop action in the slip set.
    pub stop_noise: bool,
}

impl Default for HyperGridConfig {
    fn default() -> Self {
        Self { side: 8, ndim: 2, alpha: 0.25, r0: 0.001, r1: 0.5, r2: 2.0, stop_noise: false }
    }
}

/// `ndim`-dimensional grid of side `H`. Actions `0..ndim` increment one
/// coordinate, action `ndim` stops. Every cell has an interior even state and
/// a terminal copy reached by stopping.
#[derive(Clone, Debug)]
pub struct HyperGrid {
    cfg: HyperGridConfig,
}

impl HyperGrid {
    pub fn new(cfg: HyperGridConfig) -> Result<Self, EnvError> {
        if cfg.side < 2 {
            return Err(EnvError::Config(format!("H must be >= 2, got {}", cfg.side)));
        }
        if cfg.ndim == 0 {
            return Err(EnvError::Config("ndim must be >= 1".into()));
        }
        if cfg.side > u16::MAX as usize {
            return Err(EnvError::Config(format!("H={} is too large", cfg.side)));
        }
        if !(0.0..1.0).contains(&cfg.alpha) {
            return Err(EnvError::Config(format!("alpha must be in [0,1), got {}", cfg.alpha)));
        }
        if !(cfg.r0 > 0.0 && cfg.r1 >= 0.0 && cfg.r2 >= 0.0) {
            return Err(EnvError::Config("reward constants need R0 > 0 and R1, R2 >= 0".into()));
        }
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &HyperGridConfig {
        &self.cfg
    }

    pub fn stop_action(&self) -> ActionId {
        ActionId(self.cfg.ndim)
    }

    pub fn cell(&self, coords: &[u16]) -> EvenState {
        EvenState::new(coords.to_vec(), false)
    }

    fn band(&self, x: u16) -> f64 {
        (x as f64 / self.cfg.side as f64 - 0.5).abs()
    }

    fn in_top_band(&self, x: u16) -> bool {
        let d = self.band(x);
        0.3 < d && d < 0.4
    }

    fn movement_actions(&self, s: &EvenState) -> Vec<ActionId> {
        let top = (self.cfg.side - 1) as u16;
        (0..self.cfg.ndim).filter(|&i| s.payload[i] < top).map(ActionId).collect()
    }
}

impl Environment for HyperGrid {
    fn kind(&self) -> &'static str {
        "hypergrid"
    }

    fn fingerprint(&self) -> String {
        let c = &self.cfg;
        format!(
            "hypergrid(H={},ndim={},alpha={},R=({},{},{}),stop_noise={})",
            c.side, c.ndim, c.alpha, c.r0, c.r1, c.r2, c.stop_noise
        )
    }

    fn initial_state(&self) -> EvenState {
        EvenState::new(vec![0; self.cfg.ndim], false)
    }

    fn num_action_slots(&self) -> usize {
        self.cfg.ndim + 1
    }

    fn valid_actions(&self, s: &EvenState) -> Vec<ActionId> {
        let mut v = self.movement_actions(s);
        v.push(self.stop_action());
        v
    }

    fn intended_outcome(&self, s: &EvenState, a: ActionId) -> EvenState {
        if a == self.stop_action() {
            return EvenState::new(s.payload.clone(), true);
        }
        let mut p = s.payload.clone();
        p[a.0] += 1;
        EvenState::new(p, false)
    }

    fn noise_actions(&self, s: &EvenState, a: ActionId) -> Vec<ActionId> {
        if self.cfg.stop_noise {
            return self.valid_actions(s);
        }
        if a == self.stop_action() {
            return Vec::new();
        }
        self.movement_actions(s)
    }

    fn alpha(&self) -> f64 {
        self.cfg.alpha
    }

    fn predecessor_candidates(&self, s_next: &EvenState) -> Vec<EvenState> {
        if s_next.terminal {
            return vec![EvenState::new(s_next.payload.clone(), false)];
        }
        (0..self.cfg.ndim)
            .filter(|&i| s_next.payload[i] > 0)
            .map(|i| {
                let mut p = s_next.payload.clone();
                p[i] -= 1;
                EvenState::new(p, false)
            })
            .collect()
    }

    fn num_backward_slots(&self) -> usize {
        (self.cfg.ndim + 1) * (self.cfg.ndim + 1)
    }

    /// Layout: (predecessor offset × action). Offset `i < ndim` means the
    /// predecessor is `s_next − e_i`; offset `ndim` means the same cell.
    fn backward_slot(&self, s_next: &EvenState, parent: &OddState) -> usize {
        let n = self.cfg.ndim;
        let offset = (0..n)
            .find(|&i| parent.even.payload[i] + 1 == s_next.payload[i])
            .unwrap_or(n);
        offset * (n + 1) + parent.action.0
    }

    fn reward(&self, x: &EvenState) -> Result<f64, EnvError> {
        if !x.terminal {
            return Err(EnvError::NonTerminalState(x.clone()));
        }
        let c = &self.cfg;
        let outer = x.payload.iter().all(|&v| 0.25 < self.band(v));
        let top = x.payload.iter().all(|&v| self.in_top_band(v));
        Ok(c.r0 + if outer { c.r1 } else { 0.0 } + if top { c.r2 } else { 0.0 })
    }

    fn potential(&self, s: &EvenState) -> usize {
        s.payload.iter().map(|&v| v as usize).sum::<usize>() + usize::from(s.terminal)
    }

    fn max_trajectory_len(&self) -> usize {
        self.cfg.ndim * (self.cfg.side - 1) + 1
    }

    fn encoding_dim(&self) -> usize {
        self.cfg.ndim * self.cfg.side + 1
    }

    fn encode_into(&self, s: &EvenState, out: &mut [f64]) {
        for (i, &v) in s.payload.iter().enumerate() {
            out[i * self.cfg.side + v as usize] = 1.0;
        }
        if s.terminal {
            out[self.cfg.ndim * self.cfg.side] = 1.0;
        }
    }

    fn even_state_count(&self) -> Option<u128> {
        (self.cfg.side as u128).checked_pow(self.cfg.ndim as u32)?.checked_mul(2)
    }

    fn num_modes(&self) -> usize {
        1 << self.cfg.ndim
    }

    /// One mode per corner: the top-reward-tier cells on that corner's side
    /// of every axis.
    fn modes_hit(&self, x: &EvenState) -> Vec<usize> {
        if !x.payload.iter().all(|&v| self.in_top_band(v)) {
            return Vec::new();
        }
        let half = self.cfg.side as f64 / 2.0;
        let corner = x
            .payload
            .iter()
            .enumerate()
            .fold(0usize, |acc, (i, &v)| acc | (usize::from(v as f64 > half) << i));
        vec![corner]
    }

    fn object_space(&self) -> ObjectSpace {
        ObjectSpace { sites: self.cfg.ndim, cardinality: self.cfg.side }
    }

    fn object_to_state(&self, object: &[u16]) -> EvenState {
        EvenState::new(object.to_vec(), true)
    }

    fn state_to_object(&self, x: &EvenState) -> Vec<u16> {
        x.payload.clone()
    }
}


#[cfg(test)]
mod tests {
    use super::*;

    fn grid(side: usize, alpha: f64) -> HyperGrid {
        HyperGrid::new(HyperGridConfig { side, alpha, ..Default::default() }).unwrap()
    }

    fn st(c: &[u16]) -> EvenState {
        EvenState::new(c.to_vec(), false)
    }

    #[test]
    fn actions_at_origin_and_far_corner() {
        let g = grid(8, 0.25);
        assert_eq!(g.actions(&st(&[0, 0])).unwrap(), vec![ActionId(0), ActionId(1), ActionId(2)]);
        assert_eq!(g.actions(&st(&[7, 7])).unwrap(), vec![ActionId(2)]);
        assert_eq!(g.actions(&st(&[7, 3])).unwrap(), vec![ActionId(1), ActionId(2)]);
        let err = g.actions(&EvenState::new(vec![1, 1], true)).unwrap_err();
        assert!(matches!(err, EnvError::TerminalState(_)));
    }

    #[test]
    fn slip_kernel_at_origin() {
        let g = grid(8, 0.25);
        let k = g.kernel_support(&st(&[0, 0]), ActionId(0)).unwrap();
        assert_eq!(k.len(), 2);
        assert_eq!(k[0].0, st(&[1, 0]));
        assert!((k[0].1 - 0.875).abs() < 1e-15);
        assert_eq!(k[1].0, st(&[0, 1]));
        assert!((k[1].1 - 0.125).abs() < 1e-15);
    }

    #[test]
    fn slip_renormalizes_at_boundary() {
        let g = grid(8, 0.25);
        // only inc_y is a valid move at (7, 3)
        let k = g.kernel_support(&st(&[7, 3]), ActionId(1)).unwrap();
        assert_eq!(k, vec![(st(&[7, 4]), 1.0)]);
    }

    #[test]
    fn stop_is_deterministic_by_default() {
        let g = grid(8, 0.25);
        let k = g.kernel_support(&st(&[3, 3]), ActionId(2)).unwrap();
        assert_eq!(k, vec![(EvenState::new(vec![3, 3], true), 1.0)]);

        let noisy = HyperGrid::new(HyperGridConfig { stop_noise: true, ..Default::default() }).unwrap();
        let k = noisy.kernel_support(&st(&[3, 3]), ActionId(2)).unwrap();
        assert_eq!(k.len(), 3);
        let total: f64 = k.iter().map(|e| e.1).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_alpha_is_deterministic() {
        let g = grid(8, 0.0);
        let k = g.kernel_support(&st(&[0, 0]), ActionId(0)).unwrap();
        assert_eq!(k, vec![(st(&[1, 0]), 1.0)]);
    }

    #[test]
    fn parents_under_slip_and_without() {
        let g = grid(8, 0.25);
        let mut p = g.parents(&st(&[1, 1])).unwrap();
        p.sort();
        let want = vec![
            OddState { even: st(&[0, 1]), action: ActionId(0) },
            OddState { even: st(&[0, 1]), action: ActionId(1) },
            OddState { even: st(&[1, 0]), action: ActionId(0) },
            OddState { even: st(&[1, 0]), action: ActionId(1) },
        ];
        assert_eq!(p, want);

        let g0 = grid(8, 0.0);
        let mut p = g0.parents(&st(&[1, 1])).unwrap();
        p.sort();
        assert_eq!(
            p,
            vec![
                OddState { even: st(&[0, 1]), action: ActionId(0) },
                OddState { even: st(&[1, 0]), action: ActionId(1) },
            ]
        );
        assert_eq!(g.parents(&st(&[0, 0])).unwrap_err(), EnvError::InitialState);
    }

    #[test]
    fn reward_tiers() {
        let g = grid(8, 0.25);
        let r = |c: &[u16]| g.reward(&EvenState::new(c.to_vec(), true)).unwrap();
        assert!((r(&[1, 1]) - 2.501).abs() < 1e-12);
        assert!((r(&[0, 0]) - 0.501).abs() < 1e-12);
        assert!((r(&[7, 0]) - 0.501).abs() < 1e-12);
        assert!((r(&[3, 4]) - 0.001).abs() < 1e-12);
        assert!(g.reward(&st(&[1, 1])).is_err());

        let literal = HyperGrid::new(HyperGridConfig { r0: 2.0, r1: 0.5, r2: 0.001, ..Default::default() }).unwrap();
        let x = EvenState::new(vec![1, 1], true);
        assert!((literal.reward(&x).unwrap() - 2.501).abs() < 1e-12);
        assert!((literal.reward(&EvenState::new(vec![3, 3], true)).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn corner_modes() {
        let g = grid(8, 0.25);
        let t = |c: &[u16]| EvenState::new(c.to_vec(), true);
        assert_eq!(g.modes_hit(&t(&[1, 1])), vec![0]);
        assert_eq!(g.modes_hit(&t(&[7, 1])), vec![1]);
        assert_eq!(g.modes_hit(&t(&[1, 7])), vec![2]);
        assert_eq!(g.modes_hit(&t(&[7, 7])), vec![3]);
        // the R1 band around a corner is not a mode
        assert!(g.modes_hit(&t(&[0, 0])).is_empty());
        assert_eq!(g.num_modes(), 4);
    }

    #[test]
    fn config_validation() {
        assert!(HyperGrid::new(HyperGridConfig { side: 1, ..Default::default() }).is_err());
        assert!(HyperGrid::new(HyperGridConfig { alpha: 1.0, ..Default::default() }).is_err());
        assert!(HyperGrid::new(HyperGridConfig { r0: 0.0, ..Default::default() }).is_err());
    }
}
