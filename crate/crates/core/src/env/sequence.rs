use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ActionId, EnvError, Environment, EvenState, ObjectSpace, OddState};

/// Levenshtein distance between two symbol strings.
pub fn edit_distance(a: &[u8], b: &[u8]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Terminal objects (bit strings) with externally supplied rewards.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardTable {
    pub entries: HashMap<Vec<u8>, f64>,
    /// Reward of objects absent from the table.
    pub default_reward: f64,
    /// Entries with reward at or above this are modes.
    pub mode_threshold: f64,
}

impl RewardTable {
    /// Parses `<bit-string> <reward>` lines. Blank lines and `#` comments are
    /// skipped; rewards must be strictly positive.
    pub fn parse(text: &str, n_bits: usize, default_reward: f64, mode_threshold: f64) -> Result<Self, EnvError> {
        let mut entries = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| EnvError::RewardTable { line: line_no, msg };
            let mut parts = line.split_whitespace();
            let (Some(obj), Some(rew), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(err("expected `<object> <reward>`".into()));
            };
            let bits: Vec<u8> = obj
                .chars()
                .map(|c| match c {
                    '0' => Ok(0u8),
                    '1' => Ok(1u8),
                    _ => Err(err(format!("object `{obj}` is not a bit string"))),
                })
                .collect::<Result<_, _>>()?;
            if bits.len() != n_bits {
                return Err(err(format!("object has {} bits, expected {n_bits}", bits.len())));
            }
            let r: f64 = rew.parse().map_err(|_| err(format!("reward `{rew}` is not a decimal")))?;
            if !(r > 0.0 && r.is_finite()) {
                return Err(err(format!("reward {r} is not strictly positive")));
            }
            if entries.insert(bits, r).is_some() {
                return Err(err(format!("duplicate object `{obj}`")));
            }
        }
        if entries.is_empty() {
            return Err(EnvError::RewardTable { line: 0, msg: "table is empty".into() });
        }
        if !(default_reward > 0.0) {
            return Err(EnvError::Config("external default reward must be > 0".into()));
        }
        Ok(Self { entries, default_reward, mode_threshold })
    }

    pub fn load(path: &Path, n_bits: usize, default_reward: f64, mode_threshold: f64) -> Result<Self, EnvError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| EnvError::Config(format!("cannot read reward table {}: {e}", path.display())))?;
        Self::parse(&text, n_bits, default_reward, mode_threshold)
    }
}

/// `count` distinct uniformly random `n`-bit strings.
pub fn random_modes(n: usize, count: usize, mode_seed: u64) -> Result<Vec<Vec<u8>>, EnvError> {
    if count == 0 || (n < 64 && count as u64 > (1u64 << n)) {
        return Err(EnvError::Config(format!("cannot draw {count} distinct {n}-bit modes")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mode_seed);
    let mut modes: Vec<Vec<u8>> = Vec::with_capacity(count);
    while modes.len() < count {
        let m: Vec<u8> = (0..n).map(|_| rng.random_range(0..2u8)).collect();
        if !modes.contains(&m) {
            modes.push(m);
        }
    }
    Ok(modes)
}

#[derive(Clone, Debug, PartialEq)]
pub enum SeqReward {
    /// `exp(−min_y d(x, y))` over a mode set; a sample hits mode `y` when
    /// `d(x, y) <= hit_radius`.
    EditDistance { modes: Vec<Vec<u8>>, hit_radius: usize },
    Table { table: RewardTable, modes: Vec<Vec<u8>> },
}

/// Builds `n`-bit sequences one `k`-bit word at a time. Every word is
/// noise-eligible: with probability α the appended word is replaced by a
/// uniformly drawn one.
#[derive(Clone, Debug)]
pub struct SeqEnv {
    n: usize,
    k: usize,
    alpha: f64,
    reward: SeqReward,
}

impl SeqEnv {
    pub fn new(n: usize, k: usize, alpha: f64, reward: SeqReward) -> Result<Self, EnvError> {
        if k == 0 || k > 8 {
            return Err(EnvError::Config(format!("word size k must be in 1..=8, got {k}")));
        }
        if n == 0 || !n.is_multiple_of(k) {
            return Err(EnvError::Config(format!("n={n} must be a positive multiple of k={k}")));
        }
        if !(0.0..1.0).contains(&alpha) {
            return Err(EnvError::Config(format!("alpha must be in [0,1), got {alpha}")));
        }
        if let SeqReward::EditDistance { modes, .. } = &reward {
            if modes.is_empty() || modes.iter().any(|m| m.len() != n) {
                return Err(EnvError::Config(format!("mode set must be non-empty {n}-bit strings")));
            }
        }
        Ok(Self { n, k, alpha, reward })
    }

    /// Edit-distance reward over `count` distinct random `n`-bit modes drawn
    /// from `mode_seed`.
    pub fn with_random_modes(n: usize, k: usize, alpha: f64, count: usize, mode_seed: u64) -> Result<Self, EnvError> {
        let modes = random_modes(n, count, mode_seed)?;
        Self::new(n, k, alpha, SeqReward::EditDistance { modes, hit_radius: 0 })
    }

    pub fn with_table(n: usize, k: usize, alpha: f64, table: RewardTable) -> Result<Self, EnvError> {
        let mut modes: Vec<Vec<u8>> = table
            .entries
            .iter()
            .filter(|(_, &r)| r >= table.mode_threshold)
            .map(|(b, _)| b.clone())
            .collect();
        modes.sort();
        Self::new(n, k, alpha, SeqReward::Table { table, modes })
    }

    pub fn vocab_size(&self) -> usize {
        1 << self.k
    }

    pub fn words(&self) -> usize {
        self.n / self.k
    }

    pub fn reward_source(&self) -> &SeqReward {
        &self.reward
    }

    pub fn modes(&self) -> &[Vec<u8>] {
        match &self.reward {
            SeqReward::EditDistance { modes, .. } | SeqReward::Table { modes, .. } => modes,
        }
    }

    /// Expands word tokens into bits, most significant bit first.
    pub fn to_bits(&self, tokens: &[u16]) -> Vec<u8> {
        let mut bits = Vec::with_capacity(tokens.len() * self.k);
        for &t in tokens {
            for b in (0..self.k).rev() {
                bits.push(((t >> b) & 1) as u8);
            }
        }
        bits
    }

    pub fn from_bits(&self, bits: &[u8]) -> Vec<u16> {
        bits.chunks(self.k)
            .map(|c| c.iter().fold(0u16, |acc, &b| (acc << 1) | b as u16))
            .collect()
    }
}

impl Environment for SeqEnv {
    fn kind(&self) -> &'static str {
        match self.reward {
            SeqReward::EditDistance { .. } => "bitseq",
            SeqReward::Table { .. } => "external",
        }
    }

    fn fingerprint(&self) -> String {
        let modes: Vec<String> = self
            .modes()
            .iter()
            .map(|m| m.iter().map(|b| char::from(b'0' + b)).collect())
            .collect();
        let extra = match &self.reward {
            SeqReward::EditDistance { hit_radius, .. } => format!("hit_radius={hit_radius}"),
            SeqReward::Table { table, .. } => format!(
                "entries={},default={},threshold={}",
                table.entries.len(),
                table.default_reward,
                table.mode_threshold
            ),
        };
        format!(
            "{}(n={},k={},alpha={},modes=[{}],{extra})",
            self.kind(),
            self.n,
            self.k,
            self.alpha,
            modes.join(",")
        )
    }

    fn initial_state(&self) -> EvenState {
        EvenState::new(Vec::new(), false)
    }

    fn num_action_slots(&self) -> usize {
        self.vocab_size()
    }

    fn valid_actions(&self, _s: &EvenState) -> Vec<ActionId> {
        (0..self.vocab_size()).map(ActionId).collect()
    }

    fn intended_outcome(&self, s: &EvenState, a: ActionId) -> EvenState {
        let mut p = s.payload.clone();
        p.push(a.0 as u16);
        let terminal = p.len() == self.words();
        EvenState::new(p, terminal)
    }

    fn noise_actions(&self, s: &EvenState, _a: ActionId) -> Vec<ActionId> {
        self.valid_actions(s)
    }

    fn alpha(&self) -> f64 {
        self.alpha
    }

    fn predecessor_candidates(&self, s_next: &EvenState) -> Vec<EvenState> {
        match s_next.payload.split_last() {
            Some((_, prefix)) => vec![EvenState::new(prefix.to_vec(), false)],
            None => Vec::new(),
        }
    }

    fn num_backward_slots(&self) -> usize {
        self.vocab_size()
    }

    fn backward_slot(&self, _s_next: &EvenState, parent: &OddState) -> usize {
        parent.action.0
    }

    fn reward(&self, x: &EvenState) -> Result<f64, EnvError> {
        if !x.terminal {
            return Err(EnvError::NonTerminalState(x.clone()));
        }
        let bits = self.to_bits(&x.payload);
        Ok(match &self.reward {
            SeqReward::EditDistance { modes, .. } => {
                let d = modes.iter().map(|m| edit_distance(&bits, m)).min().unwrap_or(0);
                (-(d as f64)).exp()
            }
            SeqReward::Table { table, .. } => *table.entries.get(&bits).unwrap_or(&table.default_reward),
        })
    }

    fn potential(&self, s: &EvenState) -> usize {
        s.payload.len()
    }

    fn max_trajectory_len(&self) -> usize {
        self.words()
    }

    fn encoding_dim(&self) -> usize {
        self.words() * self.vocab_size() + 1
    }

    fn encode_into(&self, s: &EvenState, out: &mut [f64]) {
        let v = self.vocab_size();
        for (pos, &t) in s.payload.iter().enumerate() {
            out[pos * v + t as usize] = 1.0;
        }
        if s.terminal {
            out[self.words() * v] = 1.0;
        }
    }

    fn even_state_count(&self) -> Option<u128> {
        let v = self.vocab_size() as u128;
        let mut total: u128 = 0;
        let mut layer: u128 = 1;
        for _ in 0..=self.words() {
            total = total.checked_add(layer)?;
            layer = layer.checked_mul(v)?;
        }
        Some(total)
    }

    fn num_modes(&self) -> usize {
        self.modes().len()
    }

    fn modes_hit(&self, x: &EvenState) -> Vec<usize> {
        if !x.terminal {
            return Vec::new();
        }
        let bits = self.to_bits(&x.payload);
        match &self.reward {
            SeqReward::EditDistance { modes, hit_radius } => modes
                .iter()
                .enumerate()
                .filter(|(_, m)| edit_distance(&bits, m) <= *hit_radius)
                .map(|(i, _)| i)
                .collect(),
            SeqReward::Table { modes, .. } => modes.iter().position(|m| *m == bits).into_iter().collect(),
        }
    }

    fn object_space(&self) -> ObjectSpace {
        ObjectSpace { sites: self.words(), cardinality: self.vocab_size() }
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

    #[test]
    fn edit_distance_basics() {
        assert_eq!(edit_distance(b"", b""), 0);
        assert_eq!(edit_distance(&[0, 1, 1], &[0, 1, 1]), 0);
        assert_eq!(edit_distance(&[0, 1, 1], &[1, 1, 1]), 1);
        assert_eq!(edit_distance(&[0, 1, 0, 1], &[1, 0, 1, 0]), 2);
        assert_eq!(edit_distance(&[1, 1], &[]), 2);
    }

    #[test]
    fn sixteen_actions_for_four_bit_words() {
        let env = SeqEnv::with_random_modes(16, 4, 0.1, 4, 0).unwrap();
        assert_eq!(env.actions(&EvenState::new(vec![3], false)).unwrap().len(), 16);
        assert_eq!(env.num_modes(), 4);
        assert!(env.actions(&EvenState::new(vec![1, 2, 3, 4], true)).is_err());
    }

    #[test]
    fn parents_cover_whole_vocabulary_under_noise() {
        let env = SeqEnv::with_random_modes(4, 2, 0.3, 2, 1).unwrap();
        let s_next = EvenState::new(vec![0, 1], true);
        let parents = env.parents(&s_next).unwrap();
        assert_eq!(parents.len(), 4);
        assert!(parents.iter().all(|p| p.even == EvenState::new(vec![0], false)));
        let det = env.deterministic_parents(&s_next).unwrap();
        assert_eq!(det, vec![OddState { even: EvenState::new(vec![0], false), action: ActionId(1) }]);
    }

    #[test]
    fn mode_reward_is_one() {
        let env = SeqEnv::with_random_modes(16, 4, 0.1, 4, 7).unwrap();
        for m in env.modes().to_vec() {
            let x = EvenState::new(env.from_bits(&m), true);
            assert_eq!(env.reward(&x).unwrap(), 1.0);
            assert!(!env.modes_hit(&x).is_empty());
        }
    }

    #[test]
    fn bits_round_trip() {
        let env = SeqEnv::with_random_modes(8, 4, 0.0, 1, 0).unwrap();
        assert_eq!(env.to_bits(&[0b1010, 0b0011]), vec![1, 0, 1, 0, 0, 0, 1, 1]);
        assert_eq!(env.from_bits(&[1, 0, 1, 0, 0, 0, 1, 1]), vec![0b1010, 0b0011]);
    }

    #[test]
    fn huge_sequences_have_astronomical_state_counts() {
        let env = SeqEnv::with_random_modes(120, 4, 0.1, 4, 0).unwrap();
        assert!(env.even_state_count().unwrap() > 1u128 << 120);
        let env = SeqEnv::with_random_modes(256, 8, 0.1, 4, 0).unwrap();
        assert_eq!(env.even_state_count(), None);
    }

    #[test]
    fn reward_table_parsing() {
        let text = "# comment\n0101 2.5\n1111 0.25\n\n";
        let t = RewardTable::parse(text, 4, 1e-3, 1.0).unwrap();
        assert_eq!(t.entries.len(), 2);
        let env = SeqEnv::with_table(4, 2, 0.0, t).unwrap();
        assert_eq!(env.kind(), "external");
        assert_eq!(env.reward(&EvenState::new(vec![1, 1], true)).unwrap(), 2.5);
        assert_eq!(env.reward(&EvenState::new(vec![0, 0], true)).unwrap(), 1e-3);
        assert_eq!(env.num_modes(), 1);

        let bad = RewardTable::parse("0101 -1\n", 4, 1e-3, 1.0).unwrap_err();
        assert_eq!(bad, EnvError::RewardTable { line: 1, msg: "reward -1 is not strictly positive".into() });
        assert!(RewardTable::parse("012 1.0\n", 3, 1e-3, 1.0).is_err());
        assert!(RewardTable::parse("01 1.0\n", 4, 1e-3, 1.0).is_err());
        assert!(RewardTable::parse("0101 1.0 extra\n", 4, 1e-3, 1.0).is_err());
    }
}
