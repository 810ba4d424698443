use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{random_modes, EnvError, Environment, Figure1Toy, HyperGrid, HyperGridConfig, RewardTable, SeqEnv, SeqReward};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Figure1,
    Hypergrid,
    Bitseq,
    External,
}

impl EnvKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EnvKind::Figure1 => "figure1",
            EnvKind::Hypergrid => "hypergrid",
            EnvKind::Bitseq => "bitseq",
            EnvKind::External => "external",
        }
    }
}

impl std::str::FromStr for EnvKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "figure1" => Ok(EnvKind::Figure1),
            "hypergrid" => Ok(EnvKind::Hypergrid),
            "bitseq" => Ok(EnvKind::Bitseq),
            "external" => Ok(EnvKind::External),
            _ => Err(format!("unknown env kind `{s}` (figure1|hypergrid|bitseq|external)")),
        }
    }
}

/// Environment selection and parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvSpec {
    pub kind: EnvKind,
    /// Grid side length.
    pub side: usize,
    pub ndim: usize,
    /// Sequence length in bits.
    pub n: usize,
    /// Word size in bits.
    pub k: usize,
    pub alpha: f64,
    pub r0: f64,
    pub r1: f64,
    pub r2: f64,
    pub stop_noise: bool,
    /// Explicit bitseq modes; drawn from `mode_seed` when empty.
    pub mode_set: Vec<Vec<u8>>,
    pub mode_count: usize,
    pub mode_seed: u64,
    pub hit_radius: usize,
    pub reward_table: Option<PathBuf>,
    pub default_reward: f64,
    pub mode_threshold: f64,
}

impl EnvSpec {
    pub fn figure1() -> Self {
        Self { kind: EnvKind::Figure1, alpha: 0.5, ..Self::hypergrid(8, 0.25) }
    }

    pub fn hypergrid(side: usize, alpha: f64) -> Self {
        Self {
            kind: EnvKind::Hypergrid,
            side,
            ndim: 2,
            n: 16,
            k: 4,
            alpha,
            r0: 0.001,
            r1: 0.5,
            r2: 2.0,
            stop_noise: false,
            mode_set: Vec::new(),
            mode_count: 4,
            mode_seed: 0,
            hit_radius: 0,
            reward_table: None,
            default_reward: 1e-3,
            mode_threshold: 1.0,
        }
    }

    pub fn bitseq(n: usize, k: usize, alpha: f64) -> Self {
        Self { kind: EnvKind::Bitseq, n, k, ..Self::hypergrid(8, alpha) }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(EnvError::Config(format!("alpha must be in [0,1), got {}", self.alpha)));
        }
        self.build().map(|_| ())
    }

    pub fn build(&self) -> Result<Arc<dyn Environment>, EnvError> {
        Ok(match self.kind {
            EnvKind::Figure1 => Arc::new(Figure1Toy::new(self.alpha)?),
            EnvKind::Hypergrid => Arc::new(HyperGrid::new(HyperGridConfig {
                side: self.side,
                ndim: self.ndim,
                alpha: self.alpha,
                r0: self.r0,
                r1: self.r1,
                r2: self.r2,
                stop_noise: self.stop_noise,
            })?),
            EnvKind::Bitseq => {
                let modes = if self.mode_set.is_empty() {
                    random_modes(self.n, self.mode_count, self.mode_seed)?
                } else {
                    self.mode_set.clone()
                };
                Arc::new(SeqEnv::new(
                    self.n,
                    self.k,
                    self.alpha,
                    SeqReward::EditDistance { modes, hit_radius: self.hit_radius },
                )?)
            }
            EnvKind::External => {
                let path = self
                    .reward_table
                    .as_ref()
                    .ok_or_else(|| EnvError::Config("external env needs env.reward_table".into()))?;
                let table = RewardTable::load(path, self.n, self.default_reward, self.mode_threshold)?;
                Arc::new(SeqEnv::with_table(self.n, self.k, self.alpha, table)?)
            }
        })
    }
}
