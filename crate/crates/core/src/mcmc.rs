//! Single-site Metropolis–Hastings over complete objects.
//!
//! Each step picks one site uniformly, redraws its value uniformly (the
//! current value included, so the proposal is symmetric) and accepts with
//! `min(1, R(x')^β / R(x)^β)`. The slip kernel plays no part: chains target
//! the same reward-proportional distribution the GFlowNets do.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::env::{EnvError, Environment, EvenState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum McmcError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("invalid MCMC configuration: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McmcConfig {
    pub chains: usize,
    pub steps: usize,
    pub beta: f64,
    pub seed: u64,
}

impl McmcConfig {
    pub fn validate(&self) -> Result<(), McmcError> {
        if self.chains == 0 || self.steps == 0 {
            return Err(McmcError::Config("chains and steps must be >= 1".into()));
        }
        if !(self.beta > 0.0) {
            return Err(McmcError::Config(format!("reward exponent must be > 0, got {}", self.beta)));
        }
        Ok(())
    }
}

/// `min(1, exp(log_r_new − log_r))` for tempered log-rewards.
pub fn acceptance(log_r: f64, log_r_new: f64) -> f64 {
    (log_r_new - log_r).exp().min(1.0)
}

/// One Metropolis–Hastings chain with a private random stream.
#[derive(Clone, Debug)]
pub struct Chain {
    object: Vec<u16>,
    log_r: f64,
    rng: ChaCha8Rng,
    pub accepted: u64,
    pub proposed: u64,
}

impl Chain {
    /// Starts from a uniformly random object drawn from stream `index` of
    /// `seed`.
    pub fn new(env: &dyn Environment, seed: u64, index: u64, beta: f64) -> Result<Self, McmcError> {
        let space = env.object_space();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        let object: Vec<u16> = (0..space.sites).map(|_| rng.random_range(0..space.cardinality) as u16).collect();
        let log_r = beta * env.reward(&env.object_to_state(&object))?.ln();
        Ok(Self { object, log_r, rng, accepted: 0, proposed: 0 })
    }

    pub fn object(&self) -> &[u16] {
        &self.object
    }

    pub fn step(&mut self, env: &dyn Environment, beta: f64) -> Result<(), McmcError> {
        let space = env.object_space();
        let site = self.rng.random_range(0..space.sites);
        let value = self.rng.random_range(0..space.cardinality) as u16;
        self.proposed += 1;
        let old = self.object[site];
        self.object[site] = value;
        let log_r = beta * env.reward(&env.object_to_state(&self.object))?.ln();
        let u: f64 = self.rng.random();
        if u < acceptance(self.log_r, log_r) {
            self.log_r = log_r;
            self.accepted += 1;
        } else {
            self.object[site] = old;
        }
        Ok(())
    }
}

/// Runs every chain for `steps` steps and returns the visited terminal
/// states, chain-major (all of chain 0, then chain 1, ...).
pub fn mh_run(env: &dyn Environment, cfg: &McmcConfig) -> Result<Vec<EvenState>, McmcError> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(cfg.chains * cfg.steps);
    for c in 0..cfg.chains {
        let mut chain = Chain::new(env, cfg.seed, c as u64, cfg.beta)?;
        for _ in 0..cfg.steps {
            chain.step(env, cfg.beta)?;
            out.push(env.object_to_state(chain.object()));
        }
    }
    Ok(out)
}

/// Lockstep variant for metrics: each call to [`ChainSet::advance`] steps
/// every chain once and returns the new states in chain order.
#[derive(Clone, Debug)]
pub struct ChainSet {
    chains: Vec<Chain>,
    beta: f64,
}

impl ChainSet {
    pub fn new(env: &dyn Environment, chains: usize, beta: f64, seed: u64) -> Result<Self, McmcError> {
        McmcConfig { chains, steps: 1, beta, seed }.validate()?;
        let chains = (0..chains as u64).map(|c| Chain::new(env, seed, c, beta)).collect::<Result<_, _>>()?;
        Ok(Self { chains, beta })
    }

    pub fn advance(&mut self, env: &dyn Environment) -> Result<Vec<EvenState>, McmcError> {
        let mut out = Vec::with_capacity(self.chains.len());
        for c in &mut self.chains {
            c.step(env, self.beta)?;
            out.push(env.object_to_state(c.object()));
        }
        Ok(out)
    }

    pub fn acceptance_rate(&self) -> f64 {
        let (a, p) = self.chains.iter().fold((0, 0), |(a, p), c| (a + c.accepted, p + c.proposed));
        if p == 0 {
            0.0
        } else {
            a as f64 / p as f64
        }
    }
}
