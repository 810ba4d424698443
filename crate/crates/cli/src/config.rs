//! Flat `key=value` experiment configuration with dotted keys.
//!
//! Resolution: the env kind is read first, its defaults fill every key, then
//! the file lines and overrides are applied in order. Every key is written
//! back to the manifest, so a manifest re-parses to the same config.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sgfn::autodiff::Activation;
use sgfn::dynamics::DynKind;
use sgfn::env::{EnvKind, EnvSpec};
use sgfn::gfnmodel::{GfnConfig, Parameterization};
use sgfn::objectives::Objective;
use sgfn::trainer::{DynamicsMode, TrainConfig};
use thiserror::Error;

pub const OUTPUT_ROOT_VAR: &str = "SGFN_OUTPUT_ROOT";

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("`{key}`: expected {expected}, got `{got}`")]
    Type { key: String, expected: &'static str, got: String },
    #[error("`{key}`: {msg}")]
    Invalid { key: String, msg: String },
    #[error("malformed line {line}: `{text}` (expected key=value)")]
    Syntax { line: usize, text: String },
    #[error("cannot read {path}: {msg}")]
    Io { path: PathBuf, msg: String },
    #[error("`{0}` cannot be swept")]
    NotSweepable(String),
}

type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Gfn(Objective),
    Mcmc,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Gfn(o) => o.as_str(),
            Method::Mcmc => "mcmc",
        }
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "mcmc" {
            return Ok(Method::Mcmc);
        }
        s.parse().map(Method::Gfn).map_err(|_| format!("unknown method `{s}`"))
    }
}

/// Every key in manifest order.
pub const KEYS: &[&str] = &[
    "method",
    "seeds",
    "output",
    "env.kind",
    "env.H",
    "env.ndim",
    "env.n",
    "env.k",
    "env.alpha",
    "env.R0",
    "env.R1",
    "env.R2",
    "env.stop_noise",
    "env.mode_set",
    "env.mode_count",
    "env.mode_seed",
    "env.hit_radius",
    "env.reward_table",
    "env.default_reward",
    "env.mode_threshold",
    "gfn.param",
    "gfn.hidden",
    "gfn.layers",
    "gfn.activation",
    "gfn.beta",
    "gfn.uniform_backward",
    "gfn.state_cap",
    "train.dynamics",
    "train.iterations",
    "train.rollouts",
    "train.lr",
    "train.lr_logz",
    "train.epsilon",
    "train.buffer_capacity",
    "train.eval_every",
    "train.warmup",
    "train.window",
    "train.topk",
    "train.eval_state_cap",
    "model.kind",
    "model.hidden",
    "model.layers",
    "model.lambda",
    "model.lr",
    "model.batch",
    "mcmc.chains",
];

const FIXED: &[&str] = &["method", "seeds", "output", "env.kind"];

/// Fully resolved experiment settings.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub output: PathBuf,
    pub env: EnvSpec,
    pub tabular: bool,
    pub hidden: usize,
    pub layers: usize,
    pub train: TrainConfig,
    pub model_kind: ModelKind,
    pub model_hidden: usize,
    pub model_layers: usize,
    pub model_lambda: f64,
    pub mcmc_chains: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Neural,
    Tabular,
}

fn default_output() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_VAR).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"))
}

impl ExperimentConfig {
    /// Per-env defaults. Grids train 20000 iterations at lr 1e-3 with model
    /// lr 1e-4; the toy is tabular with a faster lr; bit sequences use β=3,
    /// lr 5e-3 and a model batch of 128. Hidden widths are 64 throughout.
    pub fn defaults(kind: EnvKind) -> Self {
        let mut env = match kind {
            EnvKind::Figure1 => EnvSpec::figure1(),
            EnvKind::Hypergrid => EnvSpec::hypergrid(8, 0.25),
            EnvKind::Bitseq | EnvKind::External => EnvSpec::bitseq(16, 4, 0.1),
        };
        env.kind = kind;
        let seq = matches!(kind, EnvKind::Bitseq | EnvKind::External);
        let mut train = TrainConfig {
            gfn: GfnConfig { beta: if seq { 3.0 } else { 1.0 }, ..Default::default() },
            ..Default::default()
        };
        let mut model_lr = 1e-4;
        match kind {
            EnvKind::Figure1 => {
                train.iterations = 5000;
                train.lr = 3e-3;
                train.eval_every = 50;
            }
            EnvKind::Hypergrid => {}
            EnvKind::Bitseq | EnvKind::External => {
                train.iterations = 50_000;
                train.lr = 5e-3;
                train.epsilon = 5e-4;
                train.model_batch = 128;
                train.eval_every = 500;
                model_lr = 5e-4;
            }
        }
        train.lr_model = model_lr;
        let mut cfg = Self {
            methods: Vec::new(),
            seeds: vec![0],
            output: default_output(),
            env,
            tabular: kind == EnvKind::Figure1,
            hidden: 64,
            layers: 2,
            train,
            model_kind: ModelKind::Neural,
            model_hidden: 64,
            model_layers: 2,
            model_lambda: 0.1,
            mcmc_chains: 16,
        };
        cfg.sync();
        cfg
    }

    /// Pushes the flat fields into `train`.
    fn sync(&mut self) {
        self.train.gfn.parameterization = if self.tabular {
            Parameterization::Tabular
        } else {
            Parameterization::Neural { hidden: self.hidden, layers: self.layers }
        };
        self.train.model = match self.model_kind {
            ModelKind::Neural => DynKind::Neural { hidden: self.model_hidden, layers: self.model_layers },
            ModelKind::Tabular => DynKind::Tabular { lambda: self.model_lambda },
        };
    }

    /// Resolves `pairs` (applied in order) on top of the defaults for the
    /// env kind they name.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let kind = match pairs.iter().rev().find(|(k, _)| k == "env.kind") {
            Some((_, v)) => parse_as("env.kind", v, "figure1|hypergrid|bitseq|external")?,
            None => EnvKind::Hypergrid,
        };
        let mut cfg = Self::defaults(kind);
        for (k, v) in pairs {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let k = key;
        match key {
            "method" => {
                self.methods = list(v).map(|m| parse_as(k, m, "db|tb|stoch_db|stoch_tb|mcmc")).collect::<Result<_>>()?
            }
            "seeds" => self.seeds = list(v).map(|s| parse_as(k, s, "a comma list of integers")).collect::<Result<_>>()?,
            "output" => self.output = PathBuf::from(v),
            "env.kind" => {
                let kind: EnvKind = parse_as(k, v, "figure1|hypergrid|bitseq|external")?;
                if kind != self.env.kind {
                    return Err(invalid(k, "the env kind is fixed once defaults are chosen".into()));
                }
            }
            "env.H" => self.env.side = parse_as(k, v, "an integer")?,
            "env.ndim" => self.env.ndim = parse_as(k, v, "an integer")?,
            "env.n" => self.env.n = parse_as(k, v, "an integer")?,
            "env.k" => self.env.k = parse_as(k, v, "an integer")?,
            "env.alpha" => self.env.alpha = parse_as(k, v, "a number")?,
            "env.R0" => self.env.r0 = parse_as(k, v, "a number")?,
            "env.R1" => self.env.r1 = parse_as(k, v, "a number")?,
            "env.R2" => self.env.r2 = parse_as(k, v, "a number")?,
            "env.stop_noise" => self.env.stop_noise = parse_as(k, v, "true|false")?,
            "env.mode_set" => self.env.mode_set = list(v).map(|m| parse_bits(k, m)).collect::<Result<_>>()?,
            "env.mode_count" => self.env.mode_count = parse_as(k, v, "an integer")?,
            "env.mode_seed" => self.env.mode_seed = parse_as(k, v, "an integer")?,
            "env.hit_radius" => self.env.hit_radius = parse_as(k, v, "an integer")?,
            "env.reward_table" => self.env.reward_table = (!v.is_empty()).then(|| PathBuf::from(v)),
            "env.default_reward" => self.env.default_reward = parse_as(k, v, "a number")?,
            "env.mode_threshold" => self.env.mode_threshold = parse_as(k, v, "a number")?,
            "gfn.param" => {
                self.tabular = match v {
                    "tabular" => true,
                    "neural" => false,
                    _ => return Err(type_err(k, "neural|tabular", v)),
                }
            }
            "gfn.hidden" => self.hidden = parse_as(k, v, "an integer")?,
            "gfn.layers" => self.layers = parse_as(k, v, "an integer")?,
            "gfn.activation" => self.train.gfn.activation = parse_activation(k, v)?,
            "gfn.beta" => self.train.gfn.beta = parse_as(k, v, "a number")?,
            "gfn.uniform_backward" => self.train.gfn.uniform_backward = parse_as(k, v, "true|false")?,
            "gfn.state_cap" => self.train.gfn.state_cap = parse_as(k, v, "an integer")?,
            "train.dynamics" => {
                self.train.dynamics_mode = match v {
                    "learned" => DynamicsMode::Learned,
                    "oracle" => DynamicsMode::Oracle,
                    _ => return Err(type_err(k, "learned|oracle", v)),
                }
            }
            "train.iterations" => self.train.iterations = parse_as(k, v, "an integer")?,
            "train.rollouts" => self.train.rollouts = parse_as(k, v, "an integer")?,
            "train.lr" => self.train.lr = parse_as(k, v, "a number")?,
            "train.lr_logz" => self.train.lr_logz = parse_as(k, v, "a number")?,
            "train.epsilon" => self.train.epsilon = parse_as(k, v, "a number")?,
            "train.buffer_capacity" => self.train.buffer_capacity = parse_as(k, v, "an integer")?,
            "train.eval_every" => self.train.eval_every = parse_as(k, v, "an integer")?,
            "train.warmup" => self.train.warmup = parse_as(k, v, "an integer")?,
            "train.window" => self.train.window = parse_as(k, v, "an integer")?,
            "train.topk" => self.train.topk = parse_as(k, v, "an integer")?,
            "train.eval_state_cap" => self.train.eval_state_cap = parse_as(k, v, "an integer")?,
            "model.kind" => {
                self.model_kind = match v {
                    "neural" => ModelKind::Neural,
                    "tabular" => ModelKind::Tabular,
                    _ => return Err(type_err(k, "neural|tabular", v)),
                }
            }
            "model.hidden" => self.model_hidden = parse_as(k, v, "an integer")?,
            "model.layers" => self.model_layers = parse_as(k, v, "an integer")?,
            "model.lambda" => self.model_lambda = parse_as(k, v, "a number")?,
            "model.lr" => self.train.lr_model = parse_as(k, v, "a number")?,
            "model.batch" => self.train.model_batch = parse_as(k, v, "an integer")?,
            "mcmc.chains" => self.mcmc_chains = parse_as(k, v, "an integer")?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        self.sync();
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<String> {
        let t = &self.train;
        let e = &self.env;
        Ok(match key {
            "method" => self.methods.iter().map(Method::as_str).collect::<Vec<_>>().join(","),
            "seeds" => self.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(","),
            "output" => self.output.display().to_string(),
            "env.kind" => e.kind.as_str().to_string(),
            "env.H" => e.side.to_string(),
            "env.ndim" => e.ndim.to_string(),
            "env.n" => e.n.to_string(),
            "env.k" => e.k.to_string(),
            "env.alpha" => e.alpha.to_string(),
            "env.R0" => e.r0.to_string(),
            "env.R1" => e.r1.to_string(),
            "env.R2" => e.r2.to_string(),
            "env.stop_noise" => e.stop_noise.to_string(),
            "env.mode_set" => e
                .mode_set
                .iter()
                .map(|m| m.iter().map(|b| char::from(b'0' + b)).collect::<String>())
                .collect::<Vec<_>>()
                .join(","),
            "env.mode_count" => e.mode_count.to_string(),
            "env.mode_seed" => e.mode_seed.to_string(),
            "env.hit_radius" => e.hit_radius.to_string(),
            "env.reward_table" => e.reward_table.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            "env.default_reward" => e.default_reward.to_string(),
            "env.mode_threshold" => e.mode_threshold.to_string(),
            "gfn.param" => if self.tabular { "tabular" } else { "neural" }.to_string(),
            "gfn.hidden" => self.hidden.to_string(),
            "gfn.layers" => self.layers.to_string(),
            "gfn.activation" => match t.gfn.activation {
                Activation::Relu => "relu".to_string(),
                Activation::LeakyRelu(s) => format!("leaky_relu:{s}"),
            },
            "gfn.beta" => t.gfn.beta.to_string(),
            "gfn.uniform_backward" => t.gfn.uniform_backward.to_string(),
            "gfn.state_cap" => t.gfn.state_cap.to_string(),
            "train.dynamics" => t.dynamics_mode.as_str().to_string(),
            "train.iterations" => t.iterations.to_string(),
            "train.rollouts" => t.rollouts.to_string(),
            "train.lr" => t.lr.to_string(),
            "train.lr_logz" => t.lr_logz.to_string(),
            "train.epsilon" => t.epsilon.to_string(),
            "train.buffer_capacity" => t.buffer_capacity.to_string(),
            "train.eval_every" => t.eval_every.to_string(),
            "train.warmup" => t.warmup.to_string(),
            "train.window" => t.window.to_string(),
            "train.topk" => t.topk.to_string(),
            "train.eval_state_cap" => t.eval_state_cap.to_string(),
            "model.kind" => match self.model_kind {
                ModelKind::Neural => "neural",
                ModelKind::Tabular => "tabular",
            }
            .to_string(),
            "model.hidden" => self.model_hidden.to_string(),
            "model.layers" => self.model_layers.to_string(),
            "model.lambda" => self.model_lambda.to_string(),
            "model.lr" => t.lr_model.to_string(),
            "model.batch" => t.model_batch.to_string(),
            "mcmc.chains" => self.mcmc_chains.to_string(),
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        })
    }

    /// Every key with its resolved value, in [`KEYS`] order.
    pub fn pairs(&self) -> Vec<(String, String)> {
        KEYS.iter().map(|k| (k.to_string(), self.get(k).expect("listed key"))).collect()
    }

    pub fn to_map(&self) -> BTreeMap<String, String> {
        self.pairs().into_iter().collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(invalid("method", "at least one method is required".into()));
        }
        if has_duplicates(&self.methods) {
            return Err(invalid("method", "methods must be distinct".into()));
        }
        if self.seeds.is_empty() || has_duplicates(&self.seeds) {
            return Err(invalid("seeds", "seeds must be non-empty and distinct".into()));
        }
        if !(0.0..1.0).contains(&self.env.alpha) {
            return Err(invalid("env.alpha", format!("must be in [0,1), got {}", self.env.alpha)));
        }
        if self.hidden == 0 || self.layers == 0 {
            return Err(invalid("gfn.hidden", "hidden width and layer count must be >= 1".into()));
        }
        if self.model_hidden == 0 || self.model_layers == 0 {
            return Err(invalid("model.hidden", "hidden width and layer count must be >= 1".into()));
        }
        if self.mcmc_chains == 0 {
            return Err(invalid("mcmc.chains", "must be >= 1".into()));
        }
        self.env.validate().map_err(|e| invalid("env", e.to_string()))?;
        self.train.validate().map_err(|e| invalid("train", e.to_string()))?;
        Ok(())
    }

    /// Train config for one seed and objective.
    pub fn train_config(&self, objective: Objective, seed: u64) -> TrainConfig {
        TrainConfig { objective, seed, ..self.train.clone() }
    }
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_lines(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        out.push(parse_pair(line).ok_or_else(|| ConfigError::Syntax { line: i + 1, text: raw.to_string() })?);
    }
    Ok(out)
}

pub fn parse_pair(s: &str) -> Option<(String, String)> {
    let (k, v) = s.split_once('=')?;
    let k = k.trim();
    (!k.is_empty()).then(|| (k.to_string(), v.trim().to_string()))
}

/// Reads a `key=value` file, or the `config` object of a manifest when the
/// file is JSON.
pub fn load_file(path: &Path) -> Result<Vec<(String, String)>> {
    let io = |e: std::io::Error| ConfigError::Io { path: path.to_path_buf(), msg: e.to_string() };
    let text = std::fs::read_to_string(path).map_err(io)?;
    if text.trim_start().starts_with('{') {
        let bad = |msg: String| ConfigError::Io { path: path.to_path_buf(), msg };
        let doc: serde_json::Value = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
        let obj = doc.get("config").and_then(|c| c.as_object()).ok_or_else(|| bad("manifest has no `config` object".into()))?;
        return obj
            .iter()
            .map(|(k, v)| match v.as_str() {
                Some(s) => Ok((k.clone(), s.to_string())),
                None => Err(bad(format!("manifest value for `{k}` is not a string"))),
            })
            .collect();
    }
    parse_lines(&text)
}

/// Resolves a sweep axis: a full key, or a bare suffix such as `alpha` that
/// names exactly one key.
pub fn sweep_key(axis: &str) -> Result<&'static str> {
    let found: Vec<&'static str> = if KEYS.contains(&axis) {
        KEYS.iter().copied().filter(|k| *k == axis).collect()
    } else {
        KEYS.iter().copied().filter(|k| k.rsplit('.').next() == Some(axis)).collect()
    };
    match found.as_slice() {
        [k] if FIXED.contains(k) => Err(ConfigError::NotSweepable(k.to_string())),
        [k] => Ok(k),
        [] => Err(ConfigError::UnknownKey(axis.to_string())),
        _ => Err(invalid(axis, format!("ambiguous, matches {}", found.join(", ")))),
    }
}

fn list(v: &str) -> impl Iterator<Item = &str> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty())
}

fn has_duplicates<T: PartialEq>(xs: &[T]) -> bool {
    xs.iter().enumerate().any(|(i, x)| xs[..i].contains(x))
}

fn type_err(key: &str, expected: &'static str, got: &str) -> ConfigError {
    ConfigError::Type { key: key.to_string(), expected, got: got.to_string() }
}

fn invalid(key: &str, msg: String) -> ConfigError {
    ConfigError::Invalid { key: key.to_string(), msg }
}

fn parse_as<T: FromStr>(key: &str, v: &str, expected: &'static str) -> Result<T> {
    v.parse().map_err(|_| type_err(key, expected, v))
}

fn parse_bits(key: &str, v: &str) -> Result<Vec<u8>> {
    v.bytes()
        .map(|b| match b {
            b'0' | b'1' => Ok(b - b'0'),
            _ => Err(type_err(key, "comma-separated bit strings", v)),
        })
        .collect()
}

fn parse_activation(key: &str, v: &str) -> Result<Activation> {
    let expected = "relu|leaky_relu:<slope>";
    match v.split_once(':') {
        None if v == "relu" => Ok(Activation::Relu),
        Some(("leaky_relu", s)) => Ok(Activation::LeakyRelu(parse_as(key, s, expected)?)),
        _ => Err(type_err(key, expected, v)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(s: &str) -> Vec<(String, String)> {
        s.split_whitespace().map(|p| parse_pair(p).unwrap()).collect()
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = ExperimentConfig::from_pairs(&pairs("env.kind=figure1 method=stoch_db")).unwrap();
        assert_eq!(cfg.methods, vec![Method::Gfn(Objective::StochDb)]);
        assert_eq!(cfg.seeds, vec![0]);
        assert_eq!(cfg.env.alpha, 0.5);
        assert_eq!(cfg.train.gfn.parameterization, Parameterization::Tabular);
        assert_eq!(cfg.get("train.iterations").unwrap(), "5000");
        assert_eq!(cfg.pairs().len(), KEYS.len());
    }

    #[test]
    fn grid_defaults() {
        let cfg = ExperimentConfig::from_pairs(&pairs("method=db")).unwrap();
        assert_eq!(cfg.env.kind, EnvKind::Hypergrid);
        assert_eq!(cfg.train.lr, 1e-3);
        assert_eq!(cfg.train.lr_model, 1e-4);
        assert_eq!(cfg.train.rollouts, 16);
        assert_eq!(cfg.train.iterations, 20_000);
        assert_eq!(cfg.train.gfn.parameterization, Parameterization::Neural { hidden: 64, layers: 2 });
    }

    #[test]
    fn bitseq_defaults() {
        let cfg = ExperimentConfig::from_pairs(&pairs("env.kind=bitseq method=stoch_db,db,mcmc")).unwrap();
        assert_eq!(cfg.train.gfn.beta, 3.0);
        assert_eq!(cfg.train.model_batch, 128);
        assert_eq!(cfg.train.lr_model, 5e-4);
        assert_eq!(cfg.methods.len(), 3);
    }

    #[test]
    fn errors_name_the_key() {
        let err = ExperimentConfig::from_pairs(&pairs("method=db env.alpha=1.5")).unwrap_err();
        assert!(err.to_string().contains("env.alpha"), "{err}");
        let err = ExperimentConfig::from_pairs(&pairs("method=db train.lr=fast")).unwrap_err();
        assert_eq!(err, ConfigError::Type { key: "train.lr".into(), expected: "a number", got: "fast".into() });
        assert_eq!(
            ExperimentConfig::from_pairs(&pairs("method=db train.speed=3")).unwrap_err(),
            ConfigError::UnknownKey("train.speed".into())
        );
        assert!(ExperimentConfig::from_pairs(&pairs("env.kind=figure1")).is_err());
        assert!(ExperimentConfig::from_pairs(&pairs("method=db seeds=1,1")).is_err());
        assert!(ExperimentConfig::from_pairs(&pairs("method=ppo")).is_err());
    }

    #[test]
    fn every_key_round_trips() {
        let cfg = ExperimentConfig::from_pairs(&pairs(
            "env.kind=bitseq method=db,mcmc seeds=3,4 env.mode_set=0110,1111 env.n=4 gfn.activation=relu model.kind=tabular",
        ))
        .unwrap();
        let again = ExperimentConfig::from_pairs(&cfg.pairs()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(again.env.mode_set, vec![vec![0, 1, 1, 0], vec![1, 1, 1, 1]]);
    }

    #[test]
    fn lines_and_comments() {
        let p = parse_lines("# grid\nmethod = db\n\nenv.H=4  # small\n").unwrap();
        assert_eq!(p, vec![("method".into(), "db".into()), ("env.H".into(), "4".into())]);
        assert_eq!(parse_lines("a=1\nnonsense\n").unwrap_err(), ConfigError::Syntax { line: 2, text: "nonsense".into() });
    }

    #[test]
    fn sweep_axes() {
        assert_eq!(sweep_key("alpha").unwrap(), "env.alpha");
        assert_eq!(sweep_key("H").unwrap(), "env.H");
        assert_eq!(sweep_key("train.lr").unwrap(), "train.lr");
        assert!(matches!(sweep_key("seeds"), Err(ConfigError::NotSweepable(_))));
        assert!(matches!(sweep_key("hidden"), Err(ConfigError::Invalid { .. })));
        assert!(matches!(sweep_key("nope"), Err(ConfigError::UnknownKey(_))));
    }
}
