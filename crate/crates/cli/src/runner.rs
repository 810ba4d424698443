use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde_json::json;
use sgfn::env::{enumerate_states, Environment};
use sgfn::gfnmodel::sample_batch;
use sgfn::trainer::{self, ExactEval, MetricsRecord, RunObserver, Stream, TrainError};
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig, Method};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{count} run(s) aborted; diagnostics in {}", .paths.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))]
    Aborted { count: usize, paths: Vec<PathBuf> },
    #[error(transparent)]
    Train(#[from] TrainError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Train(TrainError::Config(_)) => 2,
            CliError::Aborted { .. } | CliError::Train(_) => 3,
            CliError::Io { .. } => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(io_err(path))
}

pub fn build_fingerprint() -> serde_json::Value {
    json!({
        "package": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "profile": if cfg!(debug_assertions) { "debug" } else { "release" },
        "target": format!("{}-{}", std::env::consts::ARCH, std::env::consts::OS),
    })
}

pub fn manifest(cfg: &ExperimentConfig, env: &dyn Environment) -> serde_json::Value {
    json!({
        "config": cfg.to_map(),
        "env_fingerprint": env.fingerprint(),
        "build": build_fingerprint(),
    })
}

/// Output file stem for one (method, seed).
pub fn run_stem(method: Method, label: &str, seed: u64) -> String {
    format!("{}_{}_{}", method.as_str(), label, seed)
}

/// Trains every (method, seed) pair into `cfg.output`, labelling files with
/// `label`. Aborted runs leave a diagnostic file and the rest still run.
pub fn run(cfg: &ExperimentConfig, label: &str) -> Result<Vec<PathBuf>, CliError> {
    let env = cfg.env.build().map_err(TrainError::from)?;
    let dir = &cfg.output;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let manifest_path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest(cfg, env.as_ref())).expect("json");
    write_file(&manifest_path, &(text + "\n"))?;

    let mut written = Vec::new();
    let mut aborted = Vec::new();
    for &method in &cfg.methods {
        for &seed in &cfg.seeds {
            let stem = run_stem(method, label, seed);
            let path = dir.join(format!("{stem}.jsonl"));
            match run_one(cfg, env.clone(), method, seed, &path)? {
                Ok(ckpt) => {
                    written.push(path);
                    if let Some(text) = ckpt {
                        write_file(&dir.join(format!("{stem}.ckpt")), &text)?;
                    }
                }
                Err(TrainError::NonFinite(diag)) => {
                    let p = dir.join(format!("{stem}.abort.json"));
                    write_file(&p, &serde_json::to_string_pretty(&*diag).expect("json"))?;
                    eprintln!("{stem}: aborted at iteration {}: {}", diag.iteration, diag.reason);
                    aborted.push(p);
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
    if aborted.is_empty() {
        Ok(written)
    } else {
        Err(CliError::Aborted { count: aborted.len(), paths: aborted })
    }
}

/// One run streaming records to `path`. Returns the checkpoint text for
/// GFlowNet methods. The outer error is I/O; the inner one is training.
fn run_one(
    cfg: &ExperimentConfig,
    env: Arc<dyn Environment>,
    method: Method,
    seed: u64,
    path: &Path,
) -> Result<Result<Option<String>, TrainError>, CliError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    let mut io_failure: Option<std::io::Error> = None;
    let mut sink = |r: &MetricsRecord| {
        if io_failure.is_some() {
            return;
        }
        let line = serde_json::to_string(r).expect("json");
        if let Err(e) = writeln!(out, "{line}").and_then(|_| out.flush()) {
            io_failure = Some(e);
        }
    };
    let result = match method {
        Method::Gfn(objective) => {
            let tc = cfg.train_config(objective, seed);
            trainer::train(env, &tc, &mut sink).map(|r| Some(r.params.to_checkpoint()))
        }
        Method::Mcmc => {
            let tc = cfg.train_config(sgfn::objectives::Objective::Db, seed);
            trainer::run_mcmc(env, &tc, cfg.mcmc_chains, &mut sink).map(|_| None)
        }
    };
    match io_failure {
        Some(e) => Err(io_err(path)(e)),
        None => Ok(result),
    }
}

/// One [`run`] per value, each in its own `<key>=<value>` subdirectory with
/// the value in the file labels.
pub fn sweep(base: &[(String, String)], key: &str, values: &[String]) -> Result<Vec<PathBuf>, CliError> {
    if values.is_empty() {
        return Err(ConfigError::Invalid { key: key.to_string(), msg: "sweep needs at least one value".into() }.into());
    }
    // resolve every point before running any
    let mut points = Vec::new();
    for v in values {
        let mut pairs = base.to_vec();
        pairs.push((key.to_string(), v.clone()));
        let mut cfg = ExperimentConfig::from_pairs(&pairs)?;
        let short = key.rsplit('.').next().unwrap_or(key);
        cfg.output = cfg.output.join(format!("{short}={v}"));
        let label = format!("{}-{short}{v}", cfg.env.kind.as_str());
        points.push((cfg, label));
    }
    let mut written = Vec::new();
    for (cfg, label) in &points {
        written.extend(run(cfg, label)?);
    }
    Ok(written)
}

/// Recomputes metrics for a saved checkpoint: exact L1 when enumerable, plus
/// mode, top-k and empirical statistics over `rollouts` fresh samples.
pub fn eval(cfg: &ExperimentConfig, checkpoint: &Path, seed: u64, rollouts: usize) -> Result<MetricsRecord, CliError> {
    let env = cfg.env.build().map_err(TrainError::from)?;
    let tc = cfg.train_config(sgfn::objectives::Objective::Db, seed);
    let exact = ExactEval::try_new(env.as_ref(), tc.gfn.beta, tc.eval_state_cap)?;
    let mut params = trainer::init_params(&env, &tc, exact.as_ref())?;
    let text = fs::read_to_string(checkpoint).map_err(io_err(checkpoint))?;
    params.load_checkpoint(&text).map_err(TrainError::from)?;
    let start = Instant::now();
    let mut obs = RunObserver::new(env.as_ref(), rollouts.max(1), tc.topk);
    let mut rng = trainer::stream(seed, Stream::Eval);
    let mut left = rollouts;
    while left > 0 {
        let m = left.min(1024);
        for t in sample_batch(&params, m, tc.epsilon, &mut rng).map_err(TrainError::from)? {
            obs.observe(env.as_ref(), &t, 0)?;
        }
        left -= m;
    }
    let l1 = exact.as_ref().map(|e| e.l1(&params)).transpose()?;
    Ok(obs.tick(rollouts, start, l1, exact.as_ref().map(|e| &e.target), seed, "eval", &env.fingerprint()))
}

/// Kernel table of an enumerable environment, one line per (state, action)
/// and one per terminal.
pub fn dump_env(cfg: &ExperimentConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let env = cfg.env.build().map_err(TrainError::from)?;
    let graph = enumerate_states(env.as_ref(), cfg.train.eval_state_cap).map_err(TrainError::from)?;
    let stdout = PathBuf::from("<stdout>");
    let w = |out: &mut dyn Write, s: String| writeln!(out, "{s}").map_err(io_err(&stdout));
    w(out, format!("# {}", env.fingerprint()))?;
    for s in &graph.evens {
        if env.is_terminal(s) {
            w(out, format!("{s} R={}", env.reward(s).map_err(TrainError::from)?))?;
            continue;
        }
        for a in env.valid_actions(s) {
            let outcomes = env.kernel_support(s, a).map_err(TrainError::from)?;
            let cells: Vec<String> = outcomes.iter().map(|(t, p)| format!("{t}:{p}")).collect();
            w(out, format!("{s} a{} -> {}", a.0, cells.join(" ")))?;
        }
    }
    Ok(())
}
