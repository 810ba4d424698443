mod config;
mod runner;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{ConfigError, ExperimentConfig};
use runner::CliError;

/// Train and evaluate GFlowNets on environments with stochastic transitions.
#[derive(Parser)]
#[command(name = "sgfn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every method for every seed and write one metrics JSONL each.
    Run(Common),
    /// Repeat `run` for each value of one config key.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Key to vary, in full (`env.alpha`) or by its last segment (`alpha`).
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long)]
        values: String,
    },
    /// Recompute metrics from a checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Fresh samples for the sampled statistics.
        #[arg(long, default_value_t = 10_000)]
        rollouts: usize,
    },
    /// Print the kernel table of an enumerable environment.
    DumpEnv(Common),
}

#[derive(Args)]
struct Common {
    /// `key=value` file, or a manifest.json from an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override applied after the config file; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Run this single seed instead of `seeds`.
    #[arg(long)]
    seed: Option<u64>,
    /// Use the true transition kernel instead of a learned model.
    #[arg(long)]
    oracle_dynamics: bool,
    /// Further overrides as bare `key=value`.
    #[arg(value_name = "KEY=VALUE")]
    pairs: Vec<String>,
}

impl Common {
    fn pairs(&self) -> Result<Vec<(String, String)>, ConfigError> {
        let mut out = match &self.config {
            Some(p) => config::load_file(p)?,
            None => Vec::new(),
        };
        for s in self.sets.iter().chain(&self.pairs) {
            let pair = config::parse_pair(s).ok_or_else(|| ConfigError::Syntax { line: 0, text: s.clone() })?;
            out.push(pair);
        }
        if let Some(seed) = self.seed {
            out.push(("seeds".into(), seed.to_string()));
        }
        if self.oracle_dynamics {
            out.push(("train.dynamics".into(), "oracle".into()));
        }
        Ok(out)
    }

    fn resolve(&self) -> Result<ExperimentConfig, ConfigError> {
        ExperimentConfig::from_pairs(&self.pairs()?)
    }

    /// For commands that never train, a method is not required.
    fn resolve_any_method(&self) -> Result<ExperimentConfig, ConfigError> {
        let mut pairs = self.pairs()?;
        if !pairs.iter().any(|(k, _)| k == "method") {
            pairs.insert(0, ("method".into(), "db".into()));
        }
        ExperimentConfig::from_pairs(&pairs)
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(common) => {
            let cfg = common.resolve()?;
            let label = cfg.env.kind.as_str().to_string();
            for p in runner::run(&cfg, &label)? {
                println!("{}", p.display());
            }
        }
        Command::Sweep { common, axis, values } => {
            let key = config::sweep_key(&axis)?;
            let values: Vec<String> = values.split(',').map(str::trim).filter(|v| !v.is_empty()).map(String::from).collect();
            for p in runner::sweep(&common.pairs()?, key, &values)? {
                println!("{}", p.display());
            }
        }
        Command::Eval { common, checkpoint, rollouts } => {
            let cfg = common.resolve_any_method()?;
            let rec = runner::eval(&cfg, &checkpoint, cfg.seeds[0], rollouts)?;
            println!("{}", serde_json::to_string(&rec).expect("json"));
        }
        Command::DumpEnv(common) => {
            let cfg = common.resolve_any_method()?;
            runner::dump_env(&cfg, &mut std::io::stdout().lock())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
