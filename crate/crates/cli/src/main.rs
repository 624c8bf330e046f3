//! `tssr` command-line driver.
//!
//! Every subcommand starts from the defaults, then applies the `--config`
//! file, then `--set key=value` overrides, then the dedicated flags. The
//! effective configuration is written next to the outputs.
//!
//! Exit status: 0 on success, 1 on a validation error, 2 on a runtime error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tssr_core::config::{ConfigError, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "tssr", version, about = "Two-stage swap reward toolkit for SMILES generation")]
struct Cli {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Worker threads; 1 gives bitwise-reproducible runs.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Vocabulary operations.
    Vocab {
        #[command(subcommand)]
        action: VocabAction,
    },
    /// Maximum-likelihood pretraining of the actor.
    Pretrain(Flags),
    /// PPO training from scratch (prl) or from a pretrained actor (frl).
    Train(Flags),
    /// Sample SMILES strings from a checkpoint.
    Sample(Flags),
    /// Run the two-stage repair over a samples file.
    Repair(Flags),
    /// Compute evaluation metrics for a samples file.
    Eval(Flags),
    /// Write parse and chemistry judgments for a samples file as TSV.
    OracleExport(Flags),
}

#[derive(Subcommand, Debug)]
enum VocabAction {
    /// Build the vocabulary and token priors from a corpus.
    Build(Flags),
}

/// Shortcuts for configuration keys.
#[derive(Args, Debug, Default)]
struct Flags {
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    corpus: Option<String>,
    #[arg(long)]
    heldout: Option<String>,
    #[arg(long)]
    vocab: Option<String>,
    #[arg(long)]
    priors: Option<String>,
    /// Initial checkpoint for fine-tuning.
    #[arg(long)]
    init: Option<String>,
    #[arg(long)]
    checkpoint: Option<String>,
    #[arg(long)]
    samples: Option<String>,
    /// Number of samples.
    #[arg(long = "n")]
    n: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    /// Output directory.
    #[arg(long = "out")]
    out: Option<String>,
}

impl Flags {
    fn assignments(&self) -> Vec<(&'static str, &str)> {
        [
            ("mode", &self.mode),
            ("seed", &self.seed),
            ("corpus", &self.corpus),
            ("heldout", &self.heldout),
            ("vocab", &self.vocab),
            ("priors", &self.priors),
            ("init_checkpoint", &self.init),
            ("checkpoint", &self.checkpoint),
            ("samples", &self.samples),
            ("n_samples", &self.n),
            ("epochs", &self.epochs),
            ("output_dir", &self.out),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.as_deref().map(|v| (k, v)))
        .collect()
    }
}

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Runtime(anyhow::Error),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

pub fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

fn load_config(cli: &Cli, flags: &Flags) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Runtime(anyhow::anyhow!("reading {}: {e}", path.display())))?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    for s in &cli.set {
        cfg.apply_override(s)?;
    }
    for (key, value) in flags.assignments() {
        cfg.set(key, value)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(invalid("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(e.into()))?;
    }
    match &cli.command {
        Command::Vocab {
            action: VocabAction::Build(f),
        } => commands::vocab_build(&load_config(&cli, f)?),
        Command::Pretrain(f) => commands::pretrain(&load_config(&cli, f)?),
        Command::Train(f) => commands::train(&load_config(&cli, f)?),
        Command::Sample(f) => commands::sample(&load_config(&cli, f)?),
        Command::Repair(f) => commands::repair(&load_config(&cli, f)?),
        Command::Eval(f) => commands::eval(&load_config(&cli, f)?),
        Command::OracleExport(f) => commands::oracle_export(&load_config(&cli, f)?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
