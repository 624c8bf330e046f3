//! Flat `key = value` run configuration shared by every subcommand.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown and repeated
//! keys are errors. `learning_rate` may be left unset to take the default of
//! the training mode.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

use crate::policy::{HeadInput, ModelDims};
use crate::pretrain::PretrainConfig;
use crate::trainer::{Mode, PpoConfig};
use crate::tssr::TssrConfig;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown configuration key `{key}`")]
    UnknownKey { key: String },
    #[error("configuration key `{key}` given twice")]
    Duplicate { key: String },
    #[error("bad value `{value}` for `{key}`")]
    BadValue { key: String, value: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    pub seed: u64,

    pub corpus: Option<PathBuf>,
    pub heldout: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub priors: Option<PathBuf>,
    pub init_checkpoint: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub samples: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub n_samples: usize,

    pub hidden: usize,
    pub layers: usize,
    pub head_input: HeadInput,

    pub pretrain: PretrainConfig,
    pub ppo: PpoConfig,
    /// Unset means the default of `mode`.
    pub learning_rate: Option<f64>,
    pub tssr: TssrConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::PRl,
            seed: 0,
            corpus: None,
            heldout: None,
            vocab: None,
            priors: None,
            init_checkpoint: None,
            checkpoint: None,
            samples: None,
            output_dir: PathBuf::from("out"),
            n_samples: 10_000,
            hidden: 512,
            layers: 3,
            head_input: HeadInput::TopHidden,
            pretrain: PretrainConfig::default(),
            ppo: PpoConfig::for_mode(Mode::PRl),
            learning_rate: None,
            tssr: TssrConfig::default(),
        }
    }
}

pub const KEYS: &[&str] = &[
    "mode",
    "seed",
    "corpus",
    "heldout",
    "vocab",
    "priors",
    "init_checkpoint",
    "checkpoint",
    "samples",
    "output_dir",
    "n_samples",
    "hidden",
    "layers",
    "head_input",
    "pretrain_beta",
    "pretrain_lr",
    "pretrain_clip_norm",
    "pretrain_epochs",
    "pretrain_batch_size",
    "pretrain_dropout",
    "steps_per_epoch",
    "steps_per_collect",
    "repeat_per_collect",
    "batch",
    "epochs",
    "gamma",
    "gae_lambda",
    "clip",
    "c_s",
    "c_v",
    "max_grad_norm",
    "learning_rate",
    "value_clip",
    "n_env",
    "normalize_advantages",
    "k_subst",
    "lambda_swap",
    "lambda_err",
    "lambda_dist",
    "e_max",
];

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue {
        key: key.into(),
        value: value.into(),
    })
}

fn path_value(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax { line: n + 1 })?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::Duplicate { key: key.into() });
            }
            cfg.set(key, value.trim())?;
        }
        Ok(cfg)
    }

    /// Applies one `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (key, value) = assignment.split_once('=').ok_or(ConfigError::Syntax { line: 0 })?;
        self.set(key.trim(), value.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value;
        match key {
            "mode" => {
                self.mode = Mode::parse(v).ok_or_else(|| ConfigError::BadValue {
                    key: key.into(),
                    value: v.into(),
                })?
            }
            "seed" => self.seed = parse_value(key, v)?,
            "corpus" => self.corpus = path_value(v),
            "heldout" => self.heldout = path_value(v),
            "vocab" => self.vocab = path_value(v),
            "priors" => self.priors = path_value(v),
            "init_checkpoint" => self.init_checkpoint = path_value(v),
            "checkpoint" => self.checkpoint = path_value(v),
            "samples" => self.samples = path_value(v),
            "output_dir" => self.output_dir = PathBuf::from(v),
            "n_samples" => self.n_samples = parse_value(key, v)?,
            "hidden" => self.hidden = parse_value(key, v)?,
            "layers" => self.layers = parse_value(key, v)?,
            "head_input" => {
                self.head_input = HeadInput::parse(v).ok_or_else(|| ConfigError::BadValue {
                    key: key.into(),
                    value: v.into(),
                })?
            }
            "pretrain_beta" => self.pretrain.beta = parse_value(key, v)?,
            "pretrain_lr" => self.pretrain.lr = parse_value(key, v)?,
            "pretrain_clip_norm" => self.pretrain.clip_norm = parse_value(key, v)?,
            "pretrain_epochs" => self.pretrain.epochs = parse_value(key, v)?,
            "pretrain_batch_size" => self.pretrain.batch_size = parse_value(key, v)?,
            "pretrain_dropout" => self.pretrain.dropout = parse_value(key, v)?,
            "steps_per_epoch" => self.ppo.steps_per_epoch = parse_value(key, v)?,
            "steps_per_collect" => self.ppo.steps_per_collect = parse_value(key, v)?,
            "repeat_per_collect" => self.ppo.repeat_per_collect = parse_value(key, v)?,
            "batch" => self.ppo.batch = parse_value(key, v)?,
            "epochs" => self.ppo.epochs = parse_value(key, v)?,
            "gamma" => self.ppo.gamma = parse_value(key, v)?,
            "gae_lambda" => self.ppo.lambda = parse_value(key, v)?,
            "clip" => self.ppo.clip = parse_value(key, v)?,
            "c_s" => self.ppo.c_s = parse_value(key, v)?,
            "c_v" => self.ppo.c_v = parse_value(key, v)?,
            "max_grad_norm" => self.ppo.max_grad_norm = parse_value(key, v)?,
            "learning_rate" => {
                self.learning_rate = if v.is_empty() { None } else { Some(parse_value(key, v)?) }
            }
            "value_clip" => self.ppo.value_clip = parse_value(key, v)?,
            "n_env" => self.ppo.n_env = parse_value(key, v)?,
            "normalize_advantages" => self.ppo.normalize_advantages = parse_value(key, v)?,
            "k_subst" => self.tssr.k_subst = parse_value(key, v)?,
            "lambda_swap" => self.tssr.lambda_swap = parse_value(key, v)?,
            "lambda_err" => self.tssr.lambda_err = parse_value(key, v)?,
            "lambda_dist" => self.tssr.lambda_dist = parse_value(key, v)?,
            "e_max" => self.tssr.e_max = parse_value(key, v)?,
            _ => return Err(ConfigError::UnknownKey { key: key.into() }),
        }
        Ok(())
    }

    fn get(&self, key: &str) -> String {
        match key {
            "mode" => self.mode.as_str().into(),
            "seed" => self.seed.to_string(),
            "corpus" => show_path(&self.corpus),
            "heldout" => show_path(&self.heldout),
            "vocab" => show_path(&self.vocab),
            "priors" => show_path(&self.priors),
            "init_checkpoint" => show_path(&self.init_checkpoint),
            "checkpoint" => show_path(&self.checkpoint),
            "samples" => show_path(&self.samples),
            "output_dir" => self.output_dir.display().to_string(),
            "n_samples" => self.n_samples.to_string(),
            "hidden" => self.hidden.to_string(),
            "layers" => self.layers.to_string(),
            "head_input" => self.head_input.as_str().into(),
            "pretrain_beta" => self.pretrain.beta.to_string(),
            "pretrain_lr" => self.pretrain.lr.to_string(),
            "pretrain_clip_norm" => self.pretrain.clip_norm.to_string(),
            "pretrain_epochs" => self.pretrain.epochs.to_string(),
            "pretrain_batch_size" => self.pretrain.batch_size.to_string(),
            "pretrain_dropout" => self.pretrain.dropout.to_string(),
            "steps_per_epoch" => self.ppo.steps_per_epoch.to_string(),
            "steps_per_collect" => self.ppo.steps_per_collect.to_string(),
            "repeat_per_collect" => self.ppo.repeat_per_collect.to_string(),
            "batch" => self.ppo.batch.to_string(),
            "epochs" => self.ppo.epochs.to_string(),
            "gamma" => self.ppo.gamma.to_string(),
            "gae_lambda" => self.ppo.lambda.to_string(),
            "clip" => self.ppo.clip.to_string(),
            "c_s" => self.ppo.c_s.to_string(),
            "c_v" => self.ppo.c_v.to_string(),
            "max_grad_norm" => self.ppo.max_grad_norm.to_string(),
            "learning_rate" => self.effective_lr().to_string(),
            "value_clip" => self.ppo.value_clip.to_string(),
            "n_env" => self.ppo.n_env.to_string(),
            "normalize_advantages" => self.ppo.normalize_advantages.to_string(),
            "k_subst" => self.tssr.k_subst.to_string(),
            "lambda_swap" => self.tssr.lambda_swap.to_string(),
            "lambda_err" => self.tssr.lambda_err.to_string(),
            "lambda_dist" => self.tssr.lambda_dist.to_string(),
            "e_max" => self.tssr.e_max.to_string(),
            _ => unreachable!("key table out of sync"),
        }
    }

    pub fn effective_lr(&self) -> f64 {
        self.learning_rate.unwrap_or_else(|| self.mode.default_lr())
    }

    /// PPO settings with the learning rate resolved.
    pub fn ppo_config(&self) -> PpoConfig {
        PpoConfig {
            lr: self.effective_lr(),
            ..self.ppo
        }
    }

    pub fn dims(&self, vocab: usize) -> ModelDims {
        ModelDims {
            head_input: self.head_input,
            ..ModelDims::new(vocab, self.hidden, self.layers)
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        if self.hidden == 0 || self.layers == 0 {
            return Err(ConfigError::Invalid("hidden and layers must be positive".into()));
        }
        if self.n_samples == 0 {
            return Err(ConfigError::Invalid("n_samples must be positive".into()));
        }
        self.pretrain.validate().map_err(|e| invalid(&e))?;
        self.ppo_config().validate().map_err(|e| invalid(&e))?;
        self.tssr.validate().map_err(|e| invalid(&e))?;
        Ok(())
    }

    /// Every key with its effective value; parses back to an equal config
    /// except that an unset learning rate becomes explicit.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key));
        }
        out
    }
}
