//! Training configuration resolution: flags > config file > profile defaults.

use std::fs;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use seqlen_audit::optimizer::DecayMode;
use seqlen_audit::trainer::TrainConfig;
use serde::Serialize;

use crate::error::{usage, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// hidden/input 64, 2000 synthetic examples per split.
    Desk,
    /// hidden/input 300, 10000 synthetic examples per split.
    Paper,
}

impl Profile {
    pub fn train_config(self) -> TrainConfig {
        match self {
            Profile::Desk => TrainConfig::desk(),
            Profile::Paper => TrainConfig::paper(),
        }
    }

    pub fn examples(self) -> usize {
        match self {
            Profile::Desk => 2000,
            Profile::Paper => 10_000,
        }
    }

    pub fn vector_dim(self) -> usize {
        self.train_config().input_dim
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DecayArg {
    Coupled,
    Decoupled,
}

#[derive(Debug, Clone, Args)]
pub struct TrainFlags {
    /// Built-in defaults to start from.
    #[arg(long, value_enum, default_value = "desk")]
    pub profile: Profile,
    /// TOML file with TrainConfig fields (epochs, batch_size, learning_rate,
    /// weight_decay, decay_mode, exempt_biases, dropout_rate, hidden_dim,
    /// input_dim, seed).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long, value_enum)]
    pub decay_mode: Option<DecayArg>,
    /// Do not decay gate and head biases.
    #[arg(long)]
    pub exempt_biases: bool,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub input_dim: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Overlay TOML keys onto `base`; unknown keys are rejected.
fn apply_file(base: TrainConfig, path: &PathBuf) -> CliResult<TrainConfig> {
    let text = fs::read_to_string(path)?;
    let table: toml::Table = match text.parse() {
        Ok(t) => t,
        Err(e) => return usage(format!("{}: {e}", path.display())),
    };
    let mut value = serde_json::to_value(&base)?;
    let obj = value.as_object_mut().expect("struct serializes to an object");
    for (key, v) in table {
        if !obj.contains_key(&key) {
            return usage(format!("{}: unknown configuration key `{key}`", path.display()));
        }
        obj.insert(key, serde_json::to_value(v)?);
    }
    match serde_json::from_value(value) {
        Ok(cfg) => Ok(cfg),
        Err(e) => usage(format!("{}: {e}", path.display())),
    }
}

impl TrainFlags {
    pub fn resolve(&self, deterministic: bool) -> CliResult<TrainConfig> {
        self.resolve_from(self.profile.train_config(), deterministic)
    }

    /// Resolve on top of an explicit base (e.g. a checkpoint's config).
    pub fn resolve_from(&self, base: TrainConfig, deterministic: bool) -> CliResult<TrainConfig> {
        let mut cfg = match &self.config {
            Some(path) => apply_file(base, path)?,
            None => base,
        };
        macro_rules! overlay {
            ($($flag:ident => $field:ident),*) => {
                $(if let Some(v) = self.$flag { cfg.$field = v; })*
            };
        }
        overlay!(
            epochs => epochs,
            batch_size => batch_size,
            learning_rate => learning_rate,
            weight_decay => weight_decay,
            dropout => dropout_rate,
            hidden_dim => hidden_dim,
            input_dim => input_dim,
            seed => seed
        );
        if let Some(mode) = self.decay_mode {
            cfg.decay_mode = match mode {
                DecayArg::Coupled => DecayMode::Coupled,
                DecayArg::Decoupled => DecayMode::Decoupled,
            };
        }
        if self.exempt_biases {
            cfg.exempt_biases = true;
        }
        if deterministic {
            cfg.deterministic = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
