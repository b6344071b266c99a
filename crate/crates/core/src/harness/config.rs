use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::data::SynthParams;
use crate::error::{Error, Result};
use crate::net::NetworkSpec;
use crate::optim::{self, TrainConfig};

pub const SEED_ENV: &str = "MIXREG_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic(SynthParams),
    Idx {
        source_images: PathBuf,
        source_labels: PathBuf,
        target_images: PathBuf,
        target_labels: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    /// Keep only this many target training examples per class.
    #[serde(default)]
    pub target_train_per_class: Option<usize>,
}

fn default_val_fraction() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub hidden: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    pub lr: f64,
    #[serde(default = "optim::default_beta1")]
    pub beta1: f64,
    #[serde(default = "optim::default_beta2")]
    pub beta2: f64,
    #[serde(default = "optim::default_adam_eps")]
    pub adam_eps: f64,
    #[serde(default = "optim::default_warmup")]
    pub warmup_fraction: f64,
    #[serde(default = "optim::default_batch_size")]
    pub batch_size: usize,
    /// Every entry is a separate run with that many epochs.
    pub epoch_grid: Vec<usize>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default = "default_pretrain_dropout")]
    pub dropout: f64,
    #[serde(default = "default_pretrain_decay")]
    pub weight_decay: f64,
}

impl PretrainConfig {
    pub fn train_config(&self, epochs: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            adam_eps: self.adam_eps,
            warmup_fraction: self.warmup_fraction,
            batch_size: self.batch_size,
            epochs,
            seed,
        }
    }
}

fn default_repeats() -> usize {
    1
}
fn default_pretrain_dropout() -> f64 {
    0.1
}
fn default_pretrain_decay() -> f64 {
    0.01
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Technique {
    /// Mixout toward the pretrained parameters.
    Mixout,
    /// Inverted dropout, i.e. mixout toward the origin.
    Dropout,
}

impl Technique {
    pub fn name(self) -> &'static str {
        match self {
            Technique::Mixout => "mixout",
            Technique::Dropout => "dropout",
        }
    }
}

impl fmt::Display for Technique {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Technique {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mixout" => Ok(Technique::Mixout),
            "dropout" => Ok(Technique::Dropout),
            other => Err(Error::config(format!("unknown technique {other:?}"))),
        }
    }
}

/// One point of a sweep: a technique at a drop probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub technique: Technique,
    pub p: f64,
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.technique, self.p)
    }
}

impl FromStr for Cell {
    type Err = Error;

    /// Parses `technique:p`, e.g. `mixout:0.7`.
    fn from_str(s: &str) -> Result<Self> {
        let (t, p) = s
            .split_once(':')
            .ok_or_else(|| Error::config(format!("policy cell {s:?} is not technique:p")))?;
        let p: f64 = p
            .parse()
            .map_err(|_| Error::config(format!("bad probability in policy cell {s:?}")))?;
        check_p(p)?;
        Ok(Cell {
            technique: t.parse()?,
            p,
        })
    }
}

fn check_p(p: f64) -> Result<()> {
    if (0.0..1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::config(format!(
            "drop probability {p} outside [0, 1)"
        )))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub techniques: Vec<Technique>,
    pub p_grid: Vec<f64>,
    pub restarts: usize,
    /// A run is degenerate when its dev score is at most the validation
    /// majority-class share plus this margin.
    #[serde(default = "default_margin")]
    pub degenerate_margin: f64,
    /// Record wall-clock seconds per step. Off by default so that output
    /// files are reproducible byte for byte.
    #[serde(default)]
    pub timing: bool,
    /// Re-draw the output layer before finetuning and anchor it to its own init.
    #[serde(default)]
    pub reinit_head: bool,
}

fn default_margin() -> f64 {
    0.02
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub data: DataConfig,
    pub network: NetworkConfig,
    pub pretrain: PretrainConfig,
    pub finetune: TrainConfig,
    pub sweep: SweepConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and applies environment overrides.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::format(path, msg),
            other => other,
        })?;
        cfg.apply_seed_override(std::env::var(SEED_ENV).ok().as_deref())?;
        Ok(cfg)
    }

    pub fn apply_seed_override(&mut self, value: Option<&str>) -> Result<()> {
        if let Some(v) = value {
            self.seed = v.trim().parse().map_err(|_| {
                Error::config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))
            })?;
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if let DataSource::Synthetic(params) = &self.data.source {
            params.validate()?;
        }
        if !(self.data.val_fraction > 0.0 && self.data.val_fraction < 1.0) {
            return Err(Error::config("validation fraction must lie in (0, 1)"));
        }
        if self.data.target_train_per_class == Some(0) {
            return Err(Error::config(
                "target subsample must keep at least one example per class",
            ));
        }
        if self.network.hidden.contains(&0) {
            return Err(Error::config("hidden widths must be >= 1"));
        }
        self.pretrain.train_config(1, self.seed).validate()?;
        if self.pretrain.epoch_grid.is_empty() || self.pretrain.epoch_grid.contains(&0) {
            return Err(Error::config(
                "pretraining epoch grid must be non-empty and positive",
            ));
        }
        if self.pretrain.repeats == 0 {
            return Err(Error::config("pretraining repeats must be >= 1"));
        }
        check_p(self.pretrain.dropout)?;
        if !(self.pretrain.weight_decay >= 0.0) {
            return Err(Error::config("weight decay must be >= 0"));
        }
        self.finetune.validate()?;
        if self.sweep.restarts == 0 {
            return Err(Error::config("restart count must be >= 1"));
        }
        if self.sweep.techniques.is_empty() || self.sweep.p_grid.is_empty() {
            return Err(Error::config(
                "sweep needs at least one technique and one p",
            ));
        }
        for &p in &self.sweep.p_grid {
            check_p(p)?;
        }
        Ok(())
    }

    pub fn network_spec(&self, input_dim: usize, classes: usize) -> NetworkSpec {
        NetworkSpec::mlp(input_dim, &self.network.hidden, classes)
    }

    pub fn cells(&self) -> Vec<Cell> {
        self.sweep
            .techniques
            .iter()
            .flat_map(|&technique| {
                self.sweep
                    .p_grid
                    .iter()
                    .map(move |&p| Cell { technique, p })
            })
            .collect()
    }
}
