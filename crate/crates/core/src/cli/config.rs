use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attributes::tokenizer::DEFAULT_VOCAB_CAP;
use crate::datapipe::FilterConfig;
use crate::encoders::ModelConfig;
use crate::error::{Error, Result};
use crate::objectives::{Mode, DEFAULT_BETA, IAM_SMOOTHING, MASK_PROB};
use crate::retrieval::DEFAULT_SHORTLIST;

pub const SEED_ENV: &str = "APTM_SEED";

/// Everything that shapes a run. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub batch_size: usize,
    pub epochs: usize,
    pub peak_lr: f64,
    pub floor_lr: f64,
    pub warmup_steps: u64,
    /// Replaces `warmup_steps` with this many epochs when set.
    pub warmup_epochs: Option<u64>,
    pub weight_decay: f64,
    /// Step-size multiplier for the learnable temperature.
    pub temperature_lr_scale: f64,
    pub grad_clip: f64,
    pub beta: f64,
    pub mask_prob: f64,
    pub smoothing: f64,
    pub shortlist: usize,
    pub vocab_cap: usize,
    /// Stops after this many epochs without changing the schedule.
    pub stop_after_epoch: Option<usize>,
    pub model: ModelConfig,
    pub filter: FilterConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            batch_size: 8,
            epochs: 30,
            peak_lr: 1e-4,
            floor_lr: 1e-5,
            warmup_steps: 2600,
            warmup_epochs: None,
            weight_decay: 0.01,
            temperature_lr_scale: 1.0,
            grad_clip: 1.0,
            beta: DEFAULT_BETA,
            mask_prob: MASK_PROB,
            smoothing: IAM_SMOOTHING,
            shortlist: DEFAULT_SHORTLIST,
            vocab_cap: DEFAULT_VOCAB_CAP,
            stop_after_epoch: None,
            model: ModelConfig::default(),
            filter: FilterConfig::default(),
        }
    }
}

impl RunConfig {
    /// Defaults for a mode; finetuning warms up over three epochs.
    pub fn for_mode(mode: Mode) -> Self {
        match mode {
            Mode::Pretrain => Self::default(),
            Mode::Finetune => Self {
                warmup_epochs: Some(3),
                ..Self::default()
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.peak_lr,
            self.floor_lr,
            self.weight_decay,
            self.temperature_lr_scale,
            self.grad_clip,
            self.beta,
            self.mask_prob,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("numeric settings must be finite"));
        }
        if !(self.floor_lr > 0.0 && self.floor_lr <= self.peak_lr) {
            return Err(Error::config(format!(
                "need 0 < floor_lr <= peak_lr, got {} and {}",
                self.floor_lr, self.peak_lr
            )));
        }
        if self.beta < 0.0 {
            return Err(Error::config("beta must be non-negative"));
        }
        if !(self.mask_prob > 0.0 && self.mask_prob <= 1.0) {
            return Err(Error::config("mask_prob must be in (0, 1]"));
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            return Err(Error::config("smoothing must be in [0, 1)"));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.shortlist == 0 {
            return Err(Error::config("batch_size, epochs and shortlist must be positive"));
        }
        if self.weight_decay < 0.0 || self.grad_clip < 0.0 || self.temperature_lr_scale < 0.0 {
            return Err(Error::config(
                "weight_decay, grad_clip and temperature_lr_scale must be non-negative",
            ));
        }
        self.model.validate()
    }

    pub fn warmup_for(&self, steps_per_epoch: u64) -> u64 {
        self.warmup_epochs.map_or(self.warmup_steps, |e| e * steps_per_epoch)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    /// Dotted keys accepted by [`RunConfig::apply_overrides`].
    pub fn keys() -> Vec<String> {
        let value = toml::Value::try_from(Self::default()).expect("config serializes");
        let mut keys = vec!["warmup_epochs".to_string(), "stop_after_epoch".to_string()];
        collect_keys(&value, "", &mut keys);
        keys.sort();
        keys.dedup();
        keys
    }

    /// Applies `key=value` pairs, where keys are dotted paths such as
    /// `model.image.embed_dim`. Values are parsed as TOML, falling back to strings.
    pub fn apply_overrides<S: AsRef<str>>(&self, pairs: &[S]) -> Result<Self> {
        let mut value = toml::Value::try_from(self).map_err(|e| Error::config(e.to_string()))?;
        for pair in pairs {
            let pair = pair.as_ref();
            let (key, raw) = pair
                .split_once('=')
                .ok_or_else(|| Error::config(format!("override '{pair}' is not key=value")))?;
            set_path(&mut value, key.trim(), parse_value(raw.trim()))?;
        }
        value.try_into().map_err(|e: toml::de::Error| Error::config(e.to_string()))
    }
}

fn collect_keys(value: &toml::Value, prefix: &str, out: &mut Vec<String>) {
    if let toml::Value::Table(t) = value {
        for (k, v) in t {
            let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            if v.is_table() {
                collect_keys(v, &key, out);
            } else {
                out.push(key);
            }
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(root: &mut toml::Value, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| Error::config("empty override key"))?;
    let mut node = root;
    for part in parts {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::config(format!("'{key}' does not name a config field")))?;
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| Error::config(format!("'{key}' does not name a config field")))?;
    table.insert(last.to_string(), value);
    Ok(())
}

/// `--seed` wins over `APTM_SEED`, which wins over the file.
pub fn resolve_seed(config_seed: u64, flag: Option<u64>) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::config(format!("{SEED_ENV}='{v}' is not an unsigned integer"))),
        Err(_) => Ok(config_seed),
    }
}
