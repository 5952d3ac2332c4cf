//! Run configuration files (TOML): a `[model]` table naming a built-in
//! profile plus field overrides, and a `[train]` table.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sit_core::model::SiTConfig;
use sit_core::nn::OptimizerKind;
use sit_core::train::{LossKind, SamplerKind, TrainConfig};

use crate::error::{read, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSection {
    #[serde(default = "default_profile")]
    pub profile: String,
    #[serde(flatten)]
    pub overrides: BTreeMap<String, toml::Value>,
}

fn default_profile() -> String {
    "sit-tiny-ico".into()
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection { profile: default_profile(), overrides: BTreeMap::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub optimizer: String,
    pub lr: f64,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub iterations: usize,
    /// Rotation augmentation angle cap in degrees; absent disables it.
    pub augmentation: Option<f64>,
    pub sampler: String,
    pub seed: u64,
    pub loss: String,
    pub mask_ratio: f64,
    pub checkpoint_every: Option<usize>,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            optimizer: "adam".into(),
            lr: 1e-4,
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 8,
            iterations: 100,
            augmentation: None,
            sampler: "uniform".into(),
            seed: 0,
            loss: "mse".into(),
            mask_ratio: 0.5,
            checkpoint_every: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
}

fn value_text(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

impl RunConfig {
    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(1, |s| text[..s.start].lines().count().max(1));
            Error::parse(path, line, e.message().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(path, &read(path)?)
    }

    pub fn model_config(&self) -> Result<SiTConfig> {
        let mut c = SiTConfig::profile(&self.model.profile)?;
        for (k, v) in &self.model.overrides {
            c.set(k, &value_text(v))?;
        }
        Ok(c)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = &self.train;
        let optimizer = match t.optimizer.as_str() {
            "sgd" => OptimizerKind::Sgd { lr: t.lr, momentum: t.momentum },
            "adam" => OptimizerKind::Adam { lr: t.lr, beta1: t.beta1, beta2: t.beta2, eps: t.eps },
            other => return Err(sit_core::Error::Config(format!("unknown optimizer {other:?} (sgd | adam)")).into()),
        };
        let loss = match t.loss.as_str() {
            "mse" => LossKind::Mse,
            "cross-entropy" => LossKind::CrossEntropy,
            "mpp" => LossKind::Mpp(t.mask_ratio),
            other => return Err(sit_core::Error::Config(format!("unknown loss {other:?} (mse | cross-entropy | mpp)")).into()),
        };
        let cfg = TrainConfig {
            optimizer,
            batch_size: t.batch_size,
            iterations: t.iterations,
            augmentation: t.augmentation,
            sampler: SamplerKind::parse(&t.sampler)?,
            seed: t.seed,
            loss,
            checkpoint_every: t.checkpoint_every,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_with_overrides() {
        let text = "[model]\nprofile = \"sit-tiny-ico\"\ndim = 64\nheads = 2\nhead = \"classification:3\"\n\n[train]\nlr = 0.001\noptimizer = \"sgd\"\n";
        let c = RunConfig::parse(Path::new("c.toml"), text).unwrap();
        let m = c.model_config().unwrap();
        assert_eq!((m.dim, m.heads, m.layers), (64, 2, 12));
        assert_eq!(m.head, sit_core::model::HeadKind::Classification(3));
        assert_eq!(c.train_config().unwrap().optimizer, OptimizerKind::Sgd { lr: 0.001, momentum: 0.9 });
    }

    #[test]
    fn unknown_keys_are_errors() {
        assert!(RunConfig::parse(Path::new("c"), "[train]\nlearning_rate = 1\n").is_err());
        let c = RunConfig::parse(Path::new("c"), "[model]\nwidth = 3\n").unwrap();
        assert!(c.model_config().is_err());
        let c = RunConfig::parse(Path::new("c"), "[train]\nloss = \"l1\"\n").unwrap();
        assert!(c.train_config().is_err());
    }

    #[test]
    fn defaults() {
        let c = RunConfig::parse(Path::new("c"), "").unwrap();
        assert_eq!(c.model_config().unwrap(), SiTConfig::tiny_ico(4));
        assert_eq!(c.train_config().unwrap().batch_size, 8);
    }
}
