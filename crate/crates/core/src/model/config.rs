use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        })
    }
}

/// Hyperparameters shared by every training loop.
///
/// `Default` is the best-run classifier setting: 5 epochs, batch 32,
/// learning rate 3e-5. The LM presets below use 30 epochs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Fraction of maskable positions corrupted per sentence (MLM stages).
    pub mask_prob: f64,
    /// Layers unfrozen per epoch, top-down (classifier stage). 0 trains
    /// everything from the first epoch.
    pub unfreeze_per_epoch: usize,
    /// Layer `l` from the top trains at `learning_rate / lr_decay_per_layer^l`.
    pub lr_decay_per_layer: f64,
    pub optimizer: OptimizerKind,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
    /// Run the classifier stage on a model that skipped LM pretraining.
    pub skip_lm_stages: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5,
            batch_size: 32,
            learning_rate: 3e-5,
            seed: 0,
            mask_prob: 0.15,
            unfreeze_per_epoch: 1,
            lr_decay_per_layer: 2.6,
            optimizer: OptimizerKind::Sgd,
            clip_norm: 1.0,
            skip_lm_stages: false,
        }
    }
}

impl TrainConfig {
    /// Stage 1: masked-LM pretraining.
    pub fn lm_pretrain() -> Self {
        TrainConfig {
            epochs: 30,
            learning_rate: 1e-4,
            ..Default::default()
        }
    }

    /// Stage 2: masked-LM fine-tuning on task text, lower rate than stage 1.
    pub fn lm_finetune() -> Self {
        TrainConfig {
            epochs: 30,
            learning_rate: 2e-6,
            ..Default::default()
        }
    }

    /// Stage 3: classifier fine-tuning.
    pub fn classifier() -> Self {
        Self::default()
    }

    /// Hashed-feature logistic regression.
    pub fn linear() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 8,
            learning_rate: 0.5,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.batch_size == 0 {
            return fail("batch_size must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return fail("learning_rate must be positive");
        }
        if !(self.mask_prob > 0.0 && self.mask_prob < 1.0) {
            return fail("mask_prob must lie strictly between 0 and 1");
        }
        if !(self.lr_decay_per_layer.is_finite() && self.lr_decay_per_layer >= 1.0) {
            return fail("lr_decay_per_layer must be >= 1");
        }
        if !(self.clip_norm.is_finite() && self.clip_norm >= 0.0) {
            return fail("clip_norm must be >= 0");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for cfg in [
            TrainConfig::default(),
            TrainConfig::lm_pretrain(),
            TrainConfig::lm_finetune(),
            TrainConfig::linear(),
        ] {
            cfg.validate().unwrap();
        }
        assert!(TrainConfig::lm_finetune().learning_rate < TrainConfig::lm_pretrain().learning_rate);
        let d = TrainConfig::default();
        assert_eq!((d.epochs, d.batch_size, d.learning_rate), (5, 32, 3e-5));
        assert_eq!(TrainConfig::lm_finetune().epochs, 30);
    }

    #[test]
    fn rejects_bad_values() {
        let bad = [
            TrainConfig {
                mask_prob: 1.0,
                ..Default::default()
            },
            TrainConfig {
                mask_prob: 0.0,
                ..Default::default()
            },
            TrainConfig {
                batch_size: 0,
                ..Default::default()
            },
            TrainConfig {
                learning_rate: -1.0,
                ..Default::default()
            },
            TrainConfig {
                lr_decay_per_layer: 0.5,
                ..Default::default()
            },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let cfg: TrainConfig = toml::from_str("epochs = 3\noptimizer = \"adam\"").unwrap();
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.optimizer, OptimizerKind::Adam);
        assert_eq!(cfg.batch_size, 32);
    }
}
