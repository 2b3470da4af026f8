use serde::{Deserialize, Serialize};

use crate::objectives::{DccaConfig, LossWeights};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    None,
    /// No latent alignment: α forced to 0.
    NoLfa,
    /// No decoder: β forced to 0 and decoder parameters omitted.
    NoDecoder,
}

impl Ablation {
    pub fn parse(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "none" => Ok(Ablation::None),
            "no_lfa" => Ok(Ablation::NoLfa),
            "no_decoder" => Ok(Ablation::NoDecoder),
            other => Err(Error::Config(format!("unknown ablation {other}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::NoLfa => "no_lfa",
            Ablation::NoDecoder => "no_decoder",
        }
    }
}

fn default_lr() -> f64 {
    1e-4
}
fn default_batch() -> usize {
    32
}
fn default_epochs() -> usize {
    100
}
fn default_patience() -> usize {
    20
}
fn one() -> f64 {
    1.0
}
fn default_dropout() -> f64 {
    0.3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "one")]
    pub alpha: f64,
    #[serde(default = "one")]
    pub beta: f64,
    #[serde(default)]
    pub dcca: DccaConfig,
    /// Applied to every dropout site of the models being trained.
    #[serde(default = "default_dropout")]
    pub dropout_rate: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub ablation: Ablation,
    /// Leaves all-zero strong frames (failed feature extraction) out of `L_t`.
    #[serde(default)]
    pub mask_zero_frames: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: default_lr(),
            batch_size: default_batch(),
            max_epochs: default_epochs(),
            patience: default_patience(),
            alpha: 1.0,
            beta: 1.0,
            dcca: DccaConfig::default(),
            dropout_rate: default_dropout(),
            seed: 0,
            ablation: Ablation::None,
            mask_zero_frames: false,
        }
    }
}

impl TrainConfig {
    /// Loss weights after the ablation switch is applied.
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            alpha: if self.ablation == Ablation::NoLfa {
                0.0
            } else {
                self.alpha
            },
            beta: if self.ablation == Ablation::NoDecoder {
                0.0
            } else {
                self.beta
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be positive",
                self.lr
            )));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config(
                "batch_size and max_epochs must be positive".into(),
            ));
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if self.weights().alpha > 0.0 {
            self.dcca.validate_for_training()?;
        } else {
            self.dcca.validate()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ablations_zero_their_weight() {
        let mut c = TrainConfig::default();
        assert_eq!(
            c.weights(),
            LossWeights {
                alpha: 1.0,
                beta: 1.0
            }
        );
        c.ablation = Ablation::NoLfa;
        assert_eq!(c.weights().alpha, 0.0);
        c.ablation = Ablation::parse("no-decoder").unwrap();
        assert_eq!(
            c.weights(),
            LossWeights {
                alpha: 1.0,
                beta: 0.0
            }
        );
    }

    #[test]
    fn json_defaults_and_unknown_keys() {
        let c: TrainConfig = serde_json::from_str(r#"{"lr": 0.001}"#).unwrap();
        assert_eq!(c.batch_size, 32);
        assert_eq!(c.patience, 20);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"lr": 0.001, "nope": 1}"#).is_err());
    }
}
