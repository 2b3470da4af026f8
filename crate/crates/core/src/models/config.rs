use serde::{Deserialize, Serialize};

use crate::numerics::Activation;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classification,
    Regression,
}

impl Task {
    pub fn output_activation(self) -> Activation {
        match self {
            Task::Classification => Activation::Sigmoid,
            Task::Regression => Activation::Tanh,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Classification => "classification",
            Task::Regression => "regression",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "classification" => Ok(Task::Classification),
            "regression" => Ok(Task::Regression),
            other => Err(Error::Config(format!("unknown task {other}"))),
        }
    }
}

/// Bi-GRU front end, time-shared projection to the latent width, then a
/// stack of transformer encoder layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub input_dim: usize,
    #[serde(default = "two")]
    pub gru_layers: usize,
    /// Hidden units per direction; defaults to the input width.
    #[serde(default)]
    pub gru_hidden: Option<usize>,
    #[serde(default = "hundred")]
    pub latent_dim: usize,
    #[serde(default = "two")]
    pub transformer_layers: usize,
    #[serde(default = "two")]
    pub heads: usize,
    #[serde(default = "ffn_dims")]
    pub ffn_dims: [usize; 2],
    #[serde(default = "default_dropout")]
    pub dropout_rate: f64,
}

fn two() -> usize {
    2
}
fn hundred() -> usize {
    100
}
fn ffn_dims() -> [usize; 2] {
    [400, 100]
}
fn default_dropout() -> f64 {
    0.3
}
fn classifier_hidden() -> usize {
    300
}

impl EncoderConfig {
    pub fn new(input_dim: usize) -> Self {
        EncoderConfig {
            input_dim,
            gru_layers: 2,
            gru_hidden: None,
            latent_dim: 100,
            transformer_layers: 2,
            heads: 2,
            ffn_dims: ffn_dims(),
            dropout_rate: default_dropout(),
        }
    }

    pub fn hidden(&self) -> usize {
        self.gru_hidden.unwrap_or(self.input_dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Config("encoder input_dim must be positive".into()));
        }
        if !(1..=2).contains(&self.gru_layers) {
            return Err(Error::Config("encoder gru_layers must be 1 or 2".into()));
        }
        if self.latent_dim == 0 || !self.latent_dim.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "latent_dim {} must be even and positive",
                self.latent_dim
            )));
        }
        if self.heads == 0 || !self.latent_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "{} heads do not divide latent_dim {}",
                self.heads, self.latent_dim
            )));
        }
        if self.ffn_dims[1] != self.latent_dim {
            return Err(Error::Config(format!(
                "second feed-forward width {} must equal latent_dim {} for the residual add",
                self.ffn_dims[1], self.latent_dim
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    #[serde(default = "classifier_hidden")]
    pub hidden: usize,
    #[serde(default = "default_dropout")]
    pub dropout_rate: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            hidden: classifier_hidden(),
            dropout_rate: default_dropout(),
        }
    }
}

/// Bi-GRU stack followed by a linear projection into the strong feature space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderConfig {
    #[serde(default = "two")]
    pub gru_layers: usize,
    pub hidden: usize,
    pub output_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub task: Task,
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub classifier: ClassifierConfig,
    #[serde(default)]
    pub decoder: Option<DecoderConfig>,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.classifier.hidden == 0 || !(0.0..1.0).contains(&self.classifier.dropout_rate) {
            return Err(Error::Config("invalid classifier configuration".into()));
        }
        if let Some(d) = &self.decoder {
            if !(1..=2).contains(&d.gru_layers) || d.hidden == 0 || d.output_dim == 0 {
                return Err(Error::Config("invalid decoder configuration".into()));
            }
        }
        Ok(())
    }
}
