//! The stronger-to-weaker transfer protocol: one source model and four weak
//! variants (uni-modal baseline, full objective, and both ablations) per seed.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{generate_synthetic, standardize, Dataset, SyntheticSpec};
use crate::models::{
    ClassifierConfig, DecoderConfig, EncoderConfig, ModelConfig, SourceModel, Task,
};
use crate::training::{train_source, train_weak, Ablation, MetricsSink, TrainConfig};
use crate::{Error, Result};

fn two() -> usize {
    2
}
fn hundred() -> usize {
    100
}
fn four_hundred() -> usize {
    400
}
fn three_hundred() -> usize {
    300
}

/// Architecture shared by every modality; input and decoder output widths
/// come from the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    #[serde(default = "two")]
    pub gru_layers: usize,
    /// Per direction; defaults to the modality's input width.
    #[serde(default)]
    pub gru_hidden: Option<usize>,
    #[serde(default = "hundred")]
    pub latent_dim: usize,
    #[serde(default = "two")]
    pub transformer_layers: usize,
    #[serde(default = "two")]
    pub heads: usize,
    #[serde(default = "four_hundred")]
    pub ffn_hidden: usize,
    #[serde(default = "three_hundred")]
    pub classifier_hidden: usize,
    #[serde(default = "two")]
    pub decoder_gru_layers: usize,
    /// Per direction; defaults to the strong feature width.
    #[serde(default)]
    pub decoder_hidden: Option<usize>,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            gru_layers: 2,
            gru_hidden: None,
            latent_dim: 100,
            transformer_layers: 2,
            heads: 2,
            ffn_hidden: 400,
            classifier_hidden: 300,
            decoder_gru_layers: 2,
            decoder_hidden: None,
        }
    }
}

impl ArchConfig {
    /// Reduced width used for the synthetic experiments.
    pub fn compact() -> Self {
        ArchConfig {
            latent_dim: 16,
            ffn_hidden: 64,
            classifier_hidden: 64,
            ..ArchConfig::default()
        }
    }

    /// Model for a modality of width `input_dim`; `translate_to` adds a
    /// decoder into a feature space of that width.
    pub fn model(
        &self,
        task: Task,
        input_dim: usize,
        translate_to: Option<usize>,
        dropout: f64,
    ) -> ModelConfig {
        ModelConfig {
            task,
            encoder: EncoderConfig {
                input_dim,
                gru_layers: self.gru_layers,
                gru_hidden: self.gru_hidden,
                latent_dim: self.latent_dim,
                transformer_layers: self.transformer_layers,
                heads: self.heads,
                ffn_dims: [self.ffn_hidden, self.latent_dim],
                dropout_rate: dropout,
            },
            classifier: ClassifierConfig {
                hidden: self.classifier_hidden,
                dropout_rate: dropout,
            },
            decoder: translate_to.map(|d| DecoderConfig {
                gru_layers: self.decoder_gru_layers,
                hidden: self.decoder_hidden.unwrap_or(d),
                output_dim: d,
            }),
        }
    }
}

/// Best dev selection metric of every run for one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub strong: f64,
    pub weak: f64,
    pub transfer: f64,
    pub no_lfa: f64,
    pub no_decoder: f64,
    pub seconds: f64,
}

/// Runs the five-model protocol on `ds` with `cfg.seed`.
#[allow(clippy::too_many_arguments)]
pub fn run_protocol(
    ds: &Dataset,
    strong: &str,
    weak: &str,
    arch: &ArchConfig,
    cfg: &TrainConfig,
    run_prefix: &str,
    sink: &mut dyn MetricsSink,
) -> Result<(SeedResult, SourceModel<f32>)> {
    if strong == weak {
        return Err(Error::Config(
            "strong and weak modalities must differ".into(),
        ));
    }
    let start = Instant::now();
    let (d_s, d_w) = (ds.dim(strong)?, ds.dim(weak)?);
    let rate = cfg.dropout_rate;
    let base = TrainConfig {
        alpha: 0.0,
        beta: 0.0,
        ablation: Ablation::None,
        ..cfg.clone()
    };
    let source = train_source(
        ds,
        strong,
        &arch.model(ds.task, d_s, None, rate),
        &base,
        &format!("{run_prefix}strong"),
        sink,
    )?;
    let uni = train_source(
        ds,
        weak,
        &arch.model(ds.task, d_w, None, rate),
        &base,
        &format!("{run_prefix}weak"),
        sink,
    )?;
    let weak_model = arch.model(ds.task, d_w, Some(d_s), rate);
    let mut variant = |name: &str, ablation: Ablation| -> Result<f64> {
        let c = TrainConfig {
            ablation,
            ..cfg.clone()
        };
        let out = train_weak(
            ds,
            weak,
            strong,
            &source.model,
            &weak_model,
            &c,
            &format!("{run_prefix}{name}"),
            sink,
        )?;
        Ok(out.best_metric)
    };
    let transfer = variant("transfer", Ablation::None)?;
    let no_lfa = variant("no_lfa", Ablation::NoLfa)?;
    let no_decoder = variant("no_decoder", Ablation::NoDecoder)?;
    let result = SeedResult {
        seed: cfg.seed,
        strong: source.best_metric,
        weak: uni.best_metric,
        transfer,
        no_lfa,
        no_decoder,
        seconds: start.elapsed().as_secs_f64(),
    };
    Ok((result, source.model))
}

/// Synthetic transfer experiment over several seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransferExperiment {
    pub seeds: Vec<u64>,
    pub spec: SyntheticSpec,
    pub arch: ArchConfig,
    pub train: TrainConfig,
}

impl Default for TransferExperiment {
    fn default() -> Self {
        TransferExperiment {
            seeds: (0..5).collect(),
            spec: SyntheticSpec::default(),
            arch: ArchConfig::compact(),
            train: TrainConfig {
                lr: 1e-3,
                max_epochs: 40,
                patience: 10,
                ..TrainConfig::default()
            },
        }
    }
}

impl TransferExperiment {
    /// Generates, standardises and runs the protocol for every seed. The
    /// seed drives both the data and the models.
    pub fn run(&self, sink: &mut dyn MetricsSink) -> Result<TransferSummary> {
        if self.seeds.is_empty() {
            return Err(Error::Config(
                "transfer experiment needs at least one seed".into(),
            ));
        }
        let start = Instant::now();
        let mut per_seed = Vec::with_capacity(self.seeds.len());
        for &seed in &self.seeds {
            let spec = SyntheticSpec {
                seed,
                ..self.spec.clone()
            };
            let (ds, _) = standardize(generate_synthetic(&spec)?)?;
            let cfg = TrainConfig {
                seed,
                ..self.train.clone()
            };
            let prefix = format!("seed{seed}/");
            let (r, _) = run_protocol(
                &ds,
                &spec.strong_name,
                &spec.weak_name,
                &self.arch,
                &cfg,
                &prefix,
                sink,
            )?;
            log::info!(
                "seed {seed}: strong {:.4} weak {:.4} transfer {:.4} no_lfa {:.4} no_decoder {:.4} ({:.0}s)",
                r.strong,
                r.weak,
                r.transfer,
                r.no_lfa,
                r.no_decoder,
                r.seconds
            );
            per_seed.push(r);
        }
        Ok(TransferSummary {
            per_seed,
            seconds: start.elapsed().as_secs_f64(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferSummary {
    pub per_seed: Vec<SeedResult>,
    pub seconds: f64,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n.max(1) as f64
}

impl TransferSummary {
    pub fn mean_strong(&self) -> f64 {
        mean(self.per_seed.iter().map(|r| r.strong))
    }

    pub fn mean_weak(&self) -> f64 {
        mean(self.per_seed.iter().map(|r| r.weak))
    }

    pub fn mean_transfer(&self) -> f64 {
        mean(self.per_seed.iter().map(|r| r.transfer))
    }

    pub fn mean_no_lfa(&self) -> f64 {
        mean(self.per_seed.iter().map(|r| r.no_lfa))
    }

    pub fn mean_no_decoder(&self) -> f64 {
        mean(self.per_seed.iter().map(|r| r.no_decoder))
    }

    /// Seeds where the full objective stays within `tolerance` of the baseline.
    pub fn non_degraded(&self, tolerance: f64) -> usize {
        self.per_seed
            .iter()
            .filter(|r| r.transfer >= r.weak - tolerance)
            .count()
    }

    /// Plain-text table, one row per seed plus the mean.
    pub fn table(&self) -> String {
        let mut s = format!(
            "{:>6} {:>8} {:>8} {:>9} {:>8} {:>11}\n",
            "seed", "strong", "weak", "transfer", "no_lfa", "no_decoder"
        );
        for r in &self.per_seed {
            s += &format!(
                "{:>6} {:>8.4} {:>8.4} {:>9.4} {:>8.4} {:>11.4}\n",
                r.seed, r.strong, r.weak, r.transfer, r.no_lfa, r.no_decoder
            );
        }
        s += &format!(
            "{:>6} {:>8.4} {:>8.4} {:>9.4} {:>8.4} {:>11.4}\n",
            "mean",
            self.mean_strong(),
            self.mean_weak(),
            self.mean_transfer(),
            self.mean_no_lfa(),
            self.mean_no_decoder()
        );
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Network;
    use crate::training::NullSink;

    #[test]
    fn default_arch_matches_full_model() {
        let m = ArchConfig::default().model(Task::Classification, 88, Some(20), 0.3);
        assert_eq!(m.encoder, EncoderConfig::new(88));
        assert_eq!(m.classifier, ClassifierConfig::default());
        assert_eq!(m.decoder.as_ref().unwrap().hidden, 20);
        assert!(Network::<f32>::expected_num_params(&m) > 0);
    }

    #[test]
    fn tiny_protocol_runs() {
        let exp = TransferExperiment {
            seeds: vec![3],
            spec: SyntheticSpec {
                train_clips: 8,
                dev_clips: 4,
                test_clips: 0,
                clip_len: 12,
                ..SyntheticSpec::default()
            },
            arch: ArchConfig {
                latent_dim: 4,
                ffn_hidden: 8,
                classifier_hidden: 4,
                gru_layers: 1,
                transformer_layers: 1,
                gru_hidden: Some(4),
                decoder_gru_layers: 1,
                decoder_hidden: Some(4),
                ..ArchConfig::default()
            },
            train: TrainConfig {
                lr: 1e-3,
                max_epochs: 2,
                batch_size: 4,
                ..TrainConfig::default()
            },
        };
        let mut lines = Vec::new();
        let s = exp.run(&mut lines).unwrap();
        assert_eq!(s.per_seed.len(), 1);
        // five runs, two lines per epoch
        let runs: std::collections::BTreeSet<_> = lines.iter().map(|l| l.run_id.clone()).collect();
        assert_eq!(runs.len(), 5);
        assert!(s.table().contains("mean"));
        let again = exp.run(&mut NullSink).unwrap();
        assert_eq!(again.per_seed[0].transfer, s.per_seed[0].transfer);
    }
}
