#![allow(dead_code)]

use cmstew::data::{generate_synthetic, standardize, Dataset, SyntheticSpec};
use cmstew::experiment::ArchConfig;
use cmstew::models::ModelConfig;
use cmstew::training::TrainConfig;

pub fn tiny_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        train_clips: 12,
        dev_clips: 4,
        test_clips: 4,
        clip_len: 10,
        seed,
        ..SyntheticSpec::default()
    }
}

pub fn tiny_dataset(seed: u64) -> Dataset {
    standardize(generate_synthetic(&tiny_spec(seed)).unwrap())
        .unwrap()
        .0
}

pub fn tiny_arch() -> ArchConfig {
    ArchConfig {
        gru_layers: 1,
        gru_hidden: Some(4),
        latent_dim: 4,
        transformer_layers: 1,
        heads: 2,
        ffn_hidden: 8,
        classifier_hidden: 6,
        decoder_gru_layers: 1,
        decoder_hidden: Some(4),
    }
}

pub fn source_model(ds: &Dataset) -> ModelConfig {
    tiny_arch().model(ds.task, ds.dim("strong").unwrap(), None, 0.3)
}

pub fn weak_model(ds: &Dataset) -> ModelConfig {
    tiny_arch().model(
        ds.task,
        ds.dim("weak").unwrap(),
        Some(ds.dim("strong").unwrap()),
        0.3,
    )
}

pub fn quick(seed: u64) -> TrainConfig {
    TrainConfig {
        lr: 3e-3,
        batch_size: 4,
        max_epochs: 3,
        seed,
        ..TrainConfig::default()
    }
}
