//! Source (stronger-modality) and weak (weaker-modality) models.

mod checkpoint;
mod config;
mod network;
mod ranking;

pub use checkpoint::{
    read_checkpoint, write_checkpoint, Checkpoint, CheckpointKind, FORMAT_VERSION,
};
pub use config::{ClassifierConfig, DecoderConfig, EncoderConfig, ModelConfig, Task};
pub use network::{
    component_rng, Classifier, Decoder, Encoder, Network, SourceModel, WeakModel, WeakOutputs,
    STREAM_CLASSIFIER, STREAM_DECODER, STREAM_ENCODER,
};
pub use ranking::{rank_modalities, MetricKind, ModalityRecord};
