//! Training a weak modality against a frozen model of a stronger one, for
//! segment-level affect prediction.
//!
//! A stronger-modality encoder-classifier is trained first and frozen. A
//! weaker-modality model is then trained against it with a joint objective:
//! the task prediction loss, a cross-modal translation loss from the weak
//! latent sequence back into the strong feature space, and a DCCA alignment
//! loss between the two latent sequences. At inference time only the weak
//! encoder and classifier are kept.
//!
//! The crate is organised bottom-up:
//!
//! * [`numerics`]: dense tensors, a reverse-mode tape and a finite-difference checker.
//! * [`layers`]: dense, bidirectional GRU, attention and transformer encoder blocks.
//! * [`objectives`]: prediction, translation and alignment losses plus evaluation metrics.
//! * [`models`]: source and weak models, modality ranking and the checkpoint format.
//! * [`training`]: Adam, the two-stage training loops and evaluation.
//! * [`data`]: manifests, CSV clips, label shifting, windowing and a synthetic generator.
//! * [`experiment`]: the five-run transfer protocol and the synthetic seed sweep.
//! * [`verify`]: self-checks against gradient, metric and preprocessing oracles.
//! * [`cli`]: the `cmstew` command-line front end.

pub mod cli;
pub mod data;
pub mod error;
pub mod experiment;
pub mod layers;
pub mod models;
pub mod numerics;
pub mod objectives;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
