//! Training losses and evaluation metrics.

mod dcca;
mod losses;
mod metrics;

pub use dcca::{
    alignment_loss, alignment_loss_on_tape, dcca_correlation, dcca_with_grad, DccaConfig,
    DccaOutput,
};
pub use losses::{
    bce_loss, bce_on_tape, mae_on_tape, mae_translation_loss, masked_mae_on_tape,
    masked_mae_translation_loss, mse_loss, mse_on_tape, total_loss,
    total_on_tape, LossWeights,
};
pub use metrics::{binary_accuracy, ccc, pearson, weighted_f1};
