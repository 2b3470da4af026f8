//! Sequence-model building blocks.
//!
//! Layers are descriptors that hold [`ParamId`](crate::numerics::ParamId)s
//! into a model's parameter store; the same descriptor therefore runs at
//! `f32` for training and at `f64` for gradient verification.
//!
//! Batches of clips travel as one clip-major matrix: row `b·N + t` holds
//! time step `t` of clip `b` (see [`Layout`]).

mod attention;
mod dense;
mod gru;

pub use attention::{TransformerConfig, TransformerEncoderLayer};
pub use dense::DenseLayer;
pub use gru::{BiGruStack, GruDirection};

pub use crate::numerics::ops::sinusoidal_positions;

use crate::{Error, Result};

/// Shape of a clip-major batch: `clips` sequences of `steps` rows each.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub clips: usize,
    pub steps: usize,
}

impl Layout {
    pub fn new(clips: usize, steps: usize) -> Result<Self> {
        if steps == 0 || clips == 0 {
            return Err(Error::EmptySequence("layout"));
        }
        Ok(Layout { clips, steps })
    }

    pub fn single(steps: usize) -> Result<Self> {
        Layout::new(1, steps)
    }

    pub fn rows(&self) -> usize {
        self.clips * self.steps
    }

    /// Row order that turns a clip-major matrix into a time-major one.
    pub(crate) fn to_time_major(self) -> Vec<usize> {
        let mut idx = Vec::with_capacity(self.rows());
        for t in 0..self.steps {
            for b in 0..self.clips {
                idx.push(b * self.steps + t);
            }
        }
        idx
    }

    /// Inverse of [`Layout::to_time_major`].
    pub(crate) fn to_clip_major(self) -> Vec<usize> {
        let mut idx = Vec::with_capacity(self.rows());
        for b in 0..self.clips {
            for t in 0..self.steps {
                idx.push(t * self.clips + b);
            }
        }
        idx
    }
}

/// Uniform initialisation bound `1/√fan_in`.
pub(crate) fn init_bound(fan_in: usize) -> f64 {
    1.0 / (fan_in.max(1) as f64).sqrt()
}
