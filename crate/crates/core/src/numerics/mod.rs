//! Differentiable dense-array substrate.
//!
//! [`Tensor`] is a row-major array with an optional gradient buffer,
//! [`Tape`] records primitive operations for reverse-mode differentiation,
//! and [`gradcheck`] compares tape gradients against central differences.

mod scalar;
mod tensor;

pub mod gradcheck;
pub mod ops;
pub mod params;
pub mod tape;

pub use gradcheck::{finite_difference_check, GradCheckReport};
pub use ops::Activation;
pub use params::{ParamId, ParamStore, Parameter};
pub use scalar::Scalar;
pub use tape::{Bound, Gradients, Mode, Tape, Var};
pub use tensor::Tensor;
