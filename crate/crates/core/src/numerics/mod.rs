//! Dense `f64` tensors and a reverse-mode tape.
//!
//! This is the whole numeric substrate of the tracker: weights, activations
//! and losses are all [`Tensor`]s, and every learnable computation is
//! recorded on a [`Tape`] so that [`Tape::backward`] can produce gradients.

pub mod gradcheck;
pub(crate) mod kernels;
mod tape;
mod tensor;

pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

/// Logistic function, stable for large `|x|`.
pub fn sigmoid(x: f64) -> f64 {
    kernels::sigmoid(x)
}
