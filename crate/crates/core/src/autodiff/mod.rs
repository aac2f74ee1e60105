//! Minimal reverse-mode automatic differentiation over dense vectors and
//! matrices.
//!
//! A [`Tape`] records each forward op together with its parents; calling
//! [`Tape::backward`] on a scalar node walks the record in reverse and
//! accumulates gradients by the chain rule. Tapes are cheap and meant to be
//! rebuilt for every forward pass, which keeps recurrent unrolls free of
//! stale state.
//!
//! ```
//! use cmq_core::autodiff::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.param(Tensor::scalar(3.0));
//! let y = tape.param(Tensor::scalar(4.0));
//! let xy = tape.mul(x, y).unwrap();
//! let grads = tape.backward(xy).unwrap();
//! assert_eq!(grads.get(x).unwrap().item(), 4.0);
//! assert_eq!(grads.get(y).unwrap().item(), 3.0);
//! ```

mod check;
mod tape;
mod tensor;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use check::{grad_check, GradCheckReport};
pub use tape::{Gradients, NodeId, Tape};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("{op}: empty input")]
    Empty { op: &'static str },
    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("non-finite function value when perturbing {coordinate}")]
    NonFinite { coordinate: String },
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
    #[error("{0}")]
    Other(String),
}

/// Elementwise nonlinearities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Tanh,
}
