//! Small reverse-mode automatic differentiation over dense 2-D tensors,
//! with an Adam optimizer and a named parameter store.

mod adam;
mod tape;
mod tensor;

pub use adam::{clip_grad_norm, Adam, AdamConfig, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("index {index} out of range {len} in {op}")]
    Index {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NotScalar((usize, usize)),
    #[error("backward called before the loss was recorded")]
    NoForward,
}

#[cfg(test)]
mod tests;
