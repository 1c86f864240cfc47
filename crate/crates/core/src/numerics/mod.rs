//! Dense `f64` tensors, a small reverse-mode tape over a fixed primitive set,
//! the three training losses, and Adam.

mod graph;
pub mod kernels;
mod optim;
mod tensor;

use thiserror::Error;

pub use graph::{eval, Eager, Gradients, Graph, Op, Tape, Var};
pub use optim::{adam_step, Adam, AdamConfig, AdamState, BoundParams, ParamId, ParamStore};
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("shape {shape:?} does not match data length {len}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: non-finite value produced")]
    NonFinite { op: &'static str },
    #[error("masked_softmax: row {row} has no permitted key")]
    FullyMaskedRow { row: usize },
    #[error("{op}: row {row} has (near-)zero norm")]
    ZeroNorm { op: &'static str, row: usize },
    #[error("index {index} out of range (bound {bound})")]
    IndexOutOfRange { index: usize, bound: usize },
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("{op}: empty input")]
    Empty { op: &'static str },
    #[error("{op}: wrong number of inputs")]
    Arity { op: &'static str },
}

impl NumericsError {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        NumericsError::ShapeMismatch {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}

/// Eager convenience wrappers matching the op contracts one-to-one.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, NumericsError> {
    eval(&Op::MatMul, &[a, b])
}

pub fn masked_softmax(scores: &Tensor, mask: &[bool]) -> Result<Tensor, NumericsError> {
    eval(&Op::MaskedSoftmax(std::sync::Arc::new(mask.to_vec())), &[scores])
}

pub fn l2_normalize(x: &Tensor) -> Result<Tensor, NumericsError> {
    eval(&Op::L2Normalize, &[x])
}

pub fn cosine_distance(a: &Tensor, b: &Tensor) -> Result<f64, NumericsError> {
    kernels::cosine_distance(a, b)
}

pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64, NumericsError> {
    kernels::mse(a, b)
}

pub fn cross_entropy(logits: &Tensor, targets: &[usize]) -> Result<f64, NumericsError> {
    kernels::cross_entropy(logits, targets)
}

#[cfg(test)]
mod tests;
