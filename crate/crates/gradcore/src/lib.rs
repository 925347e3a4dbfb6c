//! Reverse-mode automatic differentiation on dense `f64` tensors.
//!
//! A [`Tape`] records every operation applied to [`Var`] handles into a
//! Wengert list. [`Tape::backward`] replays the list in reverse, accumulating
//! vector-Jacobian products into per-node gradient buffers. The op set is
//! exactly what a small transformer needs: matmul, transpose, add, bias add,
//! scalar scaling, row softmax, layer norm, GELU, tanh, embedding lookup,
//! row/column slicing and concatenation, sum, and a masked row-MSE reduction.
//!
//! Everything is `f64`. There is no broadcasting beyond bias addition over
//! rows. Any non-finite value produced by a forward or backward pass is a
//! hard error rather than a silent NaN propagating into training.

mod check;
mod gemm;
mod ops;
mod tape;
mod tensor;

pub use check::{grad_check, grad_check_many};
pub use ops::{concat_cols, concat_rows, gelu_scalar, interleave_rows};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

/// Errors raised by tape construction, op application, or backward passes.
#[derive(Debug, thiserror::Error)]
pub enum GradError {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: non-finite value in {what}")]
    NonFinite { op: &'static str, what: &'static str },
    #[error("{op}: index {index} out of range (bound {bound})")]
    IndexRange {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("{op}: {msg}")]
    Contract { op: &'static str, msg: String },
}

impl GradError {
    pub(crate) fn contract(op: &'static str, msg: impl Into<String>) -> Self {
        GradError::Contract {
            op,
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, GradError>;
