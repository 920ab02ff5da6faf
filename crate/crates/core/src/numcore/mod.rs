//! Dense and sparse matrices, a matrix-valued reverse-mode tape and the
//! finite-difference oracle used to check analytic gradients.

mod fd;
pub mod kernels;
mod mat;
mod sparse;
mod tape;

pub use fd::{finite_diff_grad, refined_derivative};
pub use kernels::{bce, normalize_rows, relu, sigmoid, softplus};
pub use mat::Mat;
pub use sparse::{spmul, SparseSym};
pub use tape::{evaluate, forward_backward, Gradients, Tape, Var};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("numeric fault: node {node} produced a non-finite value")]
    NumericFault { node: usize },
    #[error("contract violation: {0}")]
    Contract(String),
}
