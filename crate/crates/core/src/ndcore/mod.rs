//! Dense tensors, a reverse-mode tape over the handful of operations the
//! model uses, and a central-difference gradient oracle.

mod gradcheck;
mod ops;
mod rng;
mod tape;
mod tensor;

pub use gradcheck::{finite_diff_grad, finite_diff_grad_piecewise, max_rel_error, GradCheck};
pub use ops::{
    sigmoid, silu, softplus, softplus_inv, Binary, Mode, RunningStats, Unary, BATCHNORM_EPS, BATCHNORM_MOMENTUM,
};
pub use rng::Rng;
pub use tape::{Backward, Gradients, Tape, Var};
pub use tensor::Tensor;

pub(crate) use tensor::{dims2, dims3, gemm};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NdError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("contract violation: {0}")]
    Contract(String),
}

impl NdError {
    pub(crate) fn shape_mismatch(op: &str, a: &[usize], b: &[usize]) -> Self {
        NdError::Dimension(format!("{op}: incompatible shapes {a:?} and {b:?}"))
    }
}
