//! Minimal deterministic reverse-mode differentiation engine with exactly the
//! kernels the cell search space needs.

pub(crate) mod conv;
mod graph;
mod pool;
mod resample;
mod scalar;
#[allow(clippy::module_inception)]
mod tensor;

pub use conv::dense_taps;
pub use graph::{Graph, Var};
pub use pool::PoolKind;
pub use resample::InterpMode;
pub use scalar::{DType, Scalar};
pub use tensor::Tensor;
