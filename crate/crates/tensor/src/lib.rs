//! Dense tensors with tape-based reverse-mode differentiation, sized for
//! small image restoration networks on a CPU.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod ops;
pub mod real;
pub mod tensor;

pub use error::{Result, TensorError};
pub use graph::{Graph, Var};
pub use ops::activation::Activation;
pub use ops::conv::Conv2dOptions;
pub use ops::shuffle::ShuffleDirection;
pub use real::{DType, Real};
pub use tensor::{numel, Tensor};
