//! Reverse-mode differentiation over flat, shape-carrying arrays.
//!
//! Only the primitives a GPT-style decoder and its losses need are provided.
//! Training runs in `f32`; gradient checks run the same code in `f64`.

mod check;
mod scalar;
mod tape;
mod tensor;

pub use check::{finite_difference_check, relative_error, GradCheckReport, ParamCheck, RELATIVE_ERROR_FLOOR};
pub use scalar::Float;
pub(crate) use scalar::{gemm, View, ViewMut};
pub(crate) use tape::{gelu_scalar, log_sum_exp};
pub use tape::{NodeId, Tape, TensorNode, IGNORE_INDEX};
pub use tensor::Tensor;
