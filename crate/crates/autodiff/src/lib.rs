//! Dense `f64` tensors with define-by-run reverse-mode differentiation.
//!
//! Every operation returns a new [`Tensor`]; when any input requires a
//! gradient the result keeps a link to its inputs, and [`Tensor::backward`]
//! walks those links once in reverse topological order.

mod error;
mod gemm;
mod gradcheck;
pub mod io;
mod ops;
mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, grad_check_many};
pub use tensor::{NoGradGuard, Tensor};
