//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s; calling
//! [`Graph::backward`] on a scalar node returns the gradients of every leaf
//! created with `requires_grad`. Graphs are cheap and meant to be rebuilt
//! for each optimization step.

mod gemm;
mod graph;
pub mod ops;
mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use tensor::Tensor;
