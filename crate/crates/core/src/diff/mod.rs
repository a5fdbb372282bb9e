//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! An [`ExprGraph`] is built once, then evaluated any number of times against
//! a [`Binding`] that supplies values for its free leaves. Everything that is
//! trained in this crate is expressed as such a graph; gradients that appear
//! inside a model (such as the Lyapunov gradient inside the projection) are
//! built out of first-order primitives, so first-order reverse mode is enough.

mod check;
mod graph;
mod tensor;

pub use check::{check_grad, check_grad_coords, check_grad_fn};
pub use graph::{smooth_relu, smooth_relu_diff, smooth_relu_prime, smooth_relu_second, Binding, ExprGraph, NodeId, Op};
pub use tensor::{Shape, Tensor};

pub(crate) use graph::softplus;
