//! Minimal reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every primitive applied to its [`Var`]s. Calling
//! [`Graph::backward`] on a scalar walks the tape in reverse creation order and
//! accumulates gradients into the leaves that asked for them. Only the primitives
//! the cry models and adaptation losses need are provided.

mod graph;
mod ops;
mod real;
mod tensor;


pub use graph::{Graph, Var};
pub use ops::{BnMode, BnState, NormPenalty};
pub use real::Real;
pub use tensor::Tensor;
