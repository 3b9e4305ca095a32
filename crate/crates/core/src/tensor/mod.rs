//! Minimal reverse-mode automatic differentiation over dense `f32` tensors.

mod graph;
pub mod gradcheck;
pub mod kernels;
mod value;

pub use graph::{Graph, RunningStats, Var, BN_EPS, BN_MOMENTUM};
pub use value::Tensor;

#[cfg(test)]
mod tests;
