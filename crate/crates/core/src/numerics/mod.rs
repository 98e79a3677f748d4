//! Dense arithmetic, reverse-mode differentiation, AdamW and a
//! finite-difference gradient checker.
//!
//! Everything is generic over [`Scalar`] so the same model code trains in
//! `f32` and is gradient-checked in `f64`.

mod adamw;
mod functional;
mod gradcheck;
mod graph;
mod scalar;
mod tensor;

pub use adamw::{adamw_step, AdamWConfig, OptimizerState};
pub use functional::{cross_entropy, gelu, layer_norm, log_softmax, softmax, softmax_rows};
pub use gradcheck::{grad_check, grad_check_with, GradCheckConfig, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use scalar::Scalar;
pub use tensor::{cast_store, ParamStore, Tensor};
