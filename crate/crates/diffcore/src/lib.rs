//! Small dense linear algebra with define-by-run reverse-mode autodiff.
//!
//! Sized for multilayer perceptrons with a few thousand to a few hundred
//! thousand parameters. Gradients are available for parameters and for any
//! intermediate activation, which is what latent-space refinement needs.
//!
//! All types are generic over the element type ([`Scalar`], implemented for
//! `f32` and `f64`); the aliases below fix it to one of the two.

pub mod checkpoint;
mod error;
pub mod graph;
pub mod mlp;
pub mod optim;
mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use graph::{grad_wrt_activation, Gradients, Graph, Var};
pub use mlp::{Activation, BoundMlp, Dense, Mlp, Param};
pub use optim::{Algorithm, Optimizer};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor64 = Tensor<f64>;
pub type Graph64 = Graph<f64>;
pub type Mlp64 = Mlp<f64>;
pub type Optimizer64 = Optimizer<f64>;

pub type Tensor32 = Tensor<f32>;
pub type Graph32 = Graph<f32>;
pub type Mlp32 = Mlp<f32>;
pub type Optimizer32 = Optimizer<f32>;
