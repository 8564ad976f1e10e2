//! Minimal differentiable-computation substrate: tensors, kernels, a
//! reverse-mode tape, layers, Adam, gradient checking and checkpoint I/O.

pub mod adam;
pub mod ckpt;
pub mod gradcheck;
pub mod gradsuite;
pub mod graph;
pub mod layers;
pub mod ops;
pub mod params;
pub mod scalar;
pub mod tensor;

pub use adam::{adam_step, Adam, AdamConfig};
pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{Grads, Graph, Var};
pub use params::{Bound, ParamStore};
pub use scalar::{Real, Scalar};
pub use tensor::Tensor;
