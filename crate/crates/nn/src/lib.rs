//! Float64 reverse-mode autodiff and the tomography reconstructors built on
//! it: the quantum-aware transformer, the dense baseline, and their losses.

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod loss;
pub mod model;
pub mod optim;
pub mod params;
pub mod tensor;

pub use error::{NnError, Result};
pub use graph::{Gradients, Graph, Var};
pub use params::{ParamId, ParamSet, Parameter};
pub use tensor::Tensor;
