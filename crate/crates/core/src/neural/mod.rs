//! Minimal reverse-mode autodiff, recurrent layers, the Dirichlet policy
//! head, Adam and checkpoint I/O.

pub mod adam;
pub mod checkpoint;
pub mod dirichlet;
pub mod graph;
pub mod layers;
pub mod special;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use graph::{softplus, Gradients, Graph, ParamKey, ParamSet, Var};
pub use layers::{GruCell, Linear};
pub use tensor::Tensor;
