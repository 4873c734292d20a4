//! Learnable-parameter storage, reverse-mode autodiff and the optimizer.

pub mod graph;
pub mod optim;
pub mod params;

pub use graph::{Graph, Mat, Var};
pub use optim::AdamW;
pub use params::ParamSet;
