//! Reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! A [`Graph`] records every operation as it is evaluated. Stored model
//! weights live in [`Parameters`] and enter a graph through
//! [`Graph::param`]; after [`Graph::backward`] their gradients are
//! collected with [`Graph::accumulate_param_grads`] and applied with
//! [`AdamState::step`].

mod adam;
mod graph;
mod kernels;
mod linalg;
mod lstm;
mod params;
mod tensor;

pub use adam::AdamState;
pub use graph::{Graph, Var};
pub use kernels::{conv_out_dim, LrnParams};
pub use lstm::{lstm_cell, LstmCellParams};
pub use params::{glorot_uniform, he_uniform, uniform, Gradients, ParamId, Parameters};
pub use tensor::Tensor;
