//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Graph`] records each forward operation on a tape; [`Graph::backward`]
//! walks it in reverse and returns adjoints for every node. Parameters
//! live in a [`ParamStore`] and enter a graph as leaves via
//! [`Graph::param`]. The operation set is deliberately small: valid 1-D
//! convolution, dense layers, LeakyReLU, reshapes, gradient reversal,
//! softmax cross-entropy and a few arithmetic helpers.

mod adam;
mod graph;
mod params;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use graph::{conv_out_len, Adjoints, Graph, Var};
pub use params::{fan_in_uniform, Gradients, ParamId, ParamStore};
pub use tensor::{log_sum_exp, softmax, softmax_rows, Tensor};
