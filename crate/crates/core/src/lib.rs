//! Structural pruning of small decoder-only transformers.
//!
//! Each attention and FFN sublayer is pruned progressively with a
//! second-order saliency, producing a ladder of nested structures at several
//! sparsities. The ladders of all sublayers form a supernet stored on disk,
//! and an evolutionary search picks one structure per sublayer under a fixed
//! overall sparsity. The loop repeats with finer ladders around the winner.

pub mod calibration;
pub mod error;
mod io_util;
pub mod local_pruner;
pub mod model;
pub mod orchestrator;
pub mod scalar;
pub mod search;
pub mod supernet;
pub mod tensor;
pub mod toy;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix32 = tensor::Matrix<f32>;
pub type Matrix64 = tensor::Matrix<f64>;
pub type Model32 = model::Model<f32>;
pub type Model64 = model::Model<f64>;
pub type Weights32 = model::TransformerWeights<f32>;
pub type Weights64 = model::TransformerWeights<f64>;
pub type Evaluator64<'a> = search::Evaluator<'a, f64>;
