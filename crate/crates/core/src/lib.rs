//! Convolutional GRU video classifiers built on a small differentiable
//! kernel set, together with the trial data pipeline, a synthetic trial
//! generator and the training / robustness harness.
//!
//! The numeric core is generic over [`Scalar`]; `f32` is the training
//! default and `f64` backs gradient checks.

pub mod checks;
pub mod datapipe;
pub mod error;
pub mod models;
pub mod recurrent;
pub mod scalar;
pub mod seeds;
pub mod synthgen;
pub mod tensor_core;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor_core::{Graph, Padding, Tensor, Var};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Model32 = models::Model<f32>;
pub type Model64 = models::Model<f64>;
