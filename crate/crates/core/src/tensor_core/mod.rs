//! Minimal differentiable kernel set: convolution, pooling, dense maps,
//! activations, dropout and the classification loss, plus the gradient
//! tape and a finite-difference checker.

pub mod activation;
pub mod conv;
pub mod dense;
pub mod dropout;
pub mod gradcheck;
pub mod graph;
pub mod loss;
pub mod pool;
pub mod tensor;

pub use activation::{leaky_relu, sigmoid, tanh};
pub use conv::{conv2d, out_dim, padding_amounts, Padding};
pub use dense::dense;
pub use dropout::{dropout, DropoutReading};
pub use gradcheck::{grad_check, relative_error, GradCheckOptions, GradCheckReport};
pub use graph::{Graph, Var};
pub use loss::{softmax, softmax_cross_entropy};
pub use pool::{global_avg_pool, maxpool2d, maxpool2d_with_argmax};
pub use tensor::Tensor;
