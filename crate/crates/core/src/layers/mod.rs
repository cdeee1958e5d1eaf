//! Forward and backward passes for the standard CNN building blocks.
//!
//! Every op is a pure function of its inputs and parameters. Stateful layer
//! wrappers that cache forward results for the backward pass live in
//! [`crate::network`].

mod activation;
mod conv;
mod dense;
mod loss;
mod pool;

pub use activation::{relu_backward, relu_forward};
pub(crate) use conv::conv2d_backward_impl;
pub use conv::{conv2d_backward, conv2d_forward, conv_output_hw, Conv2d, ConvGrads};
pub use dense::{dense_backward, dense_forward, Dense, DenseGrads};
pub use loss::{softmax_xent_backward, softmax_xent_forward};
pub use pool::{maxpool_backward, maxpool_forward, MaxPool};
