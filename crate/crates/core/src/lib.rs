//! A small CPU deep-learning engine for convolutional networks with a patch
//! reordering layer, plus the data pipeline, training loop and analysis tools
//! used to study it on transformed MNIST.

pub mod analysis;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod network;
pub mod reorder;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, ErrorClass, Result};
pub use network::{Init, LayerSpec, Network, NetworkSpec};
pub use reorder::{pr_backward, pr_forward, Norm, PatchReorderConfig, PermutationRecord, RemainderPolicy};
pub use rng::Rng;
pub use scalar::{DType, Scalar};
pub use tensor::{Dims4, Region, Tensor4};
