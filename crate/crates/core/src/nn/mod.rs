//! Minimal numerical engine: tensors, convolution, activation, pooling,
//! dense layer, cross-entropy and SGD, all with explicit backward passes.
//!
//! Everything is 32-bit with fixed summation order, so runs are reproducible
//! bit-for-bit. Operations are pure functions over value-like tensors.

pub mod conv;
pub mod dense;
pub mod loss;
pub mod ops;
pub mod sgd;
pub mod tensor;

pub use conv::{conv2d_backward, conv2d_forward, ConvKernel};
pub use dense::{dense_backward, dense_forward, DenseLayer};
pub use loss::{softmax, softmax_cross_entropy};
pub use ops::{
    avg_pool2d, avg_pool2d_backward, global_avg_pool, global_avg_pool_backward, relu_backward,
    relu_forward,
};
pub use sgd::{sgd_step, SgdConfig};
pub use tensor::Tensor;
