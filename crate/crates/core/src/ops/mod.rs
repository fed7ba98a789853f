//! Forward and backward kernels for every layer primitive used by the
//! block builders.

pub mod activation;
pub mod conv;
pub mod dense;
pub mod dropout;
pub(crate) mod gemm;
pub mod loss;
pub mod norm;
pub mod pool;
pub mod shuffle;

pub use activation::{activation, activation_backward, Activation, DEFAULT_LEAKY_ALPHA};
pub use conv::{conv2d, conv2d_backward, conv2d_counted, depthwise_conv2d, Conv2d, ConvGrads, ConvPlan, Padding};
pub use dense::{fully_connected, fully_connected_backward, fully_connected_counted, DenseGrads};
pub use dropout::{dropout, dropout_backward};
pub use loss::{softmax_cross_entropy, softmax_cross_entropy_grad};
pub use norm::{batch_norm, batch_norm_backward, BnCache, BnGrads, BnParams, Mode, BN_EPSILON, BN_MOMENTUM};
pub use pool::{max_pool2d, max_pool2d_backward, max_pool2d_with_argmax, PoolParams};
pub use shuffle::{channel_shuffle, channel_shuffle_backward, shuffle_permutation};
