//! A small NCHW deep-learning engine and static cost analyser for efficient
//! convolution blocks: EffNet (original and revised), MobileNet, ShuffleNet,
//! MobileNet v2 and its pooling variant, and a vanilla conv + max-pool
//! baseline.

pub mod analysis;
pub mod autograd;
pub mod blocks;
pub mod cli;
pub mod data;
pub mod error;
pub mod graph;
pub mod ops;
pub mod parallel;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Fill, Rng, Shape4, Tensor};
