//! Difference-driven implicit neural representation for video.
//!
//! Frames are encoded into a small content embedding and, from temporal
//! differences, a diff embedding. A NeRV-block decoder with a gated fusion
//! unit reconstructs each frame. The embeddings plus decoder weights form a
//! compact representation of the video, which [`codec`] quantizes, prunes,
//! and entropy-codes.

pub mod autograd;
pub mod codec;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod kernels;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod tensor;
pub mod train;

pub use autograd::{Activation, Graph, Var};
pub use error::{Error, Result};
pub use model::{DiffVariant, DnervModel, FrameEmbeddings, FusionVariant, ModelConfig};
pub use tensor::Tensor;
