//! Dual-branch (transformer + CNN) segmentation network with channel-attention
//! feature fusion, built on a hand-rolled tensor library with reverse-mode
//! tape autodiff. No external numerics: GEMM, convolution, normalization,
//! attention, losses, metrics, and the training loop all live here.

pub mod checkpoint;
pub mod cnn;
pub mod config;
pub mod data;
pub mod error;
pub mod fusion;
pub mod gradcheck;
pub mod init;
pub mod io;
pub mod layers;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod params;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod vit;
pub mod viz;

#[cfg(test)]
pub mod testutil;

pub use config::{ModelConfig, Resolved};
pub use error::{Error, Result};
pub use model::{ParaTransCnn, StageFeatures};
pub use ops::Mode;
pub use params::ParamSet;
pub use tape::Tape;
pub use tensor::{Dtype, Scalar, Tensor};
pub use train::{RunConfig, TrainConfig};
