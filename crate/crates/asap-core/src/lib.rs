//! A spatially-adaptive pixelwise image-to-image generator.
//!
//! The model splits inference into two streams: a convolutional hypernetwork
//! that runs on an aggressively downsampled copy of the input and predicts a
//! low-resolution grid of MLP parameter vectors, and a bank of lightweight
//! pixelwise MLPs that run at full resolution, parameterized by the
//! nearest-neighbor-upsampled grid plus a sinusoidal encoding of each pixel's
//! coordinates. The crate also ships exact manual backpropagation for every
//! operator, a hinge-loss GAN training loop with a multi-scale patch
//! discriminator, and the serialization formats (checkpoints, configs,
//! images, loss logs) used by the CLI.

pub mod error;
pub mod gan;
pub mod generator;
pub mod hypernet;
pub mod io;
pub mod mlp;
pub mod posenc;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use generator::{AblationMode, GenCache, GenGrads, Generator, GeneratorWeights};
pub use hypernet::{compute_factors, Factors, GeneratorConfig, HypernetParams, ParamGrid};
pub use mlp::MlpSpec;
pub use posenc::PositionalEncodingSpec;
pub use tensor::{ConvLayerParams, Scalar, Shape, Tensor};
