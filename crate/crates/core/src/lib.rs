//! Compressed-video quality enhancement by progressive latent denoising,
//! together with the toy block codec that produces its degraded inputs.

pub mod blob;
pub mod cli;
pub mod error;
pub mod ldr_ae;
pub mod media_io;
pub mod muna;
pub mod nn;
pub mod noise_model;
pub mod pdis_net;
pub mod synth;
pub mod tensor;
pub mod toy_codec;
pub mod train_harness;

pub use error::{Error, Result};
pub use tensor::Tensor;
