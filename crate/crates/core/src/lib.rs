//! Light-field compression with a scene-aware implicit neural representation.
//!
//! A light field of `U x V` views is stored as the weights of a small
//! convolutional network plus four levels of quantized latent scene codes.
//! Encoding trains that representation under a rate-distortion objective;
//! decoding reads the bitstream and runs the network once per view.

pub mod bitstream;
pub mod cli;
pub mod coder;
pub mod entropy;
pub mod error;
pub mod eval;
mod graph;
pub mod lightfield;
pub mod model;
pub mod nn;
pub mod quant;
pub mod train;

pub use error::{Error, Result};
pub use lightfield::{AngularCoord, LightField};
pub use model::{ModelConfig, SanrModel};
