//! Adversarial image-restoration laboratory.
//!
//! A small reverse-mode autodiff engine over `f64` tensors, the convolutional
//! layer set GANs need, five adversarial objectives (GAN, DCGAN, WGAN, CGAN and
//! the residual restoration GAN), dataset loaders with a coarse-image
//! degradation pipeline, and a deterministic training harness.

pub mod data;
pub mod error;
pub mod experiment;
pub mod image;
pub mod models;
pub mod nn;
pub mod objectives;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor, Var};
