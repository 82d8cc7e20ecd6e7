//! Rotation-invariant adversarial autoencoder for canonical 2D pose recovery.
//!
//! Given randomly rotated, noisy square images with known rotation ground
//! truth, the model learns to predict the rotation angle in a dedicated
//! latent scalar and to reconstruct the canonical (unrotated, clean) image.
//! A Wasserstein critic on the decoder output sharpens reconstructions.
//!
//! The crate is organized around the pipeline stages:
//!
//! - [`imaging`]: rotation with interpolation, angle sampling, normalization
//! - [`datasets`]: rotated-MNIST and synthetic projection-stack corpora, with
//!   a binary cache format
//! - [`autodiff`]: a small reverse-mode tape over exactly the operations the
//!   networks need
//! - [`model`]: encoder / decoder / critic with the angle-reserving latent
//!   split, plus checkpointing
//! - [`losses`]: angle, reconstruction, and adversarial objectives
//! - [`training`]: the alternating optimization loop with weight clipping
//! - [`evaluation`]: MSE / angle-error metrics and qualitative image grids
//!
//! See the `examples/` directory for runnable entry points per capability,
//! and the `canon-pose` binary for the command-line interface.

pub mod autodiff;
pub mod cli;
pub mod datasets;
pub mod error;
pub mod evaluation;
pub mod imaging;
pub mod losses;
pub mod model;
pub(crate) mod rng;
pub mod training;

pub use error::{Error, Result};
