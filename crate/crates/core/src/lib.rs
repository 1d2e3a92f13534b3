//! Encoder-coupled GAN for 4x single-image super-resolution with
//! latent-space regularization.
//!
//! The crate provides, in dependency order: a minimal dense tensor type with
//! reverse-mode differentiation (`tensor`), a deterministic counter-based
//! PRNG (`rng`), the generator/discriminator/encoder/feature-probe networks
//! (`nets`), every scalar training objective (`losses`), the bicubic data
//! pipeline and synthetic dataset (`data`), PSNR/SSIM/L1 evaluation
//! (`metrics`), the two-stage Adam trainer with checkpointing (`train`,
//! `checkpoint`), and a piecewise-linear interpolation / Lipschitz analysis
//! toolkit (`pwl`).
//!
//! Everything is single-threaded and bit-deterministic by default: identical
//! seeds and configuration produce byte-identical checkpoints and reports.

pub mod checkpoint;
pub mod data;
pub mod elem;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod nets;
pub mod pwl;
pub mod rng;
pub mod tensor;
pub mod train;

pub use elem::{Dtype, Elem};
pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::{gradcheck, GradcheckReport, NodeId, Tape, Tensor};
