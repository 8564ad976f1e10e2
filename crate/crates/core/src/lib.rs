//! Semantic transmission of RF signals over token erasure channels.
//!
//! The pipeline: [`siggen`] synthesizes labeled baseband IQ datasets;
//! [`vqvae`] discretizes signals into codebook token sequences; [`channel`]
//! erases tokens (truncation or puncturing); [`arprior`] completes truncated
//! sequences autoregressively while [`seddprior`] inpaints punctured ones by
//! masked-diffusion denoising; [`evalpipe`] decodes, classifies and scores
//! how much task-aligned meaning survived. [`nn`] is the small
//! differentiable-computation substrate everything trains on.

pub mod arprior;
pub mod channel;
pub mod error;
pub mod evalpipe;
pub mod nn;
pub mod rng;
pub mod seddprior;
pub mod siggen;
pub mod tokens;
pub mod vqvae;

pub use error::{Error, Result};
