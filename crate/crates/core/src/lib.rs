//! Diffusion-based co-speech gesture synthesis.
//!
//! The crate covers the whole pipeline: BVH motion I/O and the 2232-wide
//! gesture representation, speech conditioning features (audio, text,
//! speaker), an x0-predicting denoising diffusion model with cross-local
//! attention, long-form sampling with seed handoff, and Fréchet gesture
//! distance evaluation.

pub mod ablation;
pub mod corpus;
pub mod denoiser;
pub mod diffusion;
pub mod dims;
pub mod error;
pub mod features;
pub mod fgd;
pub mod generator;
pub mod io;
pub mod kv;
pub mod motion;
pub mod nn;
pub mod pipeline;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
