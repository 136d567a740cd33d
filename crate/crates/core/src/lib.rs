//! Denoising diffusion sampling with multi-condition low-pass guidance.
//!
//! The crate is organised bottom-up:
//!
//! - [`schedule`] and [`diffusion`]: variance schedules, the closed-form
//!   forward process and the ancestral reverse chain.
//! - [`denoiser`]: the noise-predictor contract, an exact Gaussian-mixture
//!   oracle and a small trainable network.
//! - [`guidance`]: low-pass filters and the guided sampler.
//! - [`phantom`]: procedural annotated phantom images and HU windowing.
//! - [`metrics`]: SSIM, set-level SSIM and a Fréchet feature distance.
//! - [`io`]: versioned binary formats, manifests and experiment configs.
//! - [`pipeline`]: the end-to-end commands behind the CLI.

pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod grid;
pub mod guidance;
pub mod io;
pub mod metrics;
pub mod phantom;
pub mod pipeline;
pub mod rng;
pub mod schedule;

pub use error::{Error, FormatError, Result};
pub use grid::{ImageGrid, ValueRange};
