//! Noise predictors `ε_θ(x_t, t)`.
//!
//! Two families implement [`Denoiser`]: the closed-form
//! [`AnalyticGaussianDenoiser`] for Gaussian-mixture data, used to test the
//! samplers without training, and the trainable [`SmallDenoiserNet`].

mod analytic;
pub mod net;
mod train;

pub use analytic::{analytic_epsilon, AnalyticGaussianDenoiser, GaussianMixture};
pub use net::{Activation, Architecture, SmallDenoiserNet};
pub use train::{
    loss_and_grad, loss_simple, loss_terms, train, train_with_checkpoints, TrainConfig, TrainOutcome,
    TrainingBatch,
};

use crate::error::Result;
use crate::grid::ImageGrid;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelMetadata {
    /// `(width, height)` the model accepts, or `None` for any shape.
    pub input_shape: Option<(usize, usize)>,
    pub parameter_count: usize,
}

/// Predicts the noise component of a latent at step `t` (1-based).
///
/// Implementations must return a grid of the input's shape and be
/// deterministic for fixed parameters.
pub trait Denoiser: Send + Sync {
    fn predict_noise(&self, x_t: &ImageGrid, t: usize) -> Result<ImageGrid>;

    fn metadata(&self) -> ModelMetadata;
}

/// Always predicts zero noise.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroPredictor;

impl Denoiser for ZeroPredictor {
    fn predict_noise(&self, x_t: &ImageGrid, _t: usize) -> Result<ImageGrid> {
        Ok(ImageGrid::zeros(x_t.width(), x_t.height()))
    }

    fn metadata(&self) -> ModelMetadata {
        ModelMetadata {
            input_shape: None,
            parameter_count: 0,
        }
    }
}
