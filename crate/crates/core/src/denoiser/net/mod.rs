//! Trainable noise predictors with hand-written backpropagation.

mod mlp;
pub mod ops;
mod unet;

pub use ops::Activation;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ImageGrid, ValueRange};
use crate::rng::NoiseStream;

use super::{Denoiser, ModelMetadata};

pub const DEFAULT_TIME_DIM: usize = 64;
pub const DEFAULT_BASE_CHANNELS: usize = 16;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "lowercase")]
pub enum Architecture {
    /// Convolutional encoder–decoder, channels `base, 2·base, 4·base` at
    /// full, half and quarter resolution. Width and height must be
    /// multiples of 4.
    Unet {
        width: usize,
        height: usize,
        base_channels: usize,
        time_dim: usize,
        activation: Activation,
    },
    /// Fully connected network over the flattened grid.
    Mlp {
        input_dim: usize,
        hidden: Vec<usize>,
        time_dim: usize,
        activation: Activation,
    },
}

pub(crate) enum Cache {
    Unet(unet::Cache),
    Mlp(mlp::Cache),
}

impl Architecture {
    /// The default ~100k-parameter encoder–decoder for `width × height`.
    pub fn unet(width: usize, height: usize) -> Self {
        Architecture::Unet {
            width,
            height,
            base_channels: DEFAULT_BASE_CHANNELS,
            time_dim: DEFAULT_TIME_DIM,
            activation: Activation::Silu,
        }
    }

    pub fn mlp(input_dim: usize, hidden: Vec<usize>) -> Self {
        Architecture::Mlp {
            input_dim,
            hidden,
            time_dim: DEFAULT_TIME_DIM,
            activation: Activation::Silu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Architecture::Unet {
                width,
                height,
                base_channels,
                time_dim,
                ..
            } => {
                if *width < 4 || *height < 4 || width % 4 != 0 || height % 4 != 0 {
                    return Err(Error::invalid(format!(
                        "encoder-decoder needs width and height that are positive multiples of 4, got {width}x{height}"
                    )));
                }
                if *base_channels == 0 {
                    return Err(Error::invalid("base_channels must be positive"));
                }
                check_time_dim(*time_dim)
            }
            Architecture::Mlp {
                input_dim,
                hidden,
                time_dim,
                ..
            } => {
                if *input_dim == 0 || hidden.iter().any(|&h| h == 0) {
                    return Err(Error::invalid("perceptron widths must be positive"));
                }
                check_time_dim(*time_dim)
            }
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Architecture::Unet { .. } => self.unet_shape().param_count(),
            Architecture::Mlp { .. } => self.mlp_shape().param_count(),
        }
    }

    /// Grid shape the model is bound to (the perceptron only fixes the
    /// pixel count).
    pub fn input_shape(&self) -> Option<(usize, usize)> {
        match self {
            Architecture::Unet { width, height, .. } => Some((*width, *height)),
            Architecture::Mlp { .. } => None,
        }
    }

    pub fn input_len(&self) -> usize {
        match self {
            Architecture::Unet { width, height, .. } => width * height,
            Architecture::Mlp { input_dim, .. } => *input_dim,
        }
    }

    fn unet_shape(&self) -> unet::UnetShape {
        match self {
            Architecture::Unet {
                width,
                height,
                base_channels,
                time_dim,
                activation,
            } => unet::UnetShape {
                width: *width,
                height: *height,
                base_channels: *base_channels,
                time_dim: *time_dim,
                activation: *activation,
            },
            _ => unreachable!(),
        }
    }

    fn mlp_shape(&self) -> mlp::MlpShape {
        match self {
            Architecture::Mlp {
                input_dim,
                hidden,
                time_dim,
                activation,
            } => mlp::MlpShape {
                input_dim: *input_dim,
                hidden: hidden.clone(),
                time_dim: *time_dim,
                activation: *activation,
            },
            _ => unreachable!(),
        }
    }

    fn init_plan(&self) -> Vec<(std::ops::Range<usize>, usize, usize)> {
        match self {
            Architecture::Unet { .. } => self.unet_shape().init_plan(),
            Architecture::Mlp { .. } => self.mlp_shape().init_plan(),
        }
    }

    pub(crate) fn forward(&self, p: &[f64], x: &[f64], t: usize) -> (Vec<f64>, Cache) {
        match self {
            Architecture::Unet { .. } => {
                let (out, c) = unet::forward(&self.unet_shape(), p, x, t);
                (out, Cache::Unet(c))
            }
            Architecture::Mlp { .. } => {
                let (out, c) = mlp::forward(&self.mlp_shape(), p, x, t);
                (out, Cache::Mlp(c))
            }
        }
    }

    pub(crate) fn backward(&self, p: &[f64], cache: &Cache, g_out: &[f64], gp: &mut [f64]) {
        match cache {
            Cache::Unet(c) => unet::backward(&self.unet_shape(), p, c, g_out, gp),
            Cache::Mlp(c) => mlp::backward(&self.mlp_shape(), p, c, g_out, gp),
        }
    }
}

fn check_time_dim(d: usize) -> Result<()> {
    if d == 0 || d % 2 != 0 {
        return Err(Error::invalid(format!(
            "time embedding dimension must be even and positive, got {d}"
        )));
    }
    Ok(())
}

/// A trainable noise predictor. Parameters are stored as `f32` (the
/// checkpoint precision) and widened to `f64` for evaluation.
#[derive(Clone, Debug)]
pub struct SmallDenoiserNet {
    arch: Architecture,
    params: Vec<f32>,
    wide: Vec<f64>,
}

impl SmallDenoiserNet {
    /// Seeded scaled-normal initialisation: weights `N(0, 1/fan_in)`, biases
    /// zero, output layer shrunk by 10×.
    pub fn initialize(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut stream = NoiseStream::new(seed);
        let mut params = vec![0f32; arch.param_count()];
        let plan = arch.init_plan();
        let last = plan.len() - 1;
        for (i, (range, fan_in, fan_out)) in plan.into_iter().enumerate() {
            let scale = (1.0 / fan_in as f64).sqrt() * if i == last { 0.1 } else { 1.0 };
            let n_weights = range.len() - fan_out;
            for p in &mut params[range.start..range.start + n_weights] {
                *p = (scale * stream.normal()) as f32;
            }
        }
        Self::from_parameters(arch, params)
    }

    pub fn from_parameters(arch: Architecture, params: Vec<f32>) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.param_count() {
            return Err(Error::invalid(format!(
                "architecture needs {} parameters, got {}",
                arch.param_count(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("parameters must be finite"));
        }
        let wide = params.iter().map(|&p| p as f64).collect();
        Ok(Self { arch, params, wide })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn parameters(&self) -> &[f32] {
        &self.params
    }

    pub fn parameters_f64(&self) -> &[f64] {
        &self.wide
    }

    pub fn into_parameters(self) -> Vec<f32> {
        self.params
    }

    pub(crate) fn check_input(&self, x: &ImageGrid) -> Result<()> {
        match self.arch.input_shape() {
            Some(shape) if shape != x.shape() => Err(Error::ShapeMismatch {
                expected: shape,
                actual: x.shape(),
            }),
            None if x.len() != self.arch.input_len() => Err(Error::invalid(format!(
                "model expects {} pixels, got {}",
                self.arch.input_len(),
                x.len()
            ))),
            _ => Ok(()),
        }
    }

    /// Evaluate with an explicit parameter vector (finite-difference probes).
    pub fn predict_with(&self, params: &[f64], x_t: &ImageGrid, t: usize) -> Result<ImageGrid> {
        self.check_input(x_t)?;
        let (out, _) = self.arch.forward(params, x_t.values(), t);
        ImageGrid::new(x_t.width(), x_t.height(), out, ValueRange::Normalized).map_err(|_| {
            Error::Numeric {
                step: t,
                detail: "network produced a non-finite output".into(),
            }
        })
    }
}

impl Denoiser for SmallDenoiserNet {
    fn predict_noise(&self, x_t: &ImageGrid, t: usize) -> Result<ImageGrid> {
        self.predict_with(&self.wide, x_t, t)
    }

    fn metadata(&self) -> ModelMetadata {
        ModelMetadata {
            input_shape: self.arch.input_shape(),
            parameter_count: self.params.len(),
        }
    }
}
