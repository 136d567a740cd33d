use crate::error::{Error, Result};
use crate::grid::{ImageGrid, ValueRange};
use crate::schedule::VarianceSchedule;

use super::{Denoiser, ModelMetadata};

/// Isotropic Gaussian mixture over `dim`-dimensional vectors:
/// `Σ_k w_k · N(m_k, s_k² I)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMixture {
    means: Vec<Vec<f64>>,
    variances: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussianMixture {
    pub fn new(means: Vec<Vec<f64>>, variances: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if means.is_empty() {
            return Err(Error::invalid("mixture needs at least one component"));
        }
        if variances.len() != means.len() || weights.len() != means.len() {
            return Err(Error::invalid(format!(
                "mixture has {} means, {} variances, {} weights",
                means.len(),
                variances.len(),
                weights.len()
            )));
        }
        let dim = means[0].len();
        if dim == 0 || means.iter().any(|m| m.len() != dim) {
            return Err(Error::invalid("mixture means must share a nonzero dimension"));
        }
        if means.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("mixture means must be finite"));
        }
        if variances.iter().any(|&v| !(v.is_finite() && v > 0.0)) {
            return Err(Error::invalid("mixture variances must be positive"));
        }
        if weights.iter().any(|&w| !(w.is_finite() && w >= 0.0)) {
            return Err(Error::invalid("mixture weights must be nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "mixture weights sum to {total}, expected 1"
            )));
        }
        Ok(Self {
            means,
            variances,
            weights,
        })
    }

    /// One component, the same `N(mean, variance)` for every pixel.
    pub fn single(dim: usize, mean: f64, variance: f64) -> Result<Self> {
        Self::new(vec![vec![mean; dim]], vec![variance], vec![1.0])
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn components(&self) -> usize {
        self.means.len()
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Draw one sample as a `width × height` grid (`width·height` must equal
    /// `dim`).
    pub fn sample(
        &self,
        stream: &mut crate::rng::NoiseStream,
        width: usize,
        height: usize,
    ) -> ImageGrid {
        assert_eq!(width * height, self.dim());
        let u = stream.uniform();
        let mut k = self.components() - 1;
        let mut acc = 0.0;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = i;
                break;
            }
        }
        let sd = self.variances[k].sqrt();
        let mean = &self.means[k];
        let mut i = 0;
        ImageGrid::from_fn(width, height, ValueRange::Normalized, |_, _| {
            let v = mean[i] + sd * stream.normal();
            i += 1;
            v
        })
    }
}

/// Exact posterior mean `E[ε | x_t]` when `x_0` follows `mixture`.
///
/// Per component the noisy marginal is `N(sqrt(ᾱ)·m_k, (ᾱ·s_k² + 1-ᾱ) I)` and
/// `E[ε | x_t, k] = sqrt(1-ᾱ)·(x_t - sqrt(ᾱ)·m_k) / (ᾱ·s_k² + 1-ᾱ)`; the
/// result weights these by the component responsibilities.
pub fn analytic_epsilon(
    x_t: &ImageGrid,
    t: usize,
    mixture: &GaussianMixture,
    sched: &VarianceSchedule,
) -> Result<ImageGrid> {
    if x_t.len() != mixture.dim() {
        return Err(Error::invalid(format!(
            "mixture dimension {} does not match grid size {}",
            mixture.dim(),
            x_t.len()
        )));
    }
    sched.check_step(t)?;
    let ab = sched.alpha_bar(t);
    let (root_ab, root_noise) = (ab.sqrt(), (1.0 - ab).sqrt());
    let dim = mixture.dim() as f64;
    let x = x_t.values();

    let marginal_var: Vec<f64> = mixture
        .variances
        .iter()
        .map(|s2| ab * s2 + (1.0 - ab))
        .collect();
    let log_resp: Vec<f64> = mixture
        .means
        .iter()
        .zip(&marginal_var)
        .zip(&mixture.weights)
        .map(|((m, &v), &w)| {
            let sq: f64 = x
                .iter()
                .zip(m)
                .map(|(xi, mi)| {
                    let d = xi - root_ab * mi;
                    d * d
                })
                .sum();
            w.ln() - 0.5 * dim * (2.0 * std::f64::consts::PI * v).ln() - sq / (2.0 * v)
        })
        .collect();
    let peak = log_resp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let unnorm: Vec<f64> = log_resp.iter().map(|l| (l - peak).exp()).collect();
    let norm: f64 = unnorm.iter().sum();

    let mut out = vec![0.0; x.len()];
    for ((m, &v), &r) in mixture.means.iter().zip(&marginal_var).zip(&unnorm) {
        let r = r / norm;
        if r == 0.0 {
            continue;
        }
        let scale = r * root_noise / v;
        for ((o, xi), mi) in out.iter_mut().zip(x).zip(m) {
            *o += scale * (xi - root_ab * mi);
        }
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric {
            step: t,
            detail: "non-finite analytic noise estimate".into(),
        });
    }
    ImageGrid::new(x_t.width(), x_t.height(), out, ValueRange::Normalized)
}

/// The Bayes-optimal noise predictor for Gaussian-mixture data.
#[derive(Clone, Debug)]
pub struct AnalyticGaussianDenoiser {
    mixture: GaussianMixture,
    sched: VarianceSchedule,
}

impl AnalyticGaussianDenoiser {
    pub fn new(mixture: GaussianMixture, sched: VarianceSchedule) -> Self {
        Self { mixture, sched }
    }

    pub fn mixture(&self) -> &GaussianMixture {
        &self.mixture
    }

    pub fn schedule(&self) -> &VarianceSchedule {
        &self.sched
    }
}

impl Denoiser for AnalyticGaussianDenoiser {
    fn predict_noise(&self, x_t: &ImageGrid, t: usize) -> Result<ImageGrid> {
        analytic_epsilon(x_t, t, &self.mixture, &self.sched)
    }

    fn metadata(&self) -> ModelMetadata {
        ModelMetadata {
            input_shape: None,
            parameter_count: 0,
        }
    }
}
