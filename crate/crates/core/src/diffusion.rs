//! Forward noising in closed form and the unguided ancestral reverse chain.

use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::grid::ImageGrid;
use crate::rng::{NoiseDraw, NoiseStream};
use crate::schedule::VarianceSchedule;

/// `x_t = sqrt(ᾱ_t)·x0 + sqrt(1-ᾱ_t)·eps`.
///
/// `t = 0` is accepted and returns `x0` unchanged, which the guidance sampler
/// relies on at its final step.
pub fn q_sample(
    x0: &ImageGrid,
    t: usize,
    eps: &NoiseDraw,
    sched: &VarianceSchedule,
) -> Result<ImageGrid> {
    x0.ensure_same_shape(&eps.grid)?;
    if t == 0 {
        return Ok(x0.clone());
    }
    sched.check_step(t)?;
    let ab = sched.alpha_bar(t);
    let (signal, noise) = (ab.sqrt(), (1.0 - ab).sqrt());
    x0.zip_map(&eps.grid, |x, e| signal * x + noise * e)
}

/// Posterior mean of the reverse step expressed through a noise prediction.
pub fn reverse_mean(
    x_t: &ImageGrid,
    t: usize,
    eps_pred: &ImageGrid,
    sched: &VarianceSchedule,
) -> Result<ImageGrid> {
    x_t.ensure_same_shape(eps_pred)?;
    sched.check_step(t)?;
    let inv_sqrt_alpha = 1.0 / sched.alpha(t).sqrt();
    let eps_coef = sched.beta(t) / (1.0 - sched.alpha_bar(t)).sqrt();
    x_t.zip_map(eps_pred, |x, e| inv_sqrt_alpha * (x - eps_coef * e))
}

/// One ancestral step: `reverse_mean(x_t, t, model(x_t, t)) + σ_t·z`.
///
/// The step applies whatever `z` it is given; callers own the `z = 0` rule
/// at `t = 1`.
pub fn ddpm_step(
    x_t: &ImageGrid,
    t: usize,
    model: &dyn Denoiser,
    z: &NoiseDraw,
    sched: &VarianceSchedule,
) -> Result<ImageGrid> {
    x_t.ensure_same_shape(&z.grid)?;
    let eps = model.predict_noise(x_t, t)?;
    if eps.shape() != x_t.shape() {
        return Err(Error::Numeric {
            step: t,
            detail: format!(
                "model returned shape {:?} for input {:?}",
                eps.shape(),
                x_t.shape()
            ),
        });
    }
    let mean = reverse_mean(x_t, t, &eps, sched)?;
    let sigma = sched.sigma(t);
    let out = mean.zip_map(&z.grid, |m, n| m + sigma * n)?;
    if !out.all_finite() {
        return Err(Error::Numeric {
            step: t,
            detail: "non-finite value in reverse step".into(),
        });
    }
    Ok(out)
}

/// Runs the ancestral chain from `x_T ~ N(0, I)` down to `x_0`.
///
/// Draw order on the stream: `x_T`, then for each `t = T..1` the step noise
/// `z` (drawn even at `t = 1`, where it is replaced by zeros), then whatever
/// `after_step` draws. `after_step` sees `t` and `x_{t-1}`.
pub fn run_chain<F>(
    model: &dyn Denoiser,
    sched: &VarianceSchedule,
    shape: (usize, usize),
    stream: &mut NoiseStream,
    mut after_step: F,
) -> Result<ImageGrid>
where
    F: FnMut(usize, &mut ImageGrid, &mut NoiseStream) -> Result<()>,
{
    let (w, h) = shape;
    if w == 0 || h == 0 {
        return Err(Error::invalid("sample shape must be positive"));
    }
    let mut x = stream.normal_grid(w, h);
    for t in (1..=sched.steps()).rev() {
        let drawn = stream.normal_grid(w, h);
        let z = if t == 1 {
            NoiseDraw::zeros(w, h)
        } else {
            NoiseDraw::from_grid(drawn, stream.seed())
        };
        x = ddpm_step(&x, t, model, &z, sched)?;
        after_step(t, &mut x, stream)?;
    }
    Ok(x)
}

/// Unguided sampling; deterministic in `(seed, model, sched)`.
pub fn sample_unconditional(
    model: &dyn Denoiser,
    sched: &VarianceSchedule,
    shape: (usize, usize),
    seed: u64,
) -> Result<ImageGrid> {
    let mut stream = NoiseStream::new(seed);
    run_chain(model, sched, shape, &mut stream, |_, _, _| Ok(()))
}
