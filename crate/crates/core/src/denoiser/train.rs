//! Noise-prediction objective and the training loop.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::q_sample;
use crate::error::{Error, Result};
use crate::grid::ImageGrid;
use crate::rng::{NoiseDraw, NoiseStream};
use crate::schedule::VarianceSchedule;

use super::{Denoiser, SmallDenoiserNet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: usize,
    /// May be zero (a no-op run); everything else must be positive.
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Steps between intermediate checkpoints; 0 disables them.
    pub checkpoint_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            steps: 2000,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            checkpoint_interval: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.batch_size == 0 {
            errs.push("train.batch_size must be positive".to_string());
        }
        if self.steps == 0 {
            errs.push("train.steps must be positive".to_string());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            errs.push("train.learning_rate must be finite and nonnegative".to_string());
        }
        for (name, v) in [("train.beta1", self.beta1), ("train.beta2", self.beta2)] {
            if !(v > 0.0 && v < 1.0) {
                errs.push(format!("{name} must lie in (0, 1), got {v}"));
            }
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            errs.push("train.epsilon must be positive".to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// A batch of `(x_0, t, ε)` triples.
#[derive(Clone, Debug)]
pub struct TrainingBatch {
    pub x0: Vec<ImageGrid>,
    pub steps: Vec<usize>,
    pub eps: Vec<NoiseDraw>,
}

impl TrainingBatch {
    /// Draw order per item: dataset index, step, noise grid.
    pub fn draw(
        dataset: &[ImageGrid],
        size: usize,
        sched: &VarianceSchedule,
        stream: &mut NoiseStream,
    ) -> Self {
        let mut x0 = Vec::with_capacity(size);
        let mut steps = Vec::with_capacity(size);
        let mut eps = Vec::with_capacity(size);
        for _ in 0..size {
            let img = &dataset[stream.int_inclusive(0, dataset.len() - 1)];
            x0.push(img.clone());
            steps.push(stream.int_inclusive(1, sched.steps()));
            eps.push(NoiseDraw::from_grid(
                stream.normal_grid(img.width(), img.height()),
                stream.seed(),
            ));
        }
        Self { x0, steps, eps }
    }

    pub fn len(&self) -> usize {
        self.x0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x0.is_empty()
    }

    fn check(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        if self.steps.len() != self.len() || self.eps.len() != self.len() {
            return Err(Error::invalid(format!(
                "batch has {} images, {} steps, {} noise draws",
                self.len(),
                self.steps.len(),
                self.eps.len()
            )));
        }
        for (x, e) in self.x0.iter().zip(&self.eps) {
            x.ensure_same_shape(&e.grid)?;
        }
        Ok(())
    }
}

fn squared_error(pred: &ImageGrid, target: &ImageGrid) -> f64 {
    pred.values()
        .iter()
        .zip(target.values())
        .map(|(p, e)| (p - e) * (p - e))
        .sum::<f64>()
        / pred.len() as f64
}

/// Per-item noise-prediction error `mean_pixels (ε - ε̂)²`.
pub fn loss_terms(
    model: &dyn Denoiser,
    batch: &TrainingBatch,
    sched: &VarianceSchedule,
) -> Result<Vec<f64>> {
    batch.check()?;
    (0..batch.len())
        .into_par_iter()
        .map(|i| {
            let x_t = q_sample(&batch.x0[i], batch.steps[i], &batch.eps[i], sched)?;
            let pred = model.predict_noise(&x_t, batch.steps[i])?;
            pred.ensure_same_shape(&x_t)?;
            Ok(squared_error(&pred, &batch.eps[i].grid))
        })
        .collect()
}

/// Mean over the batch of the per-pixel squared noise-prediction error.
pub fn loss_simple(model: &dyn Denoiser, batch: &TrainingBatch, sched: &VarianceSchedule) -> Result<f64> {
    let terms = loss_terms(model, batch, sched)?;
    Ok(terms.iter().sum::<f64>() / terms.len() as f64)
}

/// [`loss_simple`] for `net`'s architecture evaluated at `params`, together
/// with its gradient. Items are reduced in batch order.
pub fn loss_and_grad(
    net: &SmallDenoiserNet,
    params: &[f64],
    batch: &TrainingBatch,
    sched: &VarianceSchedule,
) -> Result<(f64, Vec<f64>)> {
    batch.check()?;
    let arch = net.architecture();
    if params.len() != arch.param_count() {
        return Err(Error::invalid("parameter vector length does not match architecture"));
    }
    let b = batch.len() as f64;
    let parts: Vec<(f64, Vec<f64>)> = (0..batch.len())
        .into_par_iter()
        .map(|i| {
            let x_t = q_sample(&batch.x0[i], batch.steps[i], &batch.eps[i], sched)?;
            net.check_input(&x_t)?;
            let (out, cache) = arch.forward(params, x_t.values(), batch.steps[i]);
            let eps = batch.eps[i].grid.values();
            let n = out.len() as f64;
            let mut loss = 0.0;
            let g_out: Vec<f64> = out
                .iter()
                .zip(eps)
                .map(|(o, e)| {
                    let d = o - e;
                    loss += d * d;
                    2.0 * d / (n * b)
                })
                .collect();
            let mut grad = vec![0.0; params.len()];
            arch.backward(params, &cache, &g_out, &mut grad);
            Ok((loss / n, grad))
        })
        .collect::<Result<_>>()?;
    let mut total = 0.0;
    let mut grad = vec![0.0; params.len()];
    for (l, g) in parts {
        total += l;
        for (a, v) in grad.iter_mut().zip(g) {
            *a += v;
        }
    }
    Ok((total / b, grad))
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: SmallDenoiserNet,
    /// Batch loss at every step, index 0 = step 1.
    pub losses: Vec<f64>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f32], grad: &[f64], cfg: &TrainConfig) {
        self.step += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.step);
        let c2 = 1.0 - cfg.beta2.powi(self.step);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p = (*p as f64 - cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon)) as f32;
        }
    }
}

/// Standard denoising training: uniform `t`, Gaussian `ε`, Adam on
/// [`loss_simple`]. Deterministic in `cfg.seed`.
pub fn train(
    model: &SmallDenoiserNet,
    dataset: &[ImageGrid],
    cfg: &TrainConfig,
    sched: &VarianceSchedule,
) -> Result<TrainOutcome> {
    train_with_checkpoints(model, dataset, cfg, sched, |_, _| Ok(()))
}

/// As [`train`], calling `on_checkpoint(step, model)` every
/// `cfg.checkpoint_interval` steps.
pub fn train_with_checkpoints<F>(
    model: &SmallDenoiserNet,
    dataset: &[ImageGrid],
    cfg: &TrainConfig,
    sched: &VarianceSchedule,
    mut on_checkpoint: F,
) -> Result<TrainOutcome>
where
    F: FnMut(usize, &SmallDenoiserNet) -> Result<()>,
{
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("training dataset is empty"));
    }
    for img in dataset {
        model.check_input(img)?;
    }
    let arch = model.architecture().clone();
    let mut params = model.parameters().to_vec();
    let mut wide: Vec<f64> = params.iter().map(|&p| p as f64).collect();
    let mut adam = Adam::new(params.len());
    let mut stream = NoiseStream::new(cfg.seed);
    let mut losses = Vec::with_capacity(cfg.steps);

    for step in 1..=cfg.steps {
        let batch = TrainingBatch::draw(dataset, cfg.batch_size, sched, &mut stream);
        let (loss, grad) = loss_and_grad(model, &wide, &batch, sched)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { step, loss });
        }
        losses.push(loss);
        adam.update(&mut params, &grad, cfg);
        for (w, p) in wide.iter_mut().zip(&params) {
            *w = *p as f64;
        }
        if cfg.checkpoint_interval > 0 && step % cfg.checkpoint_interval == 0 {
            let snapshot = SmallDenoiserNet::from_parameters(arch.clone(), params.clone())?;
            on_checkpoint(step, &snapshot)?;
        }
        if step % 100 == 0 {
            log::debug!("step {step}: loss {loss:.5}");
        }
    }
    Ok(TrainOutcome {
        model: SmallDenoiserNet::from_parameters(arch, params)?,
        losses,
    })
}
