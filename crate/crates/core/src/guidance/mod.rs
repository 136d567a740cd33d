//! Multi-condition low-pass guidance.
//!
//! After every ancestral step the latent `x_{t-1}` is pulled toward each
//! active reference `y_s` in the frequency band kept by its filter:
//!
//! ```text
//! x_{t-1} ← x_{t-1} + Σ_{s : t ≥ a_s} ( φ_{n_s}(y_{s,t-1}) − φ_{n_s}(x_{t-1}) )
//! ```
//!
//! where `y_{s,t-1}` is the reference noised to level `t-1`. Every
//! correction is computed against the same unrefined `x_{t-1}` and applied
//! once.

mod filter;

pub use filter::{box_downsample, lowpass, upsample, LowPassFilter};

use crate::denoiser::Denoiser;
use crate::diffusion::{q_sample, run_chain};
use crate::error::{Error, Result};
use crate::grid::ImageGrid;
use crate::rng::{NoiseDraw, NoiseStream};
use crate::schedule::VarianceSchedule;

/// Conditions beyond this count are rejected unless explicitly allowed;
/// overlap between many low-pass constraints degrades quickly.
pub const CONDITION_SOFT_LIMIT: usize = 4;

/// One reference image with its filter factor `n` and stop step `a`.
/// The condition is applied at every step `t ≥ a`.
#[derive(Clone, Debug, PartialEq)]
pub struct GuidanceSpec {
    pub y: ImageGrid,
    pub n: usize,
    pub a: usize,
    pub label: String,
}

impl GuidanceSpec {
    pub fn new(y: ImageGrid, n: usize, a: usize, label: impl Into<String>) -> Self {
        Self {
            y,
            n,
            a,
            label: label.into(),
        }
    }

    #[inline]
    pub fn is_active(&self, t: usize) -> bool {
        t >= self.a
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GuidanceOptions {
    /// Permit more than [`CONDITION_SOFT_LIMIT`] conditions.
    pub allow_over_limit: bool,
    /// Permit filter factors that are not powers of two.
    pub allow_any_factor: bool,
}

/// Ordered list of conditions. May be empty, which reduces guided sampling
/// to plain ancestral sampling.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GuidanceSet {
    specs: Vec<GuidanceSpec>,
}

impl GuidanceSet {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn new(specs: Vec<GuidanceSpec>, options: GuidanceOptions) -> Result<Self> {
        if specs.len() > CONDITION_SOFT_LIMIT && !options.allow_over_limit {
            return Err(Error::invalid(format!(
                "{} guidance conditions exceed the limit of {CONDITION_SOFT_LIMIT}; \
                 pass the override to allow more",
                specs.len()
            )));
        }
        for (i, s) in specs.iter().enumerate() {
            if s.n == 0 {
                return Err(Error::invalid(format!("condition {i}: filter factor must be >= 1")));
            }
            if !options.allow_any_factor && !s.n.is_power_of_two() {
                return Err(Error::invalid(format!(
                    "condition {i}: filter factor {} is not a power of two",
                    s.n
                )));
            }
            if s.a == 0 {
                return Err(Error::invalid(format!("condition {i}: stop step must be >= 1")));
            }
        }
        Ok(Self { specs })
    }

    pub fn specs(&self) -> &[GuidanceSpec] {
        &self.specs
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    /// Check every condition against the generation shape and step count.
    pub fn validate_for(&self, shape: (usize, usize), steps: usize) -> Result<()> {
        for (i, s) in self.specs.iter().enumerate() {
            if s.y.shape() != shape {
                return Err(Error::ShapeMismatch {
                    expected: shape,
                    actual: s.y.shape(),
                });
            }
            if s.a > steps {
                return Err(Error::invalid(format!(
                    "condition {i} ({}): stop step {} outside 1..={steps}",
                    s.label, s.a
                )));
            }
            if s.n > shape.0 || s.n > shape.1 {
                return Err(Error::invalid(format!(
                    "condition {i} ({}): filter factor {} exceeds image size",
                    s.label, s.n
                )));
            }
        }
        Ok(())
    }

    /// Number of refine applications a full `steps`-step chain performs:
    /// `Σ_s (T − a_s + 1)`.
    pub fn application_count(&self, steps: usize) -> usize {
        self.specs.iter().map(|s| steps + 1 - s.a.min(steps + 1)).sum()
    }
}

/// `y_{t-1} ~ q(y_{t-1} | y)`: the reference noised to level `t-1` with a
/// fresh draw from `stream`. The draw happens even at `t = 1`, where the
/// clean reference is returned, so the stream position never depends on `t`.
pub fn q_sample_reference(
    y: &ImageGrid,
    t: usize,
    sched: &VarianceSchedule,
    stream: &mut NoiseStream,
) -> Result<ImageGrid> {
    if t == 0 || t > sched.steps() {
        return Err(Error::invalid(format!(
            "reference step {t} outside 1..={}",
            sched.steps()
        )));
    }
    let eps = NoiseDraw::from_grid(stream.normal_grid(y.width(), y.height()), stream.seed());
    q_sample(y, t - 1, &eps, sched)
}

/// [`q_sample_reference`] on a fresh stream keyed by `seed`.
pub fn q_sample_reference_seeded(
    y: &ImageGrid,
    t: usize,
    sched: &VarianceSchedule,
    seed: u64,
) -> Result<ImageGrid> {
    q_sample_reference(y, t, sched, &mut NoiseStream::new(seed))
}

/// Applies every active condition's low-pass correction to `x_prev`.
///
/// `noisy_refs[s]` is condition `s`'s reference at noise level `t-1`.
/// Evaluated as `(x − Σ φ(x)) + Σ φ(y)`, which makes the single-condition
/// `n = 1` case return `y` exactly.
pub fn refine(
    x_prev: &ImageGrid,
    noisy_refs: &[ImageGrid],
    specs: &GuidanceSet,
    t: usize,
) -> Result<ImageGrid> {
    if noisy_refs.len() != specs.len() {
        return Err(Error::invalid(format!(
            "{} noisy references for {} conditions",
            noisy_refs.len(),
            specs.len()
        )));
    }
    let active: Vec<usize> = (0..specs.len())
        .filter(|&s| specs.specs[s].is_active(t))
        .collect();
    for y in noisy_refs {
        x_prev.ensure_same_shape(y)?;
    }
    if active.is_empty() {
        return Ok(x_prev.clone());
    }
    let mut out = x_prev.clone();
    for &s in &active {
        let fx = lowpass(x_prev, specs.specs[s].n)?;
        for (o, f) in out.values_mut().iter_mut().zip(fx.values()) {
            *o -= f;
        }
    }
    for &s in &active {
        let fy = lowpass(&noisy_refs[s], specs.specs[s].n)?;
        for (o, f) in out.values_mut().iter_mut().zip(fy.values()) {
            *o += f;
        }
    }
    Ok(out)
}

/// What the guided sampler did at one step.
pub struct GuidedStep<'a> {
    pub t: usize,
    /// `x_{t-1}` straight from the ancestral step.
    pub ancestral: &'a ImageGrid,
    /// Each condition's reference at level `t-1`.
    pub noisy_refs: &'a [ImageGrid],
    /// `x_{t-1}` after refinement.
    pub refined: &'a ImageGrid,
    /// Number of conditions applied at this step.
    pub applied: usize,
}

/// Guided ancestral sampling. Deterministic in `seed`; the stream draws
/// `x_T`, then per step the ancestral noise followed by one reference noise
/// grid per condition in order.
pub fn sample_guided(
    model: &dyn Denoiser,
    sched: &VarianceSchedule,
    specs: &GuidanceSet,
    shape: (usize, usize),
    seed: u64,
) -> Result<ImageGrid> {
    sample_guided_observed(model, sched, specs, shape, seed, |_| {})
}

/// [`sample_guided`] reporting every step to `observe`.
pub fn sample_guided_observed<F>(
    model: &dyn Denoiser,
    sched: &VarianceSchedule,
    specs: &GuidanceSet,
    shape: (usize, usize),
    seed: u64,
    mut observe: F,
) -> Result<ImageGrid>
where
    F: FnMut(&GuidedStep<'_>),
{
    specs.validate_for(shape, sched.steps())?;
    let mut stream = NoiseStream::new(seed);
    run_chain(model, sched, shape, &mut stream, |t, x, stream| {
        if specs.is_empty() {
            return Ok(());
        }
        let noisy: Vec<ImageGrid> = specs
            .specs()
            .iter()
            .map(|s| q_sample_reference(&s.y, t, sched, stream))
            .collect::<Result<_>>()?;
        let refined = refine(x, &noisy, specs, t)?;
        observe(&GuidedStep {
            t,
            ancestral: x,
            noisy_refs: &noisy,
            refined: &refined,
            applied: specs.specs().iter().filter(|s| s.is_active(t)).count(),
        });
        *x = refined;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::ZeroPredictor;
    use crate::diffusion::sample_unconditional;
    use crate::schedule::{build_schedule, ScheduleKind};

    fn random(seed: u64, w: usize, h: usize) -> ImageGrid {
        NoiseDraw::from_seed(seed, w, h).grid
    }

    fn set(specs: Vec<GuidanceSpec>) -> GuidanceSet {
        GuidanceSet::new(specs, GuidanceOptions::default()).unwrap()
    }

    #[test]
    fn identity_filter_collapses_to_reference() {
        let x = random(1, 8, 8);
        let y = random(2, 8, 8);
        let g = set(vec![GuidanceSpec::new(y.clone(), 1, 1, "ref")]);
        let out = refine(&x, std::slice::from_ref(&y), &g, 5).unwrap();
        assert!(out.bitwise_eq(&y));
    }

    #[test]
    fn inactive_conditions_leave_input_untouched() {
        let x = random(1, 8, 8);
        let ys = vec![random(2, 8, 8), random(3, 8, 8)];
        let g = set(vec![
            GuidanceSpec::new(ys[0].clone(), 2, 10, "a"),
            GuidanceSpec::new(ys[1].clone(), 4, 20, "b"),
        ]);
        let out = refine(&x, &ys, &g, 9).unwrap();
        assert!(out.bitwise_eq(&x));
    }

    #[test]
    fn limits_and_factors_are_enforced() {
        let y = random(1, 8, 8);
        let five: Vec<_> = (0..5).map(|_| GuidanceSpec::new(y.clone(), 2, 1, "r")).collect();
        assert!(GuidanceSet::new(five.clone(), GuidanceOptions::default()).is_err());
        let opts = GuidanceOptions {
            allow_over_limit: true,
            ..Default::default()
        };
        assert!(GuidanceSet::new(five, opts).is_ok());
        let three = vec![GuidanceSpec::new(y.clone(), 3, 1, "r")];
        assert!(GuidanceSet::new(three.clone(), GuidanceOptions::default()).is_err());
        let opts = GuidanceOptions {
            allow_any_factor: true,
            ..Default::default()
        };
        assert!(GuidanceSet::new(three, opts).is_ok());
        let g = set(vec![GuidanceSpec::new(y, 2, 11, "r")]);
        assert!(g.validate_for((8, 8), 10).is_err());
        assert!(g.validate_for((8, 4), 20).is_err());
    }

    #[test]
    fn reference_at_final_step_is_clean() {
        let s = build_schedule(ScheduleKind::Linear, 10).unwrap();
        let y = random(4, 5, 5);
        let out = q_sample_reference_seeded(&y, 1, &s, 9).unwrap();
        assert!(out.bitwise_eq(&y));
        let a = q_sample_reference_seeded(&y, 6, &s, 9).unwrap();
        let b = q_sample_reference_seeded(&y, 6, &s, 9).unwrap();
        assert!(a.bitwise_eq(&b));
        assert!(!a.bitwise_eq(&y));
    }

    #[test]
    fn empty_set_reduces_to_unconditional() {
        let s = build_schedule(ScheduleKind::Cosine, 25).unwrap();
        for seed in 0..3 {
            let g = sample_guided(&ZeroPredictor, &s, &GuidanceSet::empty(), (6, 6), seed).unwrap();
            let u = sample_unconditional(&ZeroPredictor, &s, (6, 6), seed).unwrap();
            assert!(g.bitwise_eq(&u));
        }
    }

    #[test]
    fn full_identity_guidance_returns_reference() {
        let s = build_schedule(ScheduleKind::Linear, 30).unwrap();
        let y = random(7, 8, 8);
        let g = set(vec![GuidanceSpec::new(y.clone(), 1, 1, "ref")]);
        let out = sample_guided(&ZeroPredictor, &s, &g, (8, 8), 3).unwrap();
        assert_eq!(out.max_abs_diff(&y), 0.0);
    }

    #[test]
    fn application_count_matches_observed() {
        let s = build_schedule(ScheduleKind::Linear, 40).unwrap();
        let y = random(7, 8, 8);
        let g = set(vec![
            GuidanceSpec::new(y.clone(), 2, 1, "a"),
            GuidanceSpec::new(y.clone(), 4, 13, "b"),
            GuidanceSpec::new(y, 8, 40, "c"),
        ]);
        let mut seen = 0;
        sample_guided_observed(&ZeroPredictor, &s, &g, (8, 8), 1, |step| seen += step.applied).unwrap();
        assert_eq!(seen, g.application_count(40));
        assert_eq!(seen, 40 + 28 + 1);
    }
}
