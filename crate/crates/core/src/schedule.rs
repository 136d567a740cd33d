//! Fixed variance schedules for the forward noising process.
//!
//! Steps are 1-based in the public API (`t` in `1..=T`); arrays are stored
//! 0-based and every accessor converts at the boundary.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LINEAR_BETA_START: f64 = 1e-4;
pub const LINEAR_BETA_END: f64 = 0.02;
pub const COSINE_OFFSET: f64 = 0.008;
pub const COSINE_MAX_BETA: f64 = 0.999;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Linear,
    Cosine,
}

impl ScheduleKind {
    pub fn tag(self) -> u8 {
        match self {
            ScheduleKind::Linear => 0,
            ScheduleKind::Cosine => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(ScheduleKind::Linear),
            1 => Some(ScheduleKind::Cosine),
            _ => None,
        }
    }
}

impl std::str::FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ScheduleKind::Linear),
            "cosine" => Ok(ScheduleKind::Cosine),
            other => Err(Error::invalid(format!("unknown schedule kind {other:?}"))),
        }
    }
}

/// Precomputed per-step constants of a `T`-step schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct VarianceSchedule {
    kind: ScheduleKind,
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    sigmas: Vec<f64>,
}

/// Build a standard schedule. Requires `steps >= 2`.
pub fn build_schedule(kind: ScheduleKind, steps: usize) -> Result<VarianceSchedule> {
    if steps < 2 {
        return Err(Error::invalid(format!(
            "schedule needs T >= 2 steps, got {steps}"
        )));
    }
    let betas = match kind {
        ScheduleKind::Linear => linear_betas(steps),
        ScheduleKind::Cosine => cosine_betas(steps),
    };
    VarianceSchedule::from_betas(kind, betas)
}

fn linear_betas(steps: usize) -> Vec<f64> {
    let last = (steps - 1) as f64;
    (0..steps)
        .map(|i| {
            let f = i as f64 / last;
            LINEAR_BETA_START * (1.0 - f) + LINEAR_BETA_END * f
        })
        .collect()
}

fn cosine_betas(steps: usize) -> Vec<f64> {
    let total = steps as f64;
    let f = |t: f64| {
        let angle = ((t / total + COSINE_OFFSET) / (1.0 + COSINE_OFFSET)) * std::f64::consts::FRAC_PI_2;
        let c = angle.cos();
        c * c
    };
    let f0 = f(0.0);
    (1..=steps)
        .map(|t| {
            let prev = f((t - 1) as f64) / f0;
            let cur = f(t as f64) / f0;
            (1.0 - cur / prev).min(COSINE_MAX_BETA)
        })
        .collect()
}

/// Running product kept as an unevaluated sum `hi + lo` (double-double), so
/// the stored `ᾱ_t` values carry no accumulated rounding drift.
struct ExtendedProduct {
    hi: f64,
    lo: f64,
}

impl ExtendedProduct {
    fn one() -> Self {
        Self { hi: 1.0, lo: 0.0 }
    }

    fn mul(&mut self, x: f64) {
        let p = self.hi * x;
        let err = self.hi.mul_add(x, -p);
        let lo = self.lo.mul_add(x, err);
        let hi = p + lo;
        self.lo = lo - (hi - p);
        self.hi = hi;
    }
}

impl VarianceSchedule {
    /// Build from explicit betas. Any `T >= 1` is accepted here; derived
    /// arrays are always recomputed from the betas.
    pub fn from_betas(kind: ScheduleKind, betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::Schedule("schedule must have at least one step".into()));
        }
        if let Some((i, b)) = betas
            .iter()
            .enumerate()
            .find(|(_, b)| !(b.is_finite() && **b > 0.0 && **b < 1.0))
        {
            return Err(Error::Schedule(format!(
                "beta at step {} is {b}, outside (0, 1)",
                i + 1
            )));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut acc = ExtendedProduct::one();
        let alpha_bars: Vec<f64> = alphas
            .iter()
            .map(|&a| {
                acc.mul(a);
                acc.hi
            })
            .collect();
        if let Some(i) = alpha_bars.iter().position(|&a| !(a > 0.0)) {
            return Err(Error::Schedule(format!(
                "cumulative alpha underflowed to zero at step {}",
                i + 1
            )));
        }
        let sigmas = betas.iter().map(|b| b.sqrt()).collect();
        Ok(Self {
            kind,
            betas,
            alphas,
            alpha_bars,
            sigmas,
        })
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    /// Number of steps `T`.
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    #[inline]
    fn idx(&self, t: usize) -> usize {
        assert!(
            (1..=self.steps()).contains(&t),
            "step {t} outside 1..={}",
            self.steps()
        );
        t - 1
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if (1..=self.steps()).contains(&t) {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "step {t} outside 1..={}",
                self.steps()
            )))
        }
    }

    #[inline]
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[self.idx(t)]
    }

    #[inline]
    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[self.idx(t)]
    }

    /// `ᾱ_t`; `t = 0` returns 1 (the clean-data limit).
    #[inline]
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[self.idx(t)]
        }
    }

    /// Ancestral noise scale `σ_t = sqrt(β_t)`.
    #[inline]
    pub fn sigma(&self, t: usize) -> f64 {
        self.sigmas[self.idx(t)]
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }
}
