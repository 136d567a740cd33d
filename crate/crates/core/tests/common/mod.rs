//! Independent reference implementations shared by the integration tests
//! and the acceptance runner.
#![allow(dead_code)]

use mddpm::denoiser::{SmallDenoiserNet, TrainingBatch};
use mddpm::diffusion::q_sample;
use mddpm::schedule::VarianceSchedule;
use mddpm::ImageGrid;

/// Low-pass filter written pixel by pixel: cell means, bilinear
/// interpolation between cell centres, then per-cell mean correction.
pub fn scalar_lowpass(v: &[f64], w: usize, h: usize, n: usize) -> Vec<f64> {
    if n == 1 {
        return v.to_vec();
    }
    let cw = w.div_ceil(n);
    let ch = h.div_ceil(n);
    let cell_mean = |img: &[f64], cx: usize, cy: usize| -> f64 {
        let mut s = 0.0;
        let mut c = 0.0;
        for y in cy * n..((cy + 1) * n).min(h) {
            for x in cx * n..((cx + 1) * n).min(w) {
                s += img[y * w + x];
                c += 1.0;
            }
        }
        s / c
    };
    let centre = |i: usize, len: usize| -> f64 {
        let last = ((i + 1) * n).min(len) - 1;
        (i * n + last) as f64 / 2.0
    };
    let interp = |p: usize, count: usize, len: usize| -> (usize, usize, f64) {
        let p = p as f64;
        if p <= centre(0, len) {
            return (0, 0, 0.0);
        }
        if p >= centre(count - 1, len) {
            return (count - 1, count - 1, 0.0);
        }
        let lo = (0..count).filter(|&i| centre(i, len) <= p).last().unwrap();
        let (c0, c1) = (centre(lo, len), centre(lo + 1, len));
        (lo, lo + 1, (p - c0) / (c1 - c0))
    };
    let mut coarse = vec![0.0; cw * ch];
    for cy in 0..ch {
        for cx in 0..cw {
            coarse[cy * cw + cx] = cell_mean(v, cx, cy);
        }
    }
    let mut up = vec![0.0; w * h];
    for y in 0..h {
        let (j0, j1, fy) = interp(y, ch, h);
        for x in 0..w {
            let (i0, i1, fx) = interp(x, cw, w);
            let top = (1.0 - fx) * coarse[j0 * cw + i0] + fx * coarse[j0 * cw + i1];
            let bottom = (1.0 - fx) * coarse[j1 * cw + i0] + fx * coarse[j1 * cw + i1];
            up[y * w + x] = (1.0 - fy) * top + fy * bottom;
        }
    }
    let mut out = up.clone();
    for cy in 0..ch {
        for cx in 0..cw {
            let r = coarse[cy * cw + cx] - cell_mean(&up, cx, cy);
            for y in cy * n..((cy + 1) * n).min(h) {
                for x in cx * n..((cx + 1) * n).min(w) {
                    out[y * w + x] += r;
                }
            }
        }
    }
    out
}

/// Multi-condition refinement as a plain per-pixel sum:
/// `x + Σ_active (φ_n(y_s) − φ_n(x))`.
pub fn scalar_refine(
    x: &ImageGrid,
    refs: &[ImageGrid],
    conds: &[(usize, usize)],
    t: usize,
) -> Vec<f64> {
    let (w, h) = x.shape();
    let mut out = x.values().to_vec();
    for (y, &(n, a)) in refs.iter().zip(conds) {
        if t < a {
            continue;
        }
        let fy = scalar_lowpass(y.values(), w, h, n);
        let fx = scalar_lowpass(x.values(), w, h, n);
        for i in 0..w * h {
            out[i] += fy[i] - fx[i];
        }
    }
    out
}

/// Mean cell values of a `w × h` image over `n × n` cells.
pub fn scalar_box_down(v: &[f64], w: usize, h: usize, n: usize) -> Vec<f64> {
    let (cw, ch) = (w.div_ceil(n), h.div_ceil(n));
    let mut out = Vec::with_capacity(cw * ch);
    for cy in 0..ch {
        for cx in 0..cw {
            let mut s = 0.0;
            let mut c = 0.0;
            for y in cy * n..((cy + 1) * n).min(h) {
                for x in cx * n..((cx + 1) * n).min(w) {
                    s += v[y * w + x];
                    c += 1.0;
                }
            }
            out.push(s / c);
        }
    }
    out
}

/// Batch loss evaluated through the public forward pass only.
pub fn batch_loss(net: &SmallDenoiserNet, params: &[f64], batch: &TrainingBatch, sched: &VarianceSchedule) -> f64 {
    let mut total = 0.0;
    for i in 0..batch.len() {
        let x_t = q_sample(&batch.x0[i], batch.steps[i], &batch.eps[i], sched).unwrap();
        let pred = net.predict_with(params, &x_t, batch.steps[i]).unwrap();
        let e = batch.eps[i].grid.values();
        total += pred
            .values()
            .iter()
            .zip(e)
            .map(|(p, q)| (p - q) * (p - q))
            .sum::<f64>()
            / e.len() as f64;
    }
    total / batch.len() as f64
}

pub struct GradCheck {
    pub probed: usize,
    pub skipped: usize,
    pub max_rel: f64,
}

/// Central differences on up to `want` parameters spread evenly over the
/// vector, skipping those whose analytic gradient is below `1e-6` in
/// magnitude (round-off dominates there). Relative error uses
/// `max(|analytic|, |numeric|, 1e-7)` as denominator.
pub fn gradient_check(
    net: &SmallDenoiserNet,
    batch: &TrainingBatch,
    sched: &VarianceSchedule,
    analytic: &[f64],
    want: usize,
    h: f64,
) -> GradCheck {
    let base = net.parameters_f64().to_vec();
    let n = base.len();
    let stride = (n / (want * 3)).max(1);
    let mut probed = 0;
    let mut skipped = 0;
    let mut max_rel: f64 = 0.0;
    let mut i = 0;
    while probed < want && i < n {
        if analytic[i].abs() < 1e-6 {
            skipped += 1;
        } else {
            let mut p = base.clone();
            p[i] = base[i] + h;
            let up = batch_loss(net, &p, batch, sched);
            p[i] = base[i] - h;
            let down = batch_loss(net, &p, batch, sched);
            let fd = (up - down) / (2.0 * h);
            let rel = (fd - analytic[i]).abs() / analytic[i].abs().max(fd.abs()).max(1e-7);
            max_rel = max_rel.max(rel);
            probed += 1;
        }
        i += stride;
    }
    GradCheck {
        probed,
        skipped,
        max_rel,
    }
}

/// Asymptotic Kolmogorov survival function `P(K > x)`.
pub fn kolmogorov_sf(x: f64) -> f64 {
    if x < 0.2 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..200 {
        let k = k as f64;
        let term = 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * x * x).exp();
        s += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    s.clamp(0.0, 1.0)
}

/// One-sample KS statistic `D` and p-value for `samples` against `cdf`.
pub fn ks_test(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> (f64, f64) {
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = samples.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in samples.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    let sn = n.sqrt();
    // Stephens' small-sample correction.
    (d, kolmogorov_sf((sn + 0.12 + 0.11 / sn) * d))
}
