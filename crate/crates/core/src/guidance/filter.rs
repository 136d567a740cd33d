//! Linear low-pass filter `φ_N = U_N ∘ D_N`.
//!
//! `D_N` averages `N × N` cells; trailing cells of a non-divisible axis are
//! partial and averaged over the pixels they actually contain. `U_N`
//! bilinearly interpolates between cell centres, then adds back each cell's
//! residual `c - D_N(bilinear(c))` uniformly over the cell, so `D_N ∘ U_N`
//! is the identity. Consequently `φ_N` is idempotent and the coarse means of
//! `φ_N(x)` are exactly those of `x`.

use crate::error::{Error, Result};
use crate::grid::ImageGrid;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LowPassFilter {
    factor: usize,
}

impl LowPassFilter {
    pub fn new(factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::invalid("filter factor must be at least 1"));
        }
        Ok(Self { factor })
    }

    pub fn factor(&self) -> usize {
        self.factor
    }

    pub fn apply(&self, x: &ImageGrid) -> Result<ImageGrid> {
        lowpass(x, self.factor)
    }
}

/// `φ_N(x)`: box-average down by `n`, then upsample back to `x`'s shape.
/// `n = 1` returns `x` unchanged.
pub fn lowpass(x: &ImageGrid, n: usize) -> Result<ImageGrid> {
    check_factor(x, n)?;
    if n == 1 {
        return Ok(x.clone());
    }
    let coarse = box_downsample(x, n)?;
    upsample(&coarse, n, x.width(), x.height())
}

fn check_factor(x: &ImageGrid, n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("filter factor must be at least 1"));
    }
    if n > x.width() || n > x.height() {
        return Err(Error::invalid(format!(
            "filter factor {n} exceeds image size {}x{}",
            x.width(),
            x.height()
        )));
    }
    Ok(())
}

#[inline]
fn cells(len: usize, n: usize) -> usize {
    len.div_ceil(n)
}

/// Mean over each `n × n` cell (partial at the far edges).
pub fn box_downsample(x: &ImageGrid, n: usize) -> Result<ImageGrid> {
    check_factor(x, n)?;
    let (w, h) = x.shape();
    let (cw, ch) = (cells(w, n), cells(h, n));
    let mut sums = vec![0.0; cw * ch];
    let mut counts = vec![0usize; cw * ch];
    for y in 0..h {
        let row = &x.values()[y * w..(y + 1) * w];
        let cy = y / n;
        for (xi, v) in row.iter().enumerate() {
            let c = cy * cw + xi / n;
            sums[c] += v;
            counts[c] += 1;
        }
    }
    let values = sums
        .into_iter()
        .zip(counts)
        .map(|(s, c)| s / c as f64)
        .collect();
    ImageGrid::new(cw, ch, values, x.range())
}

/// Per fine index along one axis: `(lower cell, upper cell, weight of upper)`.
fn axis_weights(len: usize, n: usize) -> Vec<(usize, usize, f64)> {
    let count = cells(len, n);
    let centers: Vec<f64> = (0..count)
        .map(|i| {
            let start = i * n;
            let end = ((i + 1) * n).min(len);
            (start + end - 1) as f64 / 2.0
        })
        .collect();
    (0..len)
        .map(|j| {
            let p = j as f64;
            if count == 1 || p <= centers[0] {
                return (0, 0, 0.0);
            }
            if p >= centers[count - 1] {
                return (count - 1, count - 1, 0.0);
            }
            let i = centers.partition_point(|&c| c <= p) - 1;
            let f = (p - centers[i]) / (centers[i + 1] - centers[i]);
            (i, i + 1, f)
        })
        .collect()
}

/// Upsample a coarse grid of `ceil(width/n) × ceil(height/n)` cells back to
/// `width × height`, preserving every cell mean exactly.
pub fn upsample(coarse: &ImageGrid, n: usize, width: usize, height: usize) -> Result<ImageGrid> {
    let (cw, ch) = (cells(width, n), cells(height, n));
    if coarse.shape() != (cw, ch) {
        return Err(Error::ShapeMismatch {
            expected: (cw, ch),
            actual: coarse.shape(),
        });
    }
    let wx = axis_weights(width, n);
    let wy = axis_weights(height, n);
    let c = coarse.values();

    // Interpolate along x for every coarse row, then along y.
    let mut rows = vec![0.0; ch * width];
    for cy in 0..ch {
        for (x, &(i0, i1, f)) in wx.iter().enumerate() {
            rows[cy * width + x] = (1.0 - f) * c[cy * cw + i0] + f * c[cy * cw + i1];
        }
    }
    let mut fine = vec![0.0; height * width];
    for (y, &(j0, j1, f)) in wy.iter().enumerate() {
        for x in 0..width {
            fine[y * width + x] = (1.0 - f) * rows[j0 * width + x] + f * rows[j1 * width + x];
        }
    }
    let mut out = ImageGrid::new(width, height, fine, coarse.range())?;

    let reached = box_downsample(&out, n)?;
    let residual: Vec<f64> = c.iter().zip(reached.values()).map(|(a, b)| a - b).collect();
    for (y, row) in out.values_mut().chunks_exact_mut(width).enumerate() {
        let base = (y / n) * cw;
        for (x, v) in row.iter_mut().enumerate() {
            *v += residual[base + x / n];
        }
    }
    Ok(out)
}
