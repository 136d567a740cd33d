//! Windowed structural similarity.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::ImageGrid;

pub const SSIM_WINDOW: usize = 8;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

/// Sums over every `k × k` window (stride 1), row-major over window origins.
fn window_sums(v: &[f64], w: usize, h: usize, k: usize) -> Vec<f64> {
    let ow = w - k + 1;
    let oh = h - k + 1;
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let r = &v[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = r[x..x + k].iter().sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (y..y + k).map(|yy| rows[yy * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over all 8×8 windows, for images scaled to [0, 1].
pub fn ssim(a: &ImageGrid, b: &ImageGrid) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let (w, h) = a.shape();
    let k = SSIM_WINDOW;
    if w < k || h < k {
        return Err(Error::invalid(format!(
            "SSIM needs images of at least {k}x{k}, got {w}x{h}"
        )));
    }
    let (av, bv) = (a.values(), b.values());
    let sq = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(p, q)| p * q).collect::<Vec<_>>();
    let sa = window_sums(av, w, h, k);
    let sb = window_sums(bv, w, h, k);
    let saa = window_sums(&sq(av, av), w, h, k);
    let sbb = window_sums(&sq(bv, bv), w, h, k);
    let sab = window_sums(&sq(av, bv), w, h, k);
    let n = (k * k) as f64;
    let mut total = 0.0;
    for i in 0..sa.len() {
        let (ma, mb) = (sa[i] / n, sb[i] / n);
        let va = saa[i] / n - ma * ma;
        let vb = sbb[i] / n - mb * mb;
        let cov = sab[i] / n - ma * mb;
        total += ((2.0 * ma * mb + C1) * (2.0 * cov + C2))
            / ((ma * ma + mb * mb + C1) * (va + vb + C2));
    }
    Ok(total / sa.len() as f64)
}

/// Best-match SSIM of every generated image against the reference set.
pub fn best_matches(generated: &[ImageGrid], reference: &[ImageGrid]) -> Result<Vec<f64>> {
    if generated.is_empty() || reference.is_empty() {
        return Err(Error::invalid("set SSIM needs non-empty sets"));
    }
    generated
        .par_iter()
        .map(|g| {
            let mut best = f64::NEG_INFINITY;
            for r in reference {
                best = best.max(ssim(g, r)?);
            }
            Ok(best)
        })
        .collect()
}

/// Mean over generated images of their best SSIM against the reference set.
pub fn set_ssim(generated: &[ImageGrid], reference: &[ImageGrid]) -> Result<f64> {
    let best = best_matches(generated, reference)?;
    Ok(best.iter().sum::<f64>() / best.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::ValueRange;
    use crate::rng::NoiseStream;

    fn rand_unit(seed: u64, w: usize, h: usize) -> ImageGrid {
        let mut s = NoiseStream::new(seed);
        ImageGrid::from_fn(w, h, ValueRange::Unit, |_, _| s.uniform())
    }

    /// Direct per-window evaluation.
    fn naive(a: &ImageGrid, b: &ImageGrid) -> f64 {
        let (w, h) = a.shape();
        let mut acc = 0.0;
        let mut count = 0.0;
        for oy in 0..=h - 8 {
            for ox in 0..=w - 8 {
                let px: Vec<(f64, f64)> = (0..64)
                    .map(|i| (a.get(ox + i % 8, oy + i / 8), b.get(ox + i % 8, oy + i / 8)))
                    .collect();
                let ma = px.iter().map(|p| p.0).sum::<f64>() / 64.0;
                let mb = px.iter().map(|p| p.1).sum::<f64>() / 64.0;
                let va = px.iter().map(|p| (p.0 - ma).powi(2)).sum::<f64>() / 64.0;
                let vb = px.iter().map(|p| (p.1 - mb).powi(2)).sum::<f64>() / 64.0;
                let c = px.iter().map(|p| (p.0 - ma) * (p.1 - mb)).sum::<f64>() / 64.0;
                acc += ((2.0 * ma * mb + C1) * (2.0 * c + C2))
                    / ((ma * ma + mb * mb + C1) * (va + vb + C2));
                count += 1.0;
            }
        }
        acc / count
    }

    #[test]
    fn self_similarity_is_exactly_one() {
        let x = rand_unit(1, 20, 13);
        assert_eq!(ssim(&x, &x).unwrap(), 1.0);
        let c = ImageGrid::filled(9, 9, 0.42, ValueRange::Unit);
        assert_eq!(ssim(&c, &c).unwrap(), 1.0);
    }

    #[test]
    fn matches_direct_windows_and_is_symmetric() {
        for seed in 0..5 {
            let a = rand_unit(seed, 17, 11);
            let b = a.zip_map(&rand_unit(seed + 100, 17, 11), |p, q| 0.7 * p + 0.3 * q).unwrap();
            let s = ssim(&a, &b).unwrap();
            assert!((s - naive(&a, &b)).abs() < 1e-12);
            assert!((s - ssim(&b, &a).unwrap()).abs() < 1e-12);
            assert!((-1.0..=1.0).contains(&s));
        }
    }

    #[test]
    fn shape_errors() {
        let a = rand_unit(1, 8, 8);
        assert!(ssim(&a, &rand_unit(1, 9, 8)).is_err());
        assert!(ssim(&rand_unit(1, 7, 8), &rand_unit(1, 7, 8)).is_err());
    }

    #[test]
    fn set_level_reductions() {
        let set: Vec<_> = (0..4).map(|s| rand_unit(s, 12, 12)).collect();
        assert_eq!(set_ssim(&set[..2], &set).unwrap(), 1.0);
        assert_eq!(set_ssim(&set[..1], &set[2..3]).unwrap(), ssim(&set[0], &set[2]).unwrap());
        assert!(set_ssim(&[], &set).is_err());
        assert!(set_ssim(&set, &[]).is_err());
    }
}
