//! Gaussian fits of feature sets and the Fréchet distance between them.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::ImageGrid;

use super::features::FeatureExtractor;

/// Below this many samples a 64-D covariance cannot be full rank.
pub const FULL_RANK_MIN: usize = 65;
pub const REGULARIZATION: f64 = 1e-6;
const SYMMETRY_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianStats {
    pub mean: Vec<f64>,
    /// Row-major `d × d` sample covariance, unregularised.
    pub covariance: Vec<f64>,
    /// Set when the covariance is rank deficient; [`frechet_distance`] then
    /// adds `REGULARIZATION · I`.
    pub regularized: bool,
    pub count: usize,
}

impl GaussianStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn effective_covariance(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mut m = DMatrix::from_row_slice(d, d, &self.covariance);
        if self.regularized {
            for i in 0..d {
                m[(i, i)] += REGULARIZATION;
            }
        }
        m
    }

    fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 || self.covariance.len() != d * d {
            return Err(Error::invalid("malformed Gaussian statistics"));
        }
        for i in 0..d {
            for j in 0..i {
                let (a, b) = (self.covariance[i * d + j], self.covariance[j * d + i]);
                if (a - b).abs() > SYMMETRY_TOL {
                    return Err(Error::invalid(format!(
                        "covariance is not symmetric at ({i}, {j}): {a} vs {b}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Mean and sample covariance of row vectors. Data are shifted by the first
/// row first, so identical rows give an exactly zero covariance.
pub fn fit_gaussian(rows: &[Vec<f64>]) -> Result<GaussianStats> {
    let first = rows
        .first()
        .ok_or_else(|| Error::invalid("cannot fit statistics to an empty set"))?;
    let d = first.len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::invalid("feature vectors differ in length"));
    }
    let n = rows.len();
    let shifted: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.iter().zip(first).map(|(a, b)| a - b).collect())
        .collect();
    let mut smean = vec![0.0; d];
    for r in &shifted {
        for (m, v) in smean.iter_mut().zip(r) {
            *m += v;
        }
    }
    smean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = vec![0.0; d * d];
    if n > 1 {
        for r in &shifted {
            let c: Vec<f64> = r.iter().zip(&smean).map(|(a, m)| a - m).collect();
            for i in 0..d {
                for j in 0..=i {
                    cov[i * d + j] += c[i] * c[j];
                }
            }
        }
        for i in 0..d {
            for j in 0..=i {
                let v = cov[i * d + j] / (n - 1) as f64;
                cov[i * d + j] = v;
                cov[j * d + i] = v;
            }
        }
    }
    let mean = smean.iter().zip(first).map(|(m, f)| m + f).collect();
    let regularized = n < FULL_RANK_MIN.max(d + 1) || rank_deficient(&cov, d);
    Ok(GaussianStats {
        mean,
        covariance: cov,
        regularized,
        count: n,
    })
}

fn rank_deficient(cov: &[f64], d: usize) -> bool {
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(d, d, cov)).eigenvalues;
    let max = eig.iter().cloned().fold(0.0f64, f64::max);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    max <= 0.0 || min <= 1e-12 * max
}

/// Extract features from every image and fit a Gaussian.
pub fn extract_stats(images: &[ImageGrid], extractor: &FeatureExtractor) -> Result<GaussianStats> {
    if images.is_empty() {
        return Err(Error::invalid("cannot extract statistics from an empty set"));
    }
    let rows = images
        .par_iter()
        .map(|img| extractor.extract(img))
        .collect::<Result<Vec<_>>>()?;
    fit_gaussian(&rows)
}

/// Principal square root of a symmetric PSD matrix; negative eigenvalues are
/// clamped to zero.
fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let roots = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()));
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// `‖μ1 − μ2‖² + tr(Σ1 + Σ2 − 2 (Σ1 Σ2)^{1/2})`.
///
/// The trace of `(Σ1 Σ2)^{1/2}` is taken as the trace of the square root of
/// the symmetric matrix `Σ1^{1/2} Σ2 Σ1^{1/2}`, which has the same
/// eigenvalues.
pub fn frechet_distance(s1: &GaussianStats, s2: &GaussianStats) -> Result<f64> {
    s1.validate()?;
    s2.validate()?;
    if s1.dim() != s2.dim() {
        return Err(Error::invalid(format!(
            "statistics dimensions differ: {} vs {}",
            s1.dim(),
            s2.dim()
        )));
    }
    let (c1, c2) = (s1.effective_covariance(), s2.effective_covariance());
    let r1 = sqrt_psd(&c1);
    let mut m = &r1 * &c2 * &r1;
    m = (&m + m.transpose()) * 0.5;
    let tr_sqrt: f64 = SymmetricEigen::new(m)
        .eigenvalues
        .iter()
        .map(|l| l.max(0.0).sqrt())
        .sum();
    let dmean: f64 = s1.mean.iter().zip(&s2.mean).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((dmean + c1.trace() + c2.trace() - 2.0 * tr_sqrt).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::NoiseStream;

    fn stats(mean: Vec<f64>, cov: Vec<f64>) -> GaussianStats {
        GaussianStats {
            mean,
            covariance: cov,
            regularized: false,
            count: 1000,
        }
    }

    fn random_spd(seed: u64, d: usize) -> Vec<f64> {
        let mut s = NoiseStream::new(seed);
        let a = DMatrix::from_fn(d, d, |_, _| s.normal());
        let m = &a * a.transpose() + DMatrix::identity(d, d) * 0.1;
        m.transpose().as_slice().to_vec()
    }

    /// Denman–Beavers iteration for a general matrix square root.
    fn sqrt_db(a: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = a.clone();
        let mut z = DMatrix::identity(a.nrows(), a.ncols());
        for _ in 0..60 {
            let yi = y.clone().try_inverse().unwrap();
            let zi = z.clone().try_inverse().unwrap();
            y = (&y + zi) * 0.5;
            z = (&z + yi) * 0.5;
        }
        y
    }

    #[test]
    fn identity_covariances_unit_mean_shift() {
        let mut eye = vec![0.0; 9];
        for i in 0..3 {
            eye[i * 3 + i] = 1.0;
        }
        let a = stats(vec![0.0, 0.0, 0.0], eye.clone());
        let b = stats(vec![0.0, 1.0, 0.0], eye);
        assert!((frechet_distance(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        assert!(frechet_distance(&a, &a).unwrap() <= 1e-8);
    }

    #[test]
    fn matches_direct_product_square_root() {
        for seed in 0..10 {
            let (c1, c2) = (random_spd(seed, 4), random_spd(seed + 50, 4));
            let mut s = NoiseStream::new(seed + 99);
            let m1: Vec<f64> = (0..4).map(|_| s.normal()).collect();
            let m2: Vec<f64> = (0..4).map(|_| s.normal()).collect();
            let (a, b) = (DMatrix::from_row_slice(4, 4, &c1), DMatrix::from_row_slice(4, 4, &c2));
            let want = m1.iter().zip(&m2).map(|(p, q)| (p - q).powi(2)).sum::<f64>()
                + a.trace()
                + b.trace()
                - 2.0 * sqrt_db(&(&a * &b)).trace();
            let got = frechet_distance(&stats(m1.clone(), c1.clone()), &stats(m2.clone(), c2.clone())).unwrap();
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
            let rev = frechet_distance(&stats(m2, c2), &stats(m1, c1)).unwrap();
            assert!((got - rev).abs() < 1e-8);
        }
    }

    #[test]
    fn asymmetric_covariance_is_rejected() {
        let a = stats(vec![0.0, 0.0], vec![1.0, 0.5, 0.4, 1.0]);
        assert!(frechet_distance(&a, &a).is_err());
    }

    #[test]
    fn duplicate_rows_give_zero_covariance() {
        let rows = vec![vec![0.3, -1.7, 2.2]; 100];
        let st = fit_gaussian(&rows).unwrap();
        assert!(st.covariance.iter().all(|&c| c == 0.0));
        assert!(st.regularized);
        assert_eq!(st.mean, rows[0]);
        assert!(fit_gaussian(&[]).is_err());
    }
}
