//! Seeded random-projection feature extractor.
//!
//! Each image is split into a 4×4 grid of regions. The raw statistics are
//! the region means, plus, at three scales (the image and its 2× and 4× box
//! averages), each region's standard deviation and mean absolute finite
//! difference. Region means are taken once since box averaging preserves
//! them. A fixed Gaussian matrix projects the 112 statistics to 64
//! features.

use crate::error::{Error, Result};
use crate::grid::ImageGrid;
use crate::guidance::box_downsample;
use crate::rng::NoiseStream;

pub const FEATURE_DIM: usize = 64;
const SCALES: [usize; 3] = [1, 2, 4];
const REGIONS: usize = 4;
pub const RAW_DIM: usize = REGIONS * REGIONS * (1 + 2 * SCALES.len());

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureExtractor {
    seed: u64,
    /// Row-major `FEATURE_DIM × RAW_DIM`.
    projection: Vec<f64>,
}

impl FeatureExtractor {
    pub fn new(seed: u64) -> Self {
        let mut s = NoiseStream::new(seed);
        let scale = 1.0 / (RAW_DIM as f64).sqrt();
        let projection = (0..FEATURE_DIM * RAW_DIM).map(|_| scale * s.normal()).collect();
        Self { seed, projection }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Pooled region statistics before projection.
    pub fn raw_statistics(&self, img: &ImageGrid) -> Result<Vec<f64>> {
        let (w, h) = img.shape();
        let need = REGIONS * SCALES[SCALES.len() - 1];
        if w < need || h < need {
            return Err(Error::invalid(format!(
                "feature extraction needs at least {need}x{need} images, got {w}x{h}"
            )));
        }
        let mut out = Vec::with_capacity(RAW_DIM);
        for (k, &s) in SCALES.iter().enumerate() {
            let g = if s == 1 { img.clone() } else { box_downsample(img, s)? };
            let (gw, gh) = g.shape();
            for ry in 0..REGIONS {
                let (y0, y1) = (ry * gh / REGIONS, (ry + 1) * gh / REGIONS);
                for rx in 0..REGIONS {
                    let (x0, x1) = (rx * gw / REGIONS, (rx + 1) * gw / REGIONS);
                    let n = ((y1 - y0) * (x1 - x0)) as f64;
                    let mut sum = 0.0;
                    for y in y0..y1 {
                        for x in x0..x1 {
                            sum += g.get(x, y);
                        }
                    }
                    let mean = sum / n;
                    let (mut ss, mut edge, mut edges) = (0.0, 0.0, 0.0);
                    for y in y0..y1 {
                        for x in x0..x1 {
                            let v = g.get(x, y);
                            ss += (v - mean).powi(2);
                            if x + 1 < x1 {
                                edge += (g.get(x + 1, y) - v).abs();
                                edges += 1.0;
                            }
                            if y + 1 < y1 {
                                edge += (g.get(x, y + 1) - v).abs();
                                edges += 1.0;
                            }
                        }
                    }
                    if k == 0 {
                        out.push(mean);
                    }
                    out.push((ss / n).sqrt());
                    out.push(if edges > 0.0 { edge / edges } else { 0.0 });
                }
            }
        }
        Ok(out)
    }

    pub fn extract(&self, img: &ImageGrid) -> Result<Vec<f64>> {
        let raw = self.raw_statistics(img)?;
        Ok(self
            .projection
            .chunks_exact(RAW_DIM)
            .map(|row| row.iter().zip(&raw).map(|(p, r)| p * r).sum())
            .collect())
    }
}
