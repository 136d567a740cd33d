//! Label map to Hounsfield-unit image.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ImageGrid, ValueRange};
use crate::rng::NoiseStream;

use super::anatomy::Label;

/// Base intensity, allowed band and texture amplitudes for one tissue.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TissueProfile {
    pub base: f64,
    pub band: (f64, f64),
    pub texture: f64,
    pub bias: f64,
}

pub fn tissue_profile(label: Label) -> TissueProfile {
    let p = |base, band, texture, bias| TissueProfile { base, band, texture, bias };
    match label {
        Label::Background => p(-1000.0, (-1000.0, -1000.0), 0.0, 0.0),
        Label::SoftTissue => p(40.0, (-100.0, 200.0), 25.0, 15.0),
        Label::Lung => p(-800.0, (-950.0, -650.0), 35.0, 20.0),
        Label::Bone => p(650.0, (300.0, 1000.0), 80.0, 30.0),
        Label::Heart => p(50.0, (0.0, 100.0), 10.0, 8.0),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    /// Multiplier on the band-limited texture amplitudes.
    pub texture_scale: f64,
    /// Multiplier on the smooth bias-field amplitudes.
    pub bias_scale: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            texture_scale: 1.0,
            bias_scale: 1.0,
        }
    }
}

impl RenderConfig {
    /// Piecewise-constant rendering at the base intensities.
    pub fn noise_free() -> Self {
        Self {
            texture_scale: 0.0,
            bias_scale: 0.0,
        }
    }
}

fn labels_of(map: &ImageGrid) -> Result<Vec<Label>> {
    map.values()
        .iter()
        .map(|&v| {
            Label::from_value(v).ok_or_else(|| Error::invalid(format!("unknown anatomy label {v}")))
        })
        .collect()
}

/// Unit-variance band-limited noise: white noise through two passes of a
/// 3×3 box blur (edge-clamped), then rescaled.
fn texture_field(w: usize, h: usize, rng: &mut NoiseStream) -> Vec<f64> {
    let mut f: Vec<f64> = rng.normal_grid(w, h).into_values();
    for _ in 0..2 {
        let mut g = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut s = 0.0;
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let xx = (x as i64 + dx).clamp(0, w as i64 - 1) as usize;
                        let yy = (y as i64 + dy).clamp(0, h as i64 - 1) as usize;
                        s += f[yy * w + xx];
                    }
                }
                g[y * w + x] = s / 9.0;
            }
        }
        f = g;
    }
    let mean = f.iter().sum::<f64>() / f.len() as f64;
    let var = f.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / f.len() as f64;
    let sd = var.sqrt().max(1e-12);
    f.iter().map(|v| (v - mean) / sd).collect()
}

/// Smooth field in [-1, 1]: a few low-frequency cosines with random phases.
fn bias_field(w: usize, h: usize, rng: &mut NoiseStream) -> Vec<f64> {
    let terms: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.uniform_range(0.5, 1.5),
                rng.uniform_range(0.5, 1.5),
                rng.uniform_range(0.0, std::f64::consts::TAU),
            )
        })
        .collect();
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (u, v) = (x as f64 / w as f64, y as f64 / h as f64);
            let s: f64 = terms
                .iter()
                .map(|(fx, fy, ph)| (std::f64::consts::TAU * (fx * u + fy * v) + ph).cos())
                .sum();
            out.push(s / terms.len() as f64);
        }
    }
    out
}

/// Render a label map into HU. Texture and bias deviations are made
/// zero-mean within each label before clamping to the tissue band, so
/// label means sit at the base intensities regardless of `texture_seed`.
pub fn render_phantom(map: &ImageGrid, texture_seed: u64, config: &RenderConfig) -> Result<ImageGrid> {
    let labels = labels_of(map)?;
    if !(config.texture_scale >= 0.0 && config.bias_scale >= 0.0) {
        return Err(Error::invalid("render amplitudes must be non-negative"));
    }
    let (w, h) = map.shape();
    let mut rng = NoiseStream::new(texture_seed);
    let tex = texture_field(w, h, &mut rng);
    let bias = bias_field(w, h, &mut rng);

    let mut dev: Vec<f64> = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let p = tissue_profile(l);
            config.texture_scale * p.texture * tex[i] + config.bias_scale * p.bias * bias[i]
        })
        .collect();
    let mut sums = [0.0; 5];
    let mut counts = [0usize; 5];
    for (d, &l) in dev.iter().zip(&labels) {
        sums[l as usize] += d;
        counts[l as usize] += 1;
    }
    for (d, &l) in dev.iter_mut().zip(&labels) {
        *d -= sums[l as usize] / counts[l as usize] as f64;
    }
    let values = labels
        .iter()
        .zip(&dev)
        .map(|(&l, d)| {
            let p = tissue_profile(l);
            (p.base + d).clamp(p.band.0, p.band.1)
        })
        .collect();
    ImageGrid::new(w, h, values, ValueRange::Hu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::anatomy::gen_anatomy;

    fn label_means(map: &ImageGrid, img: &ImageGrid) -> [f64; 5] {
        let mut s = [0.0; 5];
        let mut c = [0.0; 5];
        for (l, v) in map.values().iter().zip(img.values()) {
            s[*l as usize] += v;
            c[*l as usize] += 1.0;
        }
        std::array::from_fn(|i| s[i] / c[i])
    }

    #[test]
    fn values_stay_in_tissue_bands() {
        let (_, map) = gen_anatomy(4, (64, 64)).unwrap();
        let img = render_phantom(&map, 9, &RenderConfig::default()).unwrap();
        assert_eq!(img.range(), ValueRange::Hu);
        for (l, v) in map.values().iter().zip(img.values()) {
            let band = tissue_profile(Label::from_value(*l).unwrap()).band;
            assert!(*v >= band.0 && *v <= band.1);
        }
    }

    #[test]
    fn label_means_do_not_depend_on_texture_seed() {
        let (_, map) = gen_anatomy(8, (64, 64)).unwrap();
        let a = label_means(&map, &render_phantom(&map, 1, &RenderConfig::default()).unwrap());
        let b = label_means(&map, &render_phantom(&map, 2, &RenderConfig::default()).unwrap());
        for i in 0..5 {
            assert!((a[i] - b[i]).abs() <= 5.0, "label {i}: {} vs {}", a[i], b[i]);
        }
    }

    #[test]
    fn noise_free_render_is_piecewise_constant() {
        let (_, map) = gen_anatomy(3, (48, 48)).unwrap();
        let img = render_phantom(&map, 5, &RenderConfig::noise_free()).unwrap();
        for (l, v) in map.values().iter().zip(img.values()) {
            assert_eq!(*v, tissue_profile(Label::from_value(*l).unwrap()).base);
        }
    }

    #[test]
    fn unknown_labels_are_rejected() {
        let map = ImageGrid::filled(4, 4, 7.0, ValueRange::Label);
        assert!(render_phantom(&map, 0, &RenderConfig::default()).is_err());
        let map = ImageGrid::filled(4, 4, 1.5, ValueRange::Label);
        assert!(render_phantom(&map, 0, &RenderConfig::default()).is_err());
    }
}
