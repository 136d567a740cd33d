//! Procedural chest-like anatomy maps.
//!
//! A body ellipse holds two lung blobs (closed contours from smoothed random
//! control radii), a heart ellipse touching the medial lung boundary, rib
//! arcs in a ring just inside the body outline and a spine ellipse.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::{ImageGrid, ValueRange};
use crate::rng::NoiseStream;

pub const MIN_SIZE: usize = 32;

/// Integer tissue labels carried by anatomy maps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Label {
    Background = 0,
    SoftTissue = 1,
    Lung = 2,
    Bone = 3,
    Heart = 4,
}

impl Label {
    pub const ALL: [Label; 5] = [
        Label::Background,
        Label::SoftTissue,
        Label::Lung,
        Label::Bone,
        Label::Heart,
    ];

    pub fn from_value(v: f64) -> Option<Self> {
        if v.fract() != 0.0 {
            return None;
        }
        match v as i64 {
            0 => Some(Label::Background),
            1 => Some(Label::SoftTissue),
            2 => Some(Label::Lung),
            3 => Some(Label::Bone),
            4 => Some(Label::Heart),
            _ => None,
        }
    }

    pub fn value(self) -> f64 {
        self as u8 as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub rx: f64,
    pub ry: f64,
}

impl Ellipse {
    /// Normalised radius: < 1 inside, 1 on the outline.
    #[inline]
    pub fn rho(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = ((x - self.cx) / self.rx, (y - self.cy) / self.ry);
        (dx * dx + dy * dy).sqrt()
    }

    #[inline]
    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.rho(x, y) <= 1.0
    }
}

/// Star-shaped closed curve: radius `scale(θ)·(rx cos θ, ry sin θ)` around a
/// centre, `scale` interpolated periodically between control values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Contour {
    pub cx: f64,
    pub cy: f64,
    pub rx: f64,
    pub ry: f64,
    pub control: Vec<f64>,
}

impl Contour {
    fn scale_at(&self, theta: f64) -> f64 {
        let k = self.control.len();
        let pos = theta.rem_euclid(std::f64::consts::TAU) / std::f64::consts::TAU * k as f64;
        let i = pos.floor() as usize % k;
        let f = pos - pos.floor();
        // Cosine blend keeps the outline smooth between control points.
        let w = 0.5 - 0.5 * (std::f64::consts::PI * f).cos();
        self.control[i] * (1.0 - w) + self.control[(i + 1) % k] * w
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = ((x - self.cx) / self.rx, (y - self.cy) / self.ry);
        let r = (dx * dx + dy * dy).sqrt();
        r <= self.scale_at(dy.atan2(dx))
    }

    /// Points on the outline, `n` evenly spaced angles.
    pub fn outline(&self, n: usize) -> Vec<(f64, f64)> {
        (0..n)
            .map(|i| {
                let th = i as f64 / n as f64 * std::f64::consts::TAU;
                let s = self.scale_at(th);
                (self.cx + s * self.rx * th.cos(), self.cy + s * self.ry * th.sin())
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RibSpec {
    /// Normalised body radius of the rib ring's centre line.
    pub ring: f64,
    /// Thickness in pixels.
    pub thickness: f64,
    /// Arc centre angles (radians).
    pub angles: Vec<f64>,
    /// Angular half-width of each arc (radians).
    pub half_span: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnatomySpec {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub body: Ellipse,
    pub lungs: [Contour; 2],
    pub heart: Ellipse,
    pub ribs: RibSpec,
    pub spine: Ellipse,
}

/// Lungs must fit inside the body scaled by this factor, leaving the outer
/// ring for ribs.
const LUNG_LIMIT: f64 = 0.80;

/// Draw an anatomy from `seed` and rasterise its label map. Deterministic.
pub fn gen_anatomy(seed: u64, shape: (usize, usize)) -> Result<(AnatomySpec, ImageGrid)> {
    let (w, h) = shape;
    if w < MIN_SIZE || h < MIN_SIZE {
        return Err(Error::invalid(format!(
            "anatomy maps need at least {MIN_SIZE}x{MIN_SIZE}, got {w}x{h}"
        )));
    }
    let (wf, hf) = (w as f64, h as f64);
    let mut rng = NoiseStream::new(seed);

    let body = Ellipse {
        cx: wf * (0.5 + rng.uniform_range(-0.02, 0.02)),
        cy: hf * (0.5 + rng.uniform_range(-0.02, 0.02)),
        rx: wf * rng.uniform_range(0.40, 0.45),
        ry: hf * rng.uniform_range(0.30, 0.36),
    };

    let lung = |side: f64, rng: &mut NoiseStream| -> Contour {
        let mut control: Vec<f64> = (0..12)
            .map(|_| (1.0 + 0.15 * rng.normal()).clamp(0.7, 1.3))
            .collect();
        for _ in 0..2 {
            let k = control.len();
            control = (0..k)
                .map(|i| 0.25 * control[(i + k - 1) % k] + 0.5 * control[i] + 0.25 * control[(i + 1) % k])
                .collect();
        }
        let mut c = Contour {
            cx: body.cx + side * rng.uniform_range(0.42, 0.50) * body.rx,
            cy: body.cy - rng.uniform_range(0.0, 0.08) * body.ry,
            rx: rng.uniform_range(0.26, 0.32) * body.rx,
            ry: rng.uniform_range(0.55, 0.68) * body.ry,
            control,
        };
        while c
            .outline(96)
            .iter()
            .any(|&(x, y)| body.rho(x, y) > LUNG_LIMIT)
        {
            c.rx *= 0.95;
            c.ry *= 0.95;
        }
        c
    };
    let lungs = [lung(-1.0, &mut rng), lung(1.0, &mut rng)];

    let mut heart = Ellipse {
        cx: body.cx + rng.uniform_range(-0.05, 0.10) * body.rx,
        cy: body.cy + rng.uniform_range(0.05, 0.20) * body.ry,
        rx: rng.uniform_range(0.22, 0.28) * body.rx,
        ry: rng.uniform_range(0.28, 0.36) * body.ry,
    };

    let rib_count = rng.int_inclusive(6, 10);
    let offset = rng.uniform_range(0.0, std::f64::consts::TAU);
    let angles = (0..rib_count)
        .map(|i| {
            offset
                + i as f64 / rib_count as f64 * std::f64::consts::TAU
                + rng.uniform_range(-0.1, 0.1)
        })
        .collect();
    let ribs = RibSpec {
        ring: rng.uniform_range(0.87, 0.90),
        thickness: (wf.min(hf) / 64.0) * rng.uniform_range(1.6, 2.4),
        angles,
        half_span: rng.uniform_range(0.12, 0.18),
    };

    let spine = Ellipse {
        cx: body.cx,
        cy: body.cy + 0.74 * body.ry,
        rx: 0.08 * body.rx,
        ry: 0.11 * body.ry,
    };

    // Grow the heart until it reaches the medial boundary of a lung.
    let mut spec;
    let mut map;
    loop {
        spec = AnatomySpec {
            seed,
            width: w,
            height: h,
            body,
            lungs: lungs.clone(),
            heart,
            ribs: ribs.clone(),
            spine,
        };
        map = rasterize(&spec);
        if heart_touches_lung(&map) || heart.rx > body.rx * 0.6 {
            break;
        }
        heart.rx *= 1.05;
        heart.ry *= 1.05;
    }
    Ok((spec, map))
}

fn in_rib(spec: &AnatomySpec, x: f64, y: f64) -> bool {
    let b = &spec.body;
    let rho = b.rho(x, y);
    let mean_r = 0.5 * (b.rx + b.ry);
    let half = 0.5 * spec.ribs.thickness / mean_r;
    if (rho - spec.ribs.ring).abs() > half {
        return false;
    }
    let th = ((y - b.cy) / b.ry).atan2((x - b.cx) / b.rx);
    spec.ribs.angles.iter().any(|&a| {
        let d = (th - a + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU) - std::f64::consts::PI;
        d.abs() <= spec.ribs.half_span
    })
}

/// Label map for a spec. Paint order: body, spine, ribs, lungs, heart.
pub fn rasterize(spec: &AnatomySpec) -> ImageGrid {
    ImageGrid::from_fn(spec.width, spec.height, ValueRange::Label, |px, py| {
        let (x, y) = (px as f64 + 0.5, py as f64 + 0.5);
        if !spec.body.contains(x, y) {
            return Label::Background.value();
        }
        let mut label = Label::SoftTissue;
        if spec.spine.contains(x, y) || in_rib(spec, x, y) {
            label = Label::Bone;
        }
        if spec.lungs.iter().any(|l| l.contains(x, y)) {
            label = Label::Lung;
        }
        if spec.heart.contains(x, y) {
            label = Label::Heart;
        }
        label.value()
    })
}

fn neighbours(map: &ImageGrid, x: usize, y: usize) -> impl Iterator<Item = f64> + '_ {
    let (w, h) = map.shape();
    let mut out = Vec::with_capacity(4);
    if x > 0 {
        out.push(map.get(x - 1, y));
    }
    if x + 1 < w {
        out.push(map.get(x + 1, y));
    }
    if y > 0 {
        out.push(map.get(x, y - 1));
    }
    if y + 1 < h {
        out.push(map.get(x, y + 1));
    }
    out.into_iter()
}

fn heart_touches_lung(map: &ImageGrid) -> bool {
    let (w, h) = map.shape();
    (0..h).any(|y| {
        (0..w).any(|x| {
            map.get(x, y) == Label::Heart.value()
                && neighbours(map, x, y).any(|v| v == Label::Lung.value())
        })
    })
}

/// Every violated anatomy invariant, empty when the map is valid.
pub fn anatomy_violations(spec: &AnatomySpec, map: &ImageGrid) -> Vec<String> {
    let mut out = Vec::new();
    let (w, h) = map.shape();
    if (w, h) != (spec.width, spec.height) {
        out.push(format!("map is {w}x{h}, spec says {}x{}", spec.width, spec.height));
        return out;
    }
    let mut counts = [0usize; 5];
    for &v in map.values() {
        match Label::from_value(v) {
            Some(l) => counts[l as usize] += 1,
            None => {
                out.push(format!("unknown label value {v}"));
                return out;
            }
        }
    }
    for l in Label::ALL {
        if counts[l as usize] == 0 {
            out.push(format!("label {l:?} missing"));
        }
    }
    let b = &spec.body;
    if b.cx - b.rx < 0.0 || b.cy - b.ry < 0.0 || b.cx + b.rx > w as f64 || b.cy + b.ry > h as f64 {
        out.push("body ellipse leaves the image".into());
    }
    for y in 0..h {
        for x in 0..w {
            let v = map.get(x, y);
            let border = x == 0 || y == 0 || x + 1 == w || y + 1 == h;
            if border && v != Label::Background.value() {
                out.push(format!("tissue at image border ({x}, {y})"));
            }
            if v == Label::Lung.value() {
                let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
                if !b.contains(cx, cy) || neighbours(map, x, y).any(|n| n == Label::Background.value()) {
                    out.push(format!("lung pixel ({x}, {y}) outside body"));
                }
            }
        }
    }
    if !heart_touches_lung(map) {
        out.push("heart does not meet a lung boundary".into());
    }
    out
}

/// SHA-256 of the label bytes, hex encoded.
pub fn anatomy_hash(map: &ImageGrid) -> String {
    let mut hasher = Sha256::new();
    hasher.update((map.width() as u32).to_le_bytes());
    hasher.update((map.height() as u32).to_le_bytes());
    let bytes: Vec<u8> = map.values().iter().map(|&v| v as u8).collect();
    hasher.update(&bytes);
    hex::encode(hasher.finalize())
}
