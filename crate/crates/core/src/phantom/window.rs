//! Display windows and model-space normalisation for HU images.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ImageGrid, ValueRange};

/// HU divisor used to map images into model space.
pub const HU_SCALE: f64 = 1000.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WindowPreset {
    Full,
    Lung,
    Bone,
    SoftTissue,
}

impl WindowPreset {
    pub const ALL: [WindowPreset; 4] = [
        WindowPreset::Full,
        WindowPreset::Lung,
        WindowPreset::Bone,
        WindowPreset::SoftTissue,
    ];

    /// `(center, width)` in HU.
    pub fn center_width(self) -> (f64, f64) {
        match self {
            WindowPreset::Full => (0.0, 2000.0),
            WindowPreset::Lung => (-600.0, 1500.0),
            WindowPreset::Bone => (400.0, 1800.0),
            WindowPreset::SoftTissue => (50.0, 350.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            WindowPreset::Full => "full",
            WindowPreset::Lung => "lung",
            WindowPreset::Bone => "bone",
            WindowPreset::SoftTissue => "soft-tissue",
        }
    }
}

impl fmt::Display for WindowPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WindowPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        WindowPreset::ALL
            .into_iter()
            .find(|w| w.name() == s)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown window '{s}' (expected full, lung, bone or soft-tissue)"
                ))
            })
    }
}

fn require_hu(img: &ImageGrid) -> Result<()> {
    if img.range() != ValueRange::Hu {
        return Err(Error::invalid(format!(
            "expected an HU image, got {:?}",
            img.range()
        )));
    }
    Ok(())
}

/// Clamp to the window and rescale to [0, 1].
pub fn to_window(img: &ImageGrid, preset: WindowPreset) -> Result<ImageGrid> {
    require_hu(img)?;
    let (c, w) = preset.center_width();
    let lo = c - w / 2.0;
    Ok(img
        .map(|v| ((v.clamp(lo, lo + w) - lo) / w).clamp(0.0, 1.0))
        .with_range(ValueRange::Unit))
}

/// HU/1000 after clamping to [-1000, 1000]; also returns how many pixels
/// were clamped.
pub fn normalize_for_model(img: &ImageGrid) -> Result<(ImageGrid, usize)> {
    require_hu(img)?;
    let clamped = img.values().iter().filter(|v| v.abs() > HU_SCALE).count();
    let out = img
        .map(|v| v.clamp(-HU_SCALE, HU_SCALE) / HU_SCALE)
        .with_range(ValueRange::Normalized);
    Ok((out, clamped))
}

/// Inverse of [`normalize_for_model`] on unclamped pixels.
pub fn denormalize(img: &ImageGrid) -> ImageGrid {
    img.map(|v| v * HU_SCALE).with_range(ValueRange::Hu)
}
