//! Single-channel 2-D rasters.
//!
//! [`ImageGrid`] carries every image-shaped quantity in the crate: clean data,
//! noisy latents, noise draws, guidance references and anatomy label maps.
//! Pixels are stored row-major as `f64`; the on-disk format narrows to `f32`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Semantic tag describing which intensity scale a grid's values live on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValueRange {
    /// Model space, nominally [-1, 1].
    Normalized,
    /// Hounsfield units, nominally [-1000, 1000].
    Hu,
    /// Binary mask {0, 1}.
    Binary,
    /// Display intensity in [0, 1] (window output, metric input).
    Unit,
    /// Integer anatomy labels.
    Label,
}

impl ValueRange {
    pub fn tag(self) -> u8 {
        match self {
            ValueRange::Normalized => 0,
            ValueRange::Hu => 1,
            ValueRange::Binary => 2,
            ValueRange::Unit => 3,
            ValueRange::Label => 4,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => ValueRange::Normalized,
            1 => ValueRange::Hu,
            2 => ValueRange::Binary,
            3 => ValueRange::Unit,
            4 => ValueRange::Label,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageGrid {
    width: usize,
    height: usize,
    values: Vec<f64>,
    range: ValueRange,
}

impl ImageGrid {
    pub fn new(width: usize, height: usize, values: Vec<f64>, range: ValueRange) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!(
                "grid dimensions must be positive, got {width}x{height}"
            )));
        }
        let expected = width
            .checked_mul(height)
            .ok_or_else(|| Error::invalid("grid dimensions overflow"))?;
        if values.len() != expected {
            return Err(Error::invalid(format!(
                "grid {width}x{height} needs {expected} values, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite value {} at index {i}",
                values[i]
            )));
        }
        Ok(Self {
            width,
            height,
            values,
            range,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64, range: ValueRange) -> Self {
        assert!(width > 0 && height > 0, "grid dimensions must be positive");
        Self {
            width,
            height,
            values: vec![value; width * height],
            range,
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0, ValueRange::Normalized)
    }

    /// Build a grid from a function of `(x, y)`.
    pub fn from_fn(
        width: usize,
        height: usize,
        range: ValueRange,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Self {
        assert!(width > 0 && height > 0, "grid dimensions must be positive");
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            values,
            range,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    /// `(width, height)`.
    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn range(&self) -> ValueRange {
        self.range
    }

    pub fn with_range(mut self, range: ValueRange) -> Self {
        self.range = range;
        self
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.values[y * self.width + x] = v;
    }

    pub fn ensure_same_shape(&self, other: &ImageGrid) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.shape(),
                actual: other.shape(),
            });
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ImageGrid {
        ImageGrid {
            width: self.width,
            height: self.height,
            values: self.values.iter().map(|&v| f(v)).collect(),
            range: self.range,
        }
    }

    /// Elementwise combination of two equally shaped grids. The result keeps
    /// `self`'s range tag.
    pub fn zip_map(&self, other: &ImageGrid, f: impl Fn(f64, f64) -> f64) -> Result<ImageGrid> {
        self.ensure_same_shape(other)?;
        Ok(ImageGrid {
            width: self.width,
            height: self.height,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            range: self.range,
        })
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Largest absolute elementwise difference.
    pub fn max_abs_diff(&self, other: &ImageGrid) -> f64 {
        debug_assert_eq!(self.shape(), other.shape());
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Bitwise equality of payloads (distinguishes -0.0 from 0.0).
    pub fn bitwise_eq(&self, other: &ImageGrid) -> bool {
        self.shape() == other.shape()
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_length_and_non_finite() {
        assert!(ImageGrid::new(2, 2, vec![0.0; 3], ValueRange::Hu).is_err());
        assert!(ImageGrid::new(2, 1, vec![0.0, f64::NAN], ValueRange::Hu).is_err());
        assert!(ImageGrid::new(0, 1, vec![], ValueRange::Hu).is_err());
    }

    #[test]
    fn row_major_indexing() {
        let g = ImageGrid::from_fn(3, 2, ValueRange::Normalized, |x, y| (10 * y + x) as f64);
        assert_eq!(g.values(), &[0.0, 1.0, 2.0, 10.0, 11.0, 12.0]);
        assert_eq!(g.get(2, 1), 12.0);
    }

    #[test]
    fn tag_roundtrip() {
        for r in [
            ValueRange::Normalized,
            ValueRange::Hu,
            ValueRange::Binary,
            ValueRange::Unit,
            ValueRange::Label,
        ] {
            assert_eq!(ValueRange::from_tag(r.tag()), Some(r));
        }
        assert_eq!(ValueRange::from_tag(9), None);
    }
}
