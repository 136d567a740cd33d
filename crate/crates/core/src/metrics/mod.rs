//! Image-set quality metrics.

pub mod features;
pub mod frechet;
pub mod ssim;

pub use features::{FeatureExtractor, FEATURE_DIM};
pub use frechet::{extract_stats, fit_gaussian, frechet_distance, GaussianStats};
pub use ssim::{best_matches, set_ssim, ssim, SSIM_WINDOW};

use crate::grid::{ImageGrid, ValueRange};

/// Map a model-space image (`[-1, 1]`) to `[0, 1]`; other ranges pass
/// through unchanged.
pub fn to_unit_range(img: &ImageGrid) -> ImageGrid {
    match img.range() {
        ValueRange::Normalized => img
            .map(|v| ((v + 1.0) / 2.0).clamp(0.0, 1.0))
            .with_range(ValueRange::Unit),
        _ => img.clone(),
    }
}
