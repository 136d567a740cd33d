//! Procedural annotated phantoms: anatomy maps, HU rendering and windows.

pub mod anatomy;
pub mod render;
pub mod window;

pub use anatomy::{anatomy_hash, anatomy_violations, gen_anatomy, rasterize, AnatomySpec, Label};
pub use render::{render_phantom, tissue_profile, RenderConfig, TissueProfile};
pub use window::{denormalize, normalize_for_model, to_window, WindowPreset, HU_SCALE};

use crate::error::Result;
use crate::grid::ImageGrid;

/// Noise-free rendering of a label map in model space, used as a guidance
/// reference.
pub fn map_to_reference(map: &ImageGrid) -> Result<ImageGrid> {
    let hu = render_phantom(map, 0, &RenderConfig::noise_free())?;
    Ok(normalize_for_model(&hu)?.0)
}
