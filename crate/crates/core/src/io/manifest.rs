//! JSON manifests: datasets, guidance conditions and run records.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ImageGrid, ValueRange};
use crate::guidance::{GuidanceOptions, GuidanceSet, GuidanceSpec};
use crate::phantom::{map_to_reference, normalize_for_model};

use super::{read_bytes, read_image, read_json, resolve, sha256_hex};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    pub index: usize,
    pub anatomy_seed: u64,
    pub texture_seed: u64,
    /// Paths relative to the manifest's directory.
    pub image: String,
    pub map: String,
    pub anatomy_hash: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub samples: Vec<DatasetEntry>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    /// Every HU image of the dataset in model space.
    pub fn load_images(&self, manifest_path: &Path) -> Result<Vec<ImageGrid>> {
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        self.samples
            .iter()
            .map(|s| {
                let img = read_image(&resolve(base, &s.image))?;
                Ok(normalize_for_model(&img)?.0)
            })
            .collect()
    }

    pub fn load_maps(&self, manifest_path: &Path) -> Result<Vec<ImageGrid>> {
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        self.samples
            .iter()
            .map(|s| read_image(&resolve(base, &s.map)))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuidanceEntry {
    /// IMGF reference relative to the manifest. Label maps are rendered
    /// noise-free, HU images are normalised, model-space images are used
    /// as they are.
    pub image: String,
    pub n: usize,
    pub a: usize,
    #[serde(default)]
    pub label: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuidanceManifest {
    #[serde(default)]
    pub allow_over_limit: bool,
    #[serde(default)]
    pub allow_any_factor: bool,
    pub conditions: Vec<GuidanceEntry>,
}

impl GuidanceManifest {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    /// Read every reference and build the condition set.
    pub fn to_guidance_set(&self, manifest_path: &Path) -> Result<GuidanceSet> {
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        let specs = self
            .conditions
            .iter()
            .map(|c| {
                let img = read_image(&resolve(base, &c.image))?;
                let y = match img.range() {
                    ValueRange::Label => map_to_reference(&img)?,
                    ValueRange::Hu => normalize_for_model(&img)?.0,
                    ValueRange::Normalized => img,
                    other => {
                        return Err(Error::invalid(format!(
                            "guidance reference {} has unsupported range {other:?}",
                            c.image
                        )))
                    }
                };
                Ok(GuidanceSpec::new(y, c.n, c.a, c.label.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        GuidanceSet::new(
            specs,
            GuidanceOptions {
                allow_over_limit: self.allow_over_limit,
                allow_any_factor: self.allow_any_factor,
            },
        )
    }
}

/// Load a guidance manifest, returning the condition set and the SHA-256 of
/// the manifest bytes.
pub fn load_guidance(path: &Path) -> Result<(GuidanceSet, String)> {
    let hash = sha256_hex(&read_bytes(path)?);
    let set = GuidanceManifest::load(path)?.to_guidance_set(path)?;
    Ok((set, hash))
}

/// Deterministic summary of one command's outputs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    /// SHA-256 of the stored config copy, when the command used one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_sha256: Option<String>,
    pub seeds: BTreeMap<String, u64>,
    /// Artifact path (relative to the record) to SHA-256.
    pub artifacts: BTreeMap<String, String>,
    pub metrics: BTreeMap<String, f64>,
}

/// Wall-clock timings, kept out of [`RunRecord`] so records stay
/// reproducible.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub seconds: BTreeMap<String, f64>,
}
