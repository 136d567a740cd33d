//! Artifact persistence: binary formats, text exports, manifests and the
//! experiment configuration.
//!
//! Writers stage bytes in a temporary sibling file and rename it over the
//! target while holding an exclusive advisory lock on the target, so
//! readers never observe a partial artifact.

pub mod binary;
pub mod config;
pub mod manifest;
pub mod text;

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::denoiser::SmallDenoiserNet;
use crate::error::{Error, Result};
use crate::grid::ImageGrid;
use crate::schedule::VarianceSchedule;

pub use binary::{
    decode_checkpoint, decode_image, decode_schedule, encode_checkpoint, encode_image, encode_schedule,
};
pub use config::{validate_config, ExperimentConfig};
pub use manifest::{DatasetEntry, DatasetManifest, GuidanceEntry, GuidanceManifest, RunRecord, Timings};
pub use text::{decode_loss_csv, encode_loss_csv, encode_pgm};

/// Suffix of files excluded from [`tree_hash`] (wall-clock data).
pub const TIMINGS_SUFFIX: &str = ".timings.json";

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Atomically replace `path` with `bytes`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let err = |e| Error::io(path, e);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let target = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(err)?;
    target.lock().map_err(err)?;

    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("{} is not a file path", path.display())))?
        .to_string_lossy();
    let tmp = path.with_file_name(format!(".{name}.{}.tmp", std::process::id()));
    let result = (|| -> std::io::Result<()> {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    drop(target);
    result.map_err(err)
}

pub fn read_image(path: &Path) -> Result<ImageGrid> {
    decode_image(&read_bytes(path)?)
}

pub fn write_image(path: &Path, img: &ImageGrid) -> Result<()> {
    write_atomic(path, &encode_image(img)?)
}

pub fn read_schedule(path: &Path) -> Result<VarianceSchedule> {
    decode_schedule(&read_bytes(path)?)
}

pub fn write_schedule(path: &Path, s: &VarianceSchedule) -> Result<()> {
    write_atomic(path, &encode_schedule(s))
}

pub fn read_checkpoint(path: &Path) -> Result<SmallDenoiserNet> {
    decode_checkpoint(&read_bytes(path)?)
}

pub fn write_checkpoint(path: &Path, net: &SmallDenoiserNet) -> Result<()> {
    write_atomic(path, &encode_checkpoint(net))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| Error::invalid(format!("cannot serialise {}: {e}", path.display())))?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes)
        .map_err(|e| Error::Config(vec![format!("{}: {e}", path.display())]))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Resolve `p` against `base` unless it is absolute.
pub fn resolve(base: &Path, p: impl AsRef<Path>) -> PathBuf {
    let p = p.as_ref();
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// SHA-256 of every regular file under `dir` keyed by relative path
/// (forward slashes), skipping timing sidecars.
pub fn file_hashes(dir: &Path) -> Result<BTreeMap<String, String>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
        let mut entries: Vec<_> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .collect::<std::io::Result<_>>()
            .map_err(|e| Error::io(dir, e))?;
        entries.sort_by_key(|e| e.file_name());
        for e in entries {
            let p = e.path();
            if p.is_dir() {
                walk(root, &p, out)?;
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
                if rel.ends_with(TIMINGS_SUFFIX) {
                    continue;
                }
                out.insert(rel, sha256_hex(&read_bytes(&p)?));
            }
        }
        Ok(())
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out)?;
    Ok(out)
}

/// One digest over [`file_hashes`].
pub fn tree_hash(dir: &Path) -> Result<String> {
    let mut h = Sha256::new();
    for (k, v) in file_hashes(dir)? {
        h.update(k.as_bytes());
        h.update([0]);
        h.update(v.as_bytes());
        h.update([b'\n']);
    }
    Ok(hex::encode(h.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::ValueRange;

    #[test]
    fn atomic_write_replaces_and_leaves_no_temp_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/a.bin");
        write_atomic(&p, b"first").unwrap();
        write_atomic(&p, b"second").unwrap();
        assert_eq!(read_bytes(&p).unwrap(), b"second");
        let names: Vec<_> = fs::read_dir(dir.path().join("sub")).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names.len(), 1);
    }

    #[test]
    fn tree_hash_ignores_timings() {
        let dir = tempfile::tempdir().unwrap();
        write_image(&dir.path().join("x.imgf"), &ImageGrid::filled(2, 2, 0.5, ValueRange::Unit)).unwrap();
        let before = tree_hash(dir.path()).unwrap();
        write_atomic(&dir.path().join("run.timings.json"), b"{\"t\": 1}").unwrap();
        assert_eq!(tree_hash(dir.path()).unwrap(), before);
        write_atomic(&dir.path().join("y.txt"), b"y").unwrap();
        assert_ne!(tree_hash(dir.path()).unwrap(), before);
    }

    #[test]
    fn missing_files_are_io_errors() {
        let e = read_image(Path::new("/nonexistent/x.imgf")).unwrap_err();
        assert_eq!(e.exit_code(), 4);
    }
}
