//! Versioned little-endian binary formats.
//!
//! ```text
//! IMGF  "IMGF" | u32 version | u32 width | u32 height | u8 range tag
//!       | width·height × f32 pixels, row-major
//! VSCH  "VSCH" | u32 version | u32 T | u8 kind | T × f64 betas
//! DNSR  "DNSR" | u32 version | u32 descriptor length | descriptor (UTF-8
//!       JSON architecture) | u64 parameter count | count × f32 parameters
//! ```
//!
//! Readers reject any version other than the current one, trailing bytes,
//! and non-finite payload values.

use crate::denoiser::{Architecture, SmallDenoiserNet};
use crate::error::{FormatError, Result};
use crate::grid::{ImageGrid, ValueRange};
use crate::schedule::{ScheduleKind, VarianceSchedule};

pub const IMGF_MAGIC: [u8; 4] = *b"IMGF";
pub const VSCH_MAGIC: [u8; 4] = *b"VSCH";
pub const DNSR_MAGIC: [u8; 4] = *b"DNSR";
pub const IMGF_VERSION: u32 = 1;
pub const VSCH_VERSION: u32 = 1;
pub const DNSR_VERSION: u32 = 1;

/// Largest pixel count a reader will allocate for.
pub const MAX_PIXELS: u64 = 1 << 28;
/// Largest step count or parameter count a reader will allocate for.
pub const MAX_ITEMS: u64 = 1 << 30;
const MAX_DESCRIPTOR: u32 = 1 << 20;

struct Reader<'a> {
    format: &'static str,
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(format: &'static str, buf: &'a [u8], magic: [u8; 4], version: u32) -> Result<Self, FormatError> {
        let mut r = Reader { format, buf, pos: 0 };
        let found: [u8; 4] = r.take(4)?.try_into().unwrap();
        if found != magic {
            return Err(FormatError::BadMagic { expected: magic, found });
        }
        let v = r.u32()?;
        if v != version {
            return Err(FormatError::UnsupportedVersion {
                format,
                found: v,
                supported: version,
            });
        }
        Ok(r)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let available = self.buf.len() - self.pos;
        if n > available {
            return Err(FormatError::Truncated {
                format: self.format,
                needed: self.pos + n,
                available: self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, FormatError> {
        let bytes = self.take(n * 4)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, FormatError> {
        let bytes = self.take(n * 8)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn finish(self) -> Result<(), FormatError> {
        let extra = self.buf.len() - self.pos;
        if extra > 0 {
            return Err(FormatError::TrailingData {
                format: self.format,
                extra,
            });
        }
        Ok(())
    }

    fn invalid(&self, detail: impl Into<String>) -> FormatError {
        FormatError::InvalidField {
            format: self.format,
            detail: detail.into(),
        }
    }
}

fn to_f32(format: &'static str, v: f64) -> Result<f32, FormatError> {
    let f = v as f32;
    if !f.is_finite() {
        return Err(FormatError::InvalidField {
            format,
            detail: format!("value {v} does not fit in f32"),
        });
    }
    Ok(f)
}

/// Pixels are stored as `f32`; values that are not exactly representable
/// are rounded.
pub fn encode_image(img: &ImageGrid) -> Result<Vec<u8>> {
    let (w, h) = img.shape();
    let mut out = Vec::with_capacity(17 + 4 * img.len());
    out.extend_from_slice(&IMGF_MAGIC);
    out.extend_from_slice(&IMGF_VERSION.to_le_bytes());
    out.extend_from_slice(&(w as u32).to_le_bytes());
    out.extend_from_slice(&(h as u32).to_le_bytes());
    out.push(img.range().tag());
    for &v in img.values() {
        out.extend_from_slice(&to_f32("IMGF", v)?.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_image(buf: &[u8]) -> Result<ImageGrid> {
    let mut r = Reader::new("IMGF", buf, IMGF_MAGIC, IMGF_VERSION)?;
    let w = r.u32()? as u64;
    let h = r.u32()? as u64;
    let n = w * h;
    if w == 0 || h == 0 || n > MAX_PIXELS {
        return Err(FormatError::ShapeOverflow {
            format: "IMGF",
            detail: format!("{w}x{h} pixels"),
        }
        .into());
    }
    let tag = r.u8()?;
    let range = ValueRange::from_tag(tag).ok_or_else(|| r.invalid(format!("unknown value-range tag {tag}")))?;
    let px = r.f32s(n as usize)?;
    r.finish()?;
    if px.iter().any(|p| !p.is_finite()) {
        return Err(FormatError::InvalidField {
            format: "IMGF",
            detail: "non-finite pixel".into(),
        }
        .into());
    }
    ImageGrid::new(w as usize, h as usize, px.into_iter().map(f64::from).collect(), range)
}

pub fn encode_schedule(s: &VarianceSchedule) -> Vec<u8> {
    let mut out = Vec::with_capacity(13 + 8 * s.steps());
    out.extend_from_slice(&VSCH_MAGIC);
    out.extend_from_slice(&VSCH_VERSION.to_le_bytes());
    out.extend_from_slice(&(s.steps() as u32).to_le_bytes());
    out.push(s.kind().tag());
    for b in s.betas() {
        out.extend_from_slice(&b.to_le_bytes());
    }
    out
}

/// Derived arrays are recomputed from the stored betas.
pub fn decode_schedule(buf: &[u8]) -> Result<VarianceSchedule> {
    let mut r = Reader::new("VSCH", buf, VSCH_MAGIC, VSCH_VERSION)?;
    let t = r.u32()? as u64;
    if t == 0 || t > MAX_ITEMS {
        return Err(FormatError::ShapeOverflow {
            format: "VSCH",
            detail: format!("{t} steps"),
        }
        .into());
    }
    let tag = r.u8()?;
    let kind = ScheduleKind::from_tag(tag).ok_or_else(|| r.invalid(format!("unknown schedule kind {tag}")))?;
    let betas = r.f64s(t as usize)?;
    r.finish()?;
    VarianceSchedule::from_betas(kind, betas).map_err(|e| {
        FormatError::InvalidField {
            format: "VSCH",
            detail: e.to_string(),
        }
        .into()
    })
}

pub fn encode_checkpoint(net: &SmallDenoiserNet) -> Vec<u8> {
    let desc = serde_json::to_vec(net.architecture()).expect("architecture serialises");
    let params = net.parameters();
    let mut out = Vec::with_capacity(24 + desc.len() + 4 * params.len());
    out.extend_from_slice(&DNSR_MAGIC);
    out.extend_from_slice(&DNSR_VERSION.to_le_bytes());
    out.extend_from_slice(&(desc.len() as u32).to_le_bytes());
    out.extend_from_slice(&desc);
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<SmallDenoiserNet> {
    let mut r = Reader::new("DNSR", buf, DNSR_MAGIC, DNSR_VERSION)?;
    let dlen = r.u32()?;
    if dlen > MAX_DESCRIPTOR {
        return Err(FormatError::ShapeOverflow {
            format: "DNSR",
            detail: format!("{dlen}-byte descriptor"),
        }
        .into());
    }
    let desc = r.take(dlen as usize)?;
    let arch: Architecture =
        serde_json::from_slice(desc).map_err(|e| r.invalid(format!("architecture descriptor: {e}")))?;
    let count = r.u64()?;
    if count > MAX_ITEMS {
        return Err(FormatError::ShapeOverflow {
            format: "DNSR",
            detail: format!("{count} parameters"),
        }
        .into());
    }
    if arch.validate().is_err() || arch.param_count() as u64 != count {
        return Err(r
            .invalid(format!("descriptor does not describe {count} parameters"))
            .into());
    }
    let params = r.f32s(count as usize)?;
    r.finish()?;
    if params.iter().any(|p| !p.is_finite()) {
        return Err(FormatError::InvalidField {
            format: "DNSR",
            detail: "non-finite parameter".into(),
        }
        .into());
    }
    SmallDenoiserNet::from_parameters(arch, params)
}
