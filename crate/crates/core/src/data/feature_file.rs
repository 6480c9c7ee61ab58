//! Binary feature matrix files.
//!
//! ```text
//! magic    "WFTF"
//! version  u32 LE
//! frames   u32 LE (T ≥ 1)
//! dim      u32 LE (D ≥ 1)
//! payload  f32 LE × T·D, row-major
//! ```
//!
//! Values are stored as `f32`; a sequence whose values are already
//! representable in `f32` round-trips bit-exactly.

use std::path::Path;

use super::FeatureSequence;
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"WFTF";
pub const FEATURE_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

pub fn encode(seq: &FeatureSequence) -> Result<Vec<u8>> {
    let frames = u32::try_from(seq.frames()).map_err(|_| Error::Data("too many frames".into()))?;
    let dim = u32::try_from(seq.dim()).map_err(|_| Error::Data("feature dim too large".into()))?;
    if let Some(i) = seq.data().iter().position(|v| !v.is_finite()) {
        return Err(Error::Data(format!("non-finite feature value at index {i}")));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * seq.data().len());
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&frames.to_le_bytes());
    out.extend_from_slice(&dim.to_le_bytes());
    for &v in seq.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<FeatureSequence> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(
            bytes.len(),
            format!("truncated header: {} of {HEADER_LEN} bytes", bytes.len()),
        ));
    }
    if &bytes[..4] != FEATURE_MAGIC {
        return Err(Error::format(0, "bad magic, expected \"WFTF\""));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let version = word(4);
    if version != FEATURE_VERSION {
        return Err(Error::format(4, format!("unsupported feature file version {version}")));
    }
    let (frames, dim) = (word(8) as usize, word(12) as usize);
    if frames == 0 {
        return Err(Error::format(8, "zero frames"));
    }
    if dim == 0 {
        return Err(Error::format(12, "zero feature dimension"));
    }
    let expected = frames
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::format(8, format!("{frames}×{dim} payload overflows")))?;
    if bytes.len() < expected {
        return Err(Error::format(
            bytes.len(),
            format!("truncated payload: expected {expected} bytes, got {}", bytes.len()),
        ));
    }
    if bytes.len() > expected {
        return Err(Error::format(
            expected,
            format!("{} trailing bytes", bytes.len() - expected),
        ));
    }
    let mut data = Vec::with_capacity(frames * dim);
    for (i, chunk) in bytes[HEADER_LEN..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::format(HEADER_LEN + 4 * i, "non-finite value"));
        }
        data.push(v as f64);
    }
    FeatureSequence::new(frames, dim, data)
}

pub fn write(path: &Path, seq: &FeatureSequence) -> Result<()> {
    let bytes = encode(seq).map_err(|e| e.in_file(path))?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<FeatureSequence> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| e.in_file(path))
}
