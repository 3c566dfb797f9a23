//! Feature cache files.
//!
//! Layout, little-endian:
//!
//! | field | type |
//! |-------|------|
//! | magic `NRF1` | 4 bytes |
//! | version | u32 |
//! | rows, cols | u64, u64 |
//! | base seed | u64 |
//! | scaled | u8 |
//! | architecture JSON length, bytes | u32, bytes |
//! | dataset fingerprint | u64 |
//! | raw values | f32 x rows x cols, row-major |

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::{ArchitectureSpec, Error, FeatureManifest, FeatureMatrix, Result};

pub const CACHE_MAGIC: [u8; 4] = *b"NRF1";
pub const CACHE_VERSION: u32 = 1;

pub fn encode_features(features: &FeatureMatrix<f32>, fingerprint: u64) -> Result<Vec<u8>> {
    let m = features.manifest();
    let arch = serde_json::to_vec(&m.arch)?;
    let mut out = Vec::with_capacity(45 + arch.len() + 4 * features.raw().len());
    out.extend_from_slice(&CACHE_MAGIC);
    out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    out.extend_from_slice(&(features.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(features.cols() as u64).to_le_bytes());
    out.extend_from_slice(&m.base_seed.to_le_bytes());
    out.push(m.scaled as u8);
    out.extend_from_slice(&(arch.len() as u32).to_le_bytes());
    out.extend_from_slice(&arch);
    out.extend_from_slice(&fingerprint.to_le_bytes());
    for v in features.raw() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::CorruptCache(format!("truncated: needed {n} bytes at offset {}, file has {}", self.at, self.bytes.len()))
        })?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Decodes a cache; with `expected_fingerprint` set, a cache computed from
/// different data is rejected as stale.
pub fn decode_features(bytes: &[u8], expected_fingerprint: Option<u64>) -> Result<(FeatureMatrix<f32>, u64)> {
    let mut c = Cursor { bytes, at: 0 };
    if c.take(4)? != CACHE_MAGIC {
        return Err(Error::CorruptCache("bad magic".into()));
    }
    let version = c.u32()?;
    if version != CACHE_VERSION {
        return Err(Error::CorruptCache(format!("unsupported version {version}")));
    }
    let rows = c.u64()? as usize;
    let cols = c.u64()? as usize;
    let base_seed = c.u64()?;
    let scaled = match c.take(1)?[0] {
        0 => false,
        1 => true,
        b => return Err(Error::CorruptCache(format!("bad scaled flag {b}"))),
    };
    let arch_len = c.u32()? as usize;
    let arch: ArchitectureSpec = serde_json::from_slice(c.take(arch_len)?)
        .map_err(|e| Error::CorruptCache(format!("architecture record: {e}")))?;
    let fingerprint = c.u64()?;
    if let Some(expected) = expected_fingerprint {
        if expected != fingerprint {
            return Err(Error::StaleCache { expected, found: fingerprint });
        }
    }
    let count = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::CorruptCache(format!("implausible size {rows}x{cols}")))?;
    let body = c.take(count)?;
    if c.at != bytes.len() {
        return Err(Error::CorruptCache(format!("{} trailing bytes", bytes.len() - c.at)));
    }
    let raw = body.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
    let manifest = FeatureManifest { arch, base_seed, scaled };
    let features = FeatureMatrix::from_raw(rows, cols, raw, manifest).map_err(|e| Error::CorruptCache(e.to_string()))?;
    Ok((features, fingerprint))
}

pub fn save_features(features: &FeatureMatrix<f32>, fingerprint: u64, path: &Path) -> Result<()> {
    let bytes = encode_features(features, fingerprint)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load_features(path: &Path, expected_fingerprint: Option<u64>) -> Result<(FeatureMatrix<f32>, u64)> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    decode_features(&fs::read(path)?, expected_fingerprint)
}
