//! Bag binary format, little-endian:
//!
//! ```text
//! "SMLB"   4 bytes magic
//! version  u16
//! H        u32   feature dimension
//! I        u32   number of tiles (>= 1)
//! I·H      f32   tile-major: tile 0 features, tile 1 features, ...
//! ```
//!
//! Padding is never written; only real tiles are stored.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::math::DenseMatrix;
use crate::mil::TileBag;

pub const BAG_MAGIC: &[u8; 4] = b"SMLB";
pub const BAG_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 + 4;

pub fn encode_bag(bag: &TileBag) -> Vec<u8> {
    let h = bag.dim();
    let n = bag.real_tile_count();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * h * n);
    out.extend_from_slice(BAG_MAGIC);
    out.extend_from_slice(&BAG_VERSION.to_le_bytes());
    out.extend_from_slice(&(h as u32).to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    let f = bag.features();
    for i in 0..n {
        for r in 0..h {
            out.extend_from_slice(&(f.get(r, i) as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_bag(
    bytes: &[u8],
    patient_id: &str,
    wsi_id: &str,
    path: &Path,
) -> Result<TileBag> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(path, "truncated header"));
    }
    if &bytes[..4] != BAG_MAGIC {
        return Err(Error::format(path, "bad magic, expected SMLB"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != BAG_VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let h = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
    let n = u32::from_le_bytes(bytes[10..14].try_into().expect("4 bytes")) as usize;
    if n == 0 {
        return Err(Error::format(path, "bag has zero tiles"));
    }
    if h == 0 {
        return Err(Error::format(path, "feature dimension is zero"));
    }
    let payload = h
        .checked_mul(n)
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| Error::format(path, "dimension overflow"))?;
    let body = &bytes[HEADER_LEN..];
    if body.len() < payload {
        return Err(Error::format(
            path,
            format!("truncated: {} payload bytes, expected {payload}", body.len()),
        ));
    }
    if body.len() > payload {
        return Err(Error::format(path, "trailing bytes after payload"));
    }
    let mut features = DenseMatrix::zeros(h, n);
    for (k, chunk) in body.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        if !v.is_finite() {
            return Err(Error::format(path, format!("non-finite value at index {k}")));
        }
        features.set(k % h, k / h, f64::from(v));
    }
    TileBag::new(patient_id, wsi_id, features)
}

pub fn write_bag(bag: &TileBag, path: &Path) -> Result<()> {
    fs::write(path, encode_bag(bag)).map_err(|e| Error::io(path, e))
}

pub fn read_bag(path: &Path, patient_id: &str, wsi_id: &str) -> Result<TileBag> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_bag(&bytes, patient_id, wsi_id, path)
}
