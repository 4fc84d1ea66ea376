//! Binary weight files and JSON file helpers.

use std::path::Path;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::skinning::SkinningWeights;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"SKWT";

/// Magic, `N` and `B` as little-endian u32, then `N·B` f32 row-major.
pub fn weights_to_bytes(w: &SkinningWeights) -> Vec<u8> {
    let (n, b) = (w.num_vertices(), w.num_bones());
    let mut out = Vec::with_capacity(12 + 4 * n * b);
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(b as u32).to_le_bytes());
    for r in 0..n {
        for c in 0..b {
            out.extend_from_slice(&(w.w[(r, c)] as f32).to_le_bytes());
        }
    }
    out
}

pub fn weights_from_bytes(bytes: &[u8]) -> Result<SkinningWeights> {
    if bytes.len() < 12 || &bytes[..4] != WEIGHTS_MAGIC {
        return Err(Error::Schema("weights: bad magic".into()));
    }
    let u = |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize;
    let (n, b) = (u(4), u(8));
    if bytes.len() != 12 + 4 * n * b {
        return Err(Error::Schema("weights: size does not match header".into()));
    }
    let w = DMatrix::from_fn(n, b, |r, c| {
        let o = 12 + 4 * (r * b + c);
        f32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as f64
    });
    Ok(SkinningWeights { w })
}

pub fn save_weights(w: &SkinningWeights, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, weights_to_bytes(w)).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<SkinningWeights> {
    let path = path.as_ref();
    weights_from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn write_json<T: Serialize + ?Sized>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Schema(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
}

pub fn write_text(text: &str, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn create_dir(path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}
