//! Checkpoint files: the magic bytes `PCFCKPT1`, a little-endian `u64`
//! header length, a JSON header, then the parameters as little-endian
//! `f64`s.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"PCFCKPT1";

pub fn encode(header: &serde_json::Value, data: &[f64]) -> Result<Vec<u8>> {
    let h = serde_json::to_vec(header)?;
    let mut out = Vec::with_capacity(16 + h.len() + 8 * data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(h.len() as u64).to_le_bytes());
    out.extend_from_slice(&h);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<(serde_json::Value, Vec<f64>)> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Format("not a checkpoint file".into()));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes
        .get(16..16 + hlen)
        .ok_or_else(|| Error::Format("truncated checkpoint header".into()))?;
    let header = serde_json::from_slice(body)?;
    let rest = &bytes[16 + hlen..];
    if !rest.len().is_multiple_of(8) {
        return Err(Error::Format("checkpoint data is not a whole number of f64s".into()));
    }
    let data = rest
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((header, data))
}

pub fn write_checkpoint(path: &Path, header: &serde_json::Value, data: &[f64]) -> Result<()> {
    write_atomic(path, &encode(header, data)?)
}

/// Write through a temporary file in the same directory and rename it into
/// place, so a reader never sees a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<(serde_json::Value, Vec<f64>)> {
    decode(&std::fs::read(path)?)
}
