//! Checkpoint file format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! 0..8    magic "EPOOLCK\0"
//! 8..12   format version (1)
//! 12..16  reserved zeros
//! 16..24  model spec hash (u64)
//! 24..32  training step (u64)
//! 32..36  parameter count (u32)
//! …       manifest records: u32 name_len, name UTF-8, u8 rank (4),
//!          rank×u32 dims, u64 blob offset (8-byte aligned)
//! …       zero padding to the next 8-byte boundary
//! …       u64 blob length, then the f32 LE blob
//! last 32 SHA-256 of every preceding byte
//! ```
//!
//! Values are always stored in single precision regardless of the compute
//! precision; loading restores them bit-identically into f32 models.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::Network;
use crate::scalar::Scalar;
use crate::tensor::{Parameter, Shape, Tensor};

const MAGIC: &[u8; 8] = b"EPOOLCK\0";
const VERSION: u32 = 1;

/// Stable 64-bit hash of a model's canonical spec string.
pub fn spec_hash(spec: &str) -> u64 {
    let digest = Sha256::digest(spec.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("digest length"))
}

struct Entry {
    name: String,
    shape: Shape,
    values: Vec<f32>,
}

fn encode(entries: &[Entry], spec_hash: u64, step: u64) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&[0u8; 4]);
    out.extend_from_slice(&spec_hash.to_le_bytes());
    out.extend_from_slice(&step.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());

    let mut offset = 0u64;
    for e in entries {
        let name = e.name.as_bytes();
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name);
        out.push(4);
        for d in [e.shape.n, e.shape.c, e.shape.h, e.shape.w] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&offset.to_le_bytes());
        let bytes = (e.values.len() * 4) as u64;
        offset += (bytes + 7) / 8 * 8; // keep every segment 8-byte aligned
    }

    while out.len() % 8 != 0 {
        out.push(0);
    }
    out.extend_from_slice(&offset.to_le_bytes());
    let blob_start = out.len();
    out.resize(blob_start + offset as usize, 0);
    let mut cursor = 0usize;
    for e in entries {
        for v in &e.values {
            out[blob_start + cursor..blob_start + cursor + 4].copy_from_slice(&v.to_le_bytes());
            cursor += 4;
        }
        cursor = (cursor + 7) / 8 * 8;
    }

    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn decode(bytes: &[u8]) -> Result<(u64, u64, Vec<Entry>)> {
    if bytes.len() < 68 {
        return Err(Error::Checkpoint("file too small".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    let expect = Sha256::digest(body);
    if expect.as_slice() != digest {
        return Err(Error::Checkpoint("integrity check failed (corrupted file)".into()));
    }

    let mut c = Cursor { bytes: body, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version} (expected {VERSION})"
        )));
    }
    c.take(4)?;
    let spec = c.u64()?;
    let step = c.u64()?;
    let count = c.u32()? as usize;

    let mut headers = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = c.u32()? as usize;
        let name = String::from_utf8(c.take(name_len)?.to_vec())
            .map_err(|_| Error::Checkpoint("manifest name is not UTF-8".into()))?;
        let rank = c.take(1)?[0];
        if rank != 4 {
            return Err(Error::Checkpoint(format!("unsupported rank {rank} for '{name}'")));
        }
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = c.u32()? as usize;
        }
        let offset = c.u64()?;
        headers.push((name, Shape::new(dims[0], dims[1], dims[2], dims[3]), offset));
    }

    while c.pos % 8 != 0 {
        c.take(1)?;
    }
    let blob_len = c.u64()? as usize;
    let blob = c.take(blob_len)?;
    if c.pos != body.len() {
        return Err(Error::Checkpoint("trailing bytes after blob".into()));
    }

    let mut entries = Vec::with_capacity(count);
    for (name, shape, offset) in headers {
        let n = shape.numel();
        let start = offset as usize;
        if start % 8 != 0 || start + n * 4 > blob.len() {
            return Err(Error::Checkpoint(format!(
                "blob segment for '{name}' out of bounds"
            )));
        }
        let values = blob[start..start + n * 4]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        entries.push(Entry { name, shape, values });
    }
    Ok((spec, step, entries))
}

/// Write the model's parameters (single precision) plus its spec hash and
/// the training step.
pub fn save<T: Scalar>(model: &dyn Network<T>, step: u64, path: &Path) -> Result<()> {
    let entries: Vec<Entry> = model
        .parameters()
        .iter()
        .map(|p| {
            let value = p.value();
            Entry {
                name: p.name().to_string(),
                shape: p.shape(),
                values: value.values().iter().map(|v| v.as_f64() as f32).collect(),
            }
        })
        .collect();
    let bytes = encode(&entries, spec_hash(&model.spec_string()), step);
    fs::write(path, bytes)?;
    Ok(())
}

/// Restore parameters into a compatible model; returns the stored training
/// step. Parameters are matched by name, so manifest order is irrelevant.
pub fn load_into<T: Scalar>(model: &dyn Network<T>, path: &Path) -> Result<u64> {
    let bytes = fs::read(path)?;
    let (stored_hash, step, entries) = decode(&bytes)?;
    let expect = spec_hash(&model.spec_string());
    if stored_hash != expect {
        return Err(Error::Checkpoint(format!(
            "model spec mismatch: checkpoint {stored_hash:#018x} vs model {expect:#018x}"
        )));
    }

    let params: Vec<Arc<Parameter<T>>> = model.parameters();
    if params.len() != entries.len() {
        return Err(Error::Checkpoint(format!(
            "parameter count mismatch: checkpoint has {}, model has {}",
            entries.len(),
            params.len()
        )));
    }
    let by_name: std::collections::HashMap<&str, &Entry> =
        entries.iter().map(|e| (e.name.as_str(), e)).collect();
    for p in &params {
        let e = by_name.get(p.name()).ok_or_else(|| {
            Error::Checkpoint(format!("checkpoint is missing parameter '{}'", p.name()))
        })?;
        if e.shape != p.shape() {
            return Err(Error::Checkpoint(format!(
                "shape mismatch for '{}': checkpoint {} vs model {}",
                p.name(),
                e.shape,
                p.shape()
            )));
        }
        let values: Vec<T> = e.values.iter().map(|&v| T::from_f64(v as f64)).collect();
        p.set_value(&Tensor::from_vec(e.shape, values)?)?;
    }
    Ok(step)
}

/// Spec hash stored in a checkpoint file without loading the weights.
pub fn peek_spec_hash(path: &Path) -> Result<(u64, u64)> {
    let bytes = fs::read(path)?;
    let (hash, step, _) = decode(&bytes)?;
    Ok((hash, step))
}
