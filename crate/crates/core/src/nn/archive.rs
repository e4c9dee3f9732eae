//! Flat named-tensor archive.
//!
//! Layout (little-endian): magic `GLIMTNS1`, `u32` tensor count, then per
//! tensor in name order: `u32` name length, UTF-8 name, `u32` rank, `u64`
//! per dimension, and the float32 payload.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{GlimError, Result};

pub const MAGIC: &[u8; 8] = b"GLIMTNS1";

/// name → (shape, row-major values)
pub type NamedTensors = BTreeMap<String, (Vec<usize>, Vec<f32>)>;

pub fn archive_bytes(tensors: &NamedTensors) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, (shape, values)) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// SHA-256 of the archive encoding, hex.
pub fn checksum(tensors: &NamedTensors) -> String {
    hex::encode(Sha256::digest(archive_bytes(tensors)))
}

pub fn write_archive(path: &Path, tensors: &NamedTensors) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, archive_bytes(tensors))?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.buf.len() - self.pos < n {
            return Err(GlimError::format(self.pos as u64, format!("truncated archive while reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

pub fn parse_archive(buf: &[u8]) -> Result<NamedTensors> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(8, "magic")? != MAGIC {
        return Err(GlimError::format(0, "bad archive magic"));
    }
    let count = c.u32("tensor count")?;
    let mut out = NamedTensors::new();
    for _ in 0..count {
        let at = c.pos as u64;
        let name_len = c.u32("name length")? as usize;
        let name = std::str::from_utf8(c.take(name_len, "name")?)
            .map_err(|_| GlimError::format(at + 4, "tensor name is not UTF-8"))?
            .to_string();
        let rank_at = c.pos as u64;
        let rank = c.u32("rank")? as usize;
        if rank > 8 {
            return Err(GlimError::format(rank_at, format!("implausible rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut n: u64 = 1;
        for _ in 0..rank {
            let d_at = c.pos as u64;
            let d = c.u64("dimension")?;
            n = n
                .checked_mul(d)
                .filter(|&n| n <= (buf.len() as u64) / 4)
                .ok_or_else(|| GlimError::format(d_at, "tensor larger than the archive"))?;
            shape.push(d as usize);
        }
        let payload = c.take(n as usize * 4, "payload")?;
        let values = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        if out.insert(name.clone(), (shape, values)).is_some() {
            return Err(GlimError::format(at, format!("duplicate tensor {name}")));
        }
    }
    if c.pos != buf.len() {
        return Err(GlimError::format(c.pos as u64, "trailing bytes after last tensor"));
    }
    Ok(out)
}

pub fn read_archive(path: &Path) -> Result<NamedTensors> {
    parse_archive(&fs::read(path)?)
}
