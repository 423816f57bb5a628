//! Flat binary container of named parameter arrays.
//!
//! Layout (all integers little-endian):
//!   magic "DMW1", u32 version, u32 entry count, then per entry:
//!   u32 name length, name bytes (utf-8), u32 ndim, u32 dims..., f32 data.

use super::{Network, NnError};
use crate::tensor::{Element, Shape};
use std::io::{Read, Write};

const MAGIC: &[u8; 4] = b"DMW1";
const VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct SnapshotEntry {
    pub name: String,
    pub shape: Shape,
    pub data: Vec<f32>,
}

#[derive(thiserror::Error, Debug)]
pub enum SnapshotError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a weight snapshot (bad magic)")]
    BadMagic,
    #[error("unsupported snapshot version {0}")]
    BadVersion(u32),
    #[error("snapshot entry {name} has shape {shape} but data length {len}")]
    Corrupt {
        name: String,
        shape: Shape,
        len: usize,
    },
    #[error("snapshot is missing parameter {0}")]
    MissingParam(String),
    #[error("snapshot parameter {name} has shape {got}, expected {expected}")]
    ShapeMismatch {
        name: String,
        got: Shape,
        expected: Shape,
    },
}

pub fn write_snapshot<W: Write>(mut w: W, entries: &[SnapshotEntry]) -> Result<(), SnapshotError> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for e in entries {
        let name = e.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&(e.shape.0.len() as u32).to_le_bytes())?;
        for &d in &e.shape.0 {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in &e.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_snapshot<R: Read>(mut r: R) -> Result<Vec<SnapshotEntry>, SnapshotError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(SnapshotError::BadMagic);
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(SnapshotError::BadVersion(version));
    }
    let count = read_u32(&mut r)? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        let ndim = read_u32(&mut r)? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(read_u32(&mut r)? as usize);
        }
        let shape = Shape(dims);
        let n = shape.numel();
        let mut data = Vec::with_capacity(n);
        let mut buf = [0u8; 4];
        for _ in 0..n {
            r.read_exact(&mut buf)?;
            data.push(f32::from_le_bytes(buf));
        }
        entries.push(SnapshotEntry { name, shape, data });
    }
    Ok(entries)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, std::io::Error> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

impl<E: Element> Network<E> {
    /// Snapshot entries for this network, each name prefixed with `prefix`.
    pub fn snapshot_entries(&self, prefix: &str) -> Vec<SnapshotEntry> {
        self.params()
            .iter()
            .map(|p| SnapshotEntry {
                name: format!("{prefix}{}", p.name),
                shape: p.shape.clone(),
                data: p.value.iter().map(|&v| v.to_f64() as f32).collect(),
            })
            .collect()
    }

    /// Loads parameters from snapshot entries carrying `prefix`.
    pub fn load_snapshot_entries(
        &mut self,
        prefix: &str,
        entries: &[SnapshotEntry],
    ) -> Result<(), NnError> {
        for p in self.params_mut() {
            let full = format!("{prefix}{}", p.name);
            let e = entries
                .iter()
                .find(|e| e.name == full)
                .ok_or_else(|| NnError::BadConfig(format!("snapshot missing {full}")))?;
            if e.shape != p.shape {
                return Err(NnError::BadConfig(format!(
                    "snapshot {full} has shape {}, expected {}",
                    e.shape, p.shape
                )));
            }
            p.value = e.data.iter().map(|&v| E::from_f64(v as f64)).collect();
        }
        Ok(())
    }
}

/// Convenience check used by round-trip validation.
pub fn validate_entry(e: &SnapshotEntry) -> Result<(), SnapshotError> {
    if e.shape.numel() != e.data.len() {
        return Err(SnapshotError::Corrupt {
            name: e.name.clone(),
            shape: e.shape.clone(),
            len: e.data.len(),
        });
    }
    Ok(())
}
