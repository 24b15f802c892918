//! Parameter container format.
//!
//! Layout: 8-byte little-endian header length, JSON header, then the raw
//! payload: each tensor's entries as little-endian f64, tensors ordered by
//! name. The header maps name -> shape/dtype/offset (offset in bytes from
//! the start of the payload) and carries an arbitrary `meta` document for
//! the caller.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct EntryMeta {
    shape: (usize, usize),
    dtype: String,
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    meta: serde_json::Value,
    tensors: BTreeMap<String, EntryMeta>,
}

/// One tensor as read back from a container.
#[derive(Debug, Clone, PartialEq)]
pub struct ContainerEntry {
    pub shape: (usize, usize),
    pub data: Vec<f64>,
}

/// Write tensors and a metadata document. The write goes through a sibling
/// temp file and a rename, so a crash never leaves a half-written container.
pub fn write_container(
    path: &Path,
    meta: &serde_json::Value,
    tensors: &BTreeMap<String, Tensor>,
) -> Result<()> {
    let mut entries = BTreeMap::new();
    let mut offset = 0u64;
    for (name, t) in tensors {
        entries.insert(
            name.clone(),
            EntryMeta {
                shape: t.shape(),
                dtype: "f64".to_string(),
                offset,
            },
        );
        offset += (t.len() * 8) as u64;
    }
    let header = Header {
        meta: meta.clone(),
        tensors: entries,
    };
    let header_bytes = serde_json::to_vec(&header)?;

    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
        f.write_all(&header_bytes)?;
        for t in tensors.values() {
            for v in t.value().iter() {
                f.write_all(&v.to_le_bytes())?;
            }
        }
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_container(path: &Path) -> Result<(serde_json::Value, BTreeMap<String, ContainerEntry>)> {
    let mut f = fs::File::open(path)?;
    let mut len_bytes = [0u8; 8];
    f.read_exact(&mut len_bytes)
        .map_err(|_| Error::Checkpoint(format!("{}: truncated header length", path.display())))?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    f.read_exact(&mut header_bytes)
        .map_err(|_| Error::Checkpoint(format!("{}: truncated header", path.display())))?;
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::Checkpoint(format!("{}: bad header: {e}", path.display())))?;
    let mut payload = Vec::new();
    f.read_to_end(&mut payload)?;

    let expected: usize = header.tensors.values().map(|e| e.shape.0 * e.shape.1 * 8).sum();
    if payload.len() != expected {
        return Err(Error::Checkpoint(format!(
            "{}: payload is {} bytes, header describes {expected}",
            path.display(),
            payload.len()
        )));
    }
    let mut out = BTreeMap::new();
    for (name, e) in header.tensors {
        if e.dtype != "f64" {
            return Err(Error::Checkpoint(format!(
                "{}: tensor {name} has dtype {}, only f64 is supported",
                path.display(),
                e.dtype
            )));
        }
        let n = e.shape.0 * e.shape.1;
        let start = e.offset as usize;
        let end = start + n * 8;
        if end > payload.len() {
            return Err(Error::Checkpoint(format!(
                "{}: tensor {name} extends past end of payload",
                path.display()
            )));
        }
        let data = payload[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.insert(name, ContainerEntry { shape: e.shape, data });
    }
    Ok((header.meta, out))
}
