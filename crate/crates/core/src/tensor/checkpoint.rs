//! Binary weight checkpoints.
//!
//! Layout: the 8-byte magic `SPLNCKPT`, a little-endian `u32` format version,
//! a little-endian `u64` header length, a JSON header, then every tensor's
//! data as consecutive little-endian `f64` values in header order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SPLNCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Free-form metadata (architecture snapshot, provenance).
    pub meta: serde_json::Value,
    pub tensors: IndexMap<String, Tensor>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    meta: serde_json::Value,
    entries: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn write_checkpoint<W: Write>(ckpt: &Checkpoint, mut w: W) -> Result<()> {
    let header = Header {
        meta: ckpt.meta.clone(),
        entries: ckpt.tensors.iter().map(|(name, t)| Entry { name: name.clone(), shape: t.shape().to_vec() }).collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let io = |e| corrupt(format!("write failed: {e}"));
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(json.len() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&json).map_err(io)?;
    for t in ckpt.tensors.values() {
        for v in t.data() {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint> {
    let io = |e: std::io::Error| corrupt(format!("truncated or unreadable: {e}"));
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word).map_err(io)?;
    let version = u32::from_le_bytes(word);
    if version != CHECKPOINT_VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len).map_err(io)?;
    let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
    r.read_exact(&mut json).map_err(io)?;
    let header: Header = serde_json::from_slice(&json)?;
    let mut tensors = IndexMap::new();
    let mut buf = [0u8; 8];
    for entry in header.entries {
        let numel: usize = entry.shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            r.read_exact(&mut buf).map_err(io)?;
            data.push(f64::from_le_bytes(buf));
        }
        let t = Tensor::new(&entry.shape, data)?;
        if tensors.insert(entry.name.clone(), t).is_some() {
            return Err(corrupt(format!("duplicate tensor `{}`", entry.name)));
        }
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(io)?;
    if !rest.is_empty() {
        return Err(corrupt(format!("{} trailing bytes", rest.len())));
    }
    Ok(Checkpoint { meta: header.meta, tensors })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(ckpt, BufWriter::new(f))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(f))
}
