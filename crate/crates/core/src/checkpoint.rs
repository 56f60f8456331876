//! Flat binary checkpoint: `SQTK1` magic, a manifest of named tensors
//! (name, rank, dims, payload offset), little-endian f32 payload, and a
//! trailing CRC32 of the payload. Save/load round-trips bit-exactly.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::model::Model;

pub const MAGIC: &[u8; 5] = b"SQTK1";

#[derive(Clone, Debug, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

#[derive(Debug)]
pub enum CheckpointError {
    Io(io::Error),
    BadMagic([u8; 5]),
    CrcMismatch { stored: u32, computed: u32 },
    Malformed(String),
}

impl std::fmt::Display for CheckpointError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CheckpointError::Io(e) => write!(f, "checkpoint I/O error: {e}"),
            CheckpointError::BadMagic(m) => write!(f, "bad checkpoint magic {m:?}"),
            CheckpointError::CrcMismatch { stored, computed } => {
                write!(f, "checkpoint CRC mismatch: stored {stored:#010x}, computed {computed:#010x}")
            }
            CheckpointError::Malformed(msg) => write!(f, "malformed checkpoint: {msg}"),
        }
    }
}

impl std::error::Error for CheckpointError {}

impl From<io::Error> for CheckpointError {
    fn from(e: io::Error) -> Self {
        CheckpointError::Io(e)
    }
}

pub fn save(path: &Path, entries: &[TensorEntry]) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    let mut offset = 0u64;
    for e in entries {
        let name = e.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&(e.dims.len() as u32).to_le_bytes())?;
        for &d in &e.dims {
            w.write_all(&d.to_le_bytes())?;
        }
        w.write_all(&offset.to_le_bytes())?;
        offset += (e.data.len() * 4) as u64;
    }
    let mut crc = crc32fast::Hasher::new();
    for e in entries {
        for &v in &e.data {
            let b = v.to_le_bytes();
            crc.update(&b);
            w.write_all(&b)?;
        }
    }
    w.write_all(&crc.finalize().to_le_bytes())?;
    w.flush()
}

pub fn load(path: &Path) -> Result<Vec<TensorEntry>, CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    let count = read_u32(&mut r)? as usize;
    let mut metas = Vec::with_capacity(count);
    let mut expected_offset = 0u64;
    for i in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        if name_len > 4096 {
            return Err(CheckpointError::Malformed(format!(
                "tensor {i}: name length {name_len} too large"
            )));
        }
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| CheckpointError::Malformed(format!("tensor {i}: name is not UTF-8")))?;
        let rank = read_u32(&mut r)? as usize;
        if rank > 8 {
            return Err(CheckpointError::Malformed(format!("tensor {name}: rank {rank}")));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(read_u32(&mut r)?);
        }
        let offset = read_u64(&mut r)?;
        // offsets must be non-overlapping and in manifest order
        if offset != expected_offset {
            return Err(CheckpointError::Malformed(format!(
                "tensor {name}: offset {offset}, expected {expected_offset}"
            )));
        }
        let numel: u64 = dims.iter().map(|&d| d as u64).product();
        expected_offset += numel * 4;
        metas.push((name, dims, numel as usize));
    }
    let mut payload = vec![0u8; expected_offset as usize];
    r.read_exact(&mut payload)?;
    let mut crc_bytes = [0u8; 4];
    r.read_exact(&mut crc_bytes)?;
    let stored = u32::from_le_bytes(crc_bytes);
    let computed = crc32fast::hash(&payload);
    if stored != computed {
        return Err(CheckpointError::CrcMismatch { stored, computed });
    }
    let mut entries = Vec::with_capacity(count);
    let mut pos = 0usize;
    for (name, dims, numel) in metas {
        let data: Vec<f32> = payload[pos..pos + numel * 4]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        pos += numel * 4;
        entries.push(TensorEntry { name, dims, data });
    }
    Ok(entries)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, CheckpointError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Snapshot every model parameter in store order.
pub fn save_model(path: &Path, model: &Model) -> io::Result<()> {
    let entries: Vec<TensorEntry> = model
        .params
        .iter()
        .map(|p| TensorEntry {
            name: p.name.clone(),
            dims: vec![p.rows as u32, p.cols as u32],
            data: p.data.clone(),
        })
        .collect();
    save(path, &entries)
}

/// Load tensors into an existing model by name.
///
/// With `require_all` every model parameter must be present in the file;
/// otherwise tensors restore the parameters they name (used to seed a
/// v2 model from a base checkpoint, leaving `v2.*` at initialization).
pub fn load_model(path: &Path, model: &mut Model, require_all: bool) -> Result<(), CheckpointError> {
    let entries = load(path)?;
    let mut loaded = std::collections::HashSet::new();
    for e in entries {
        let Some(id) = model.params.lookup(&e.name) else {
            return Err(CheckpointError::Malformed(format!(
                "checkpoint tensor {} does not exist in this model",
                e.name
            )));
        };
        let p = model.params.get_mut(id);
        let dims: Vec<u32> = vec![p.rows as u32, p.cols as u32];
        if e.dims != dims {
            return Err(CheckpointError::Malformed(format!(
                "tensor {}: dims {:?} do not match model {:?}",
                e.name, e.dims, dims
            )));
        }
        p.data.copy_from_slice(&e.data);
        loaded.insert(e.name);
    }
    if require_all {
        for p in model.params.iter() {
            if !loaded.contains(&p.name) {
                return Err(CheckpointError::Malformed(format!(
                    "model parameter {} missing from checkpoint",
                    p.name
                )));
            }
        }
    }
    Ok(())
}

/// Seed a v2 model from a base checkpoint: every non-`v2.` parameter must be
/// covered; interface parameters stay at their initialization.
pub fn load_base_into(path: &Path, model: &mut Model) -> Result<(), CheckpointError> {
    let entries = load(path)?;
    let names: std::collections::HashSet<&str> =
        entries.iter().map(|e| e.name.as_str()).collect();
    for p in model.params.iter() {
        if !p.name.starts_with("v2.") && !names.contains(p.name.as_str()) {
            return Err(CheckpointError::Malformed(format!(
                "base parameter {} missing from checkpoint",
                p.name
            )));
        }
    }
    let mut dummy = entries;
    for e in dummy.drain(..) {
        if let Some(id) = model.params.lookup(&e.name) {
            let p = model.params.get_mut(id);
            if e.dims != vec![p.rows as u32, p.cols as u32] {
                return Err(CheckpointError::Malformed(format!(
                    "tensor {}: shape mismatch",
                    e.name
                )));
            }
            p.data.copy_from_slice(&e.data);
        }
    }
    Ok(())
}
