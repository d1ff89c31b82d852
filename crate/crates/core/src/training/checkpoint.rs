//! Self-describing checkpoint files.
//!
//! ```text
//! "TCAP" | version: u32 LE | header length: u64 LE | header (UTF-8 JSON) | tensor blobs
//! ```
//!
//! The header holds the model configuration, vocabulary, output names and
//! a tensor directory (name, dtype, shape, byte offset into the blob
//! section). Blobs are little-endian and stored in directory order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::model::Model;
use super::params::{ParameterStore, StoreShape};
use crate::ast::Vocabulary;
use crate::error::{Error, Result};
use crate::real::Real;

pub const MAGIC: &[u8; 4] = b"TCAP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub outputs: Vec<String>,
    pub tensors: Vec<TensorEntry>,
}

pub fn encode_checkpoint<T: Real>(model: &Model<T>) -> Result<Vec<u8>> {
    let mut blobs = Vec::new();
    let mut tensors = Vec::new();
    for (name, t) in model.store.tensors() {
        tensors.push(TensorEntry {
            name,
            dtype: T::DTYPE.to_string(),
            shape: t.shape().to_vec(),
            offset: blobs.len() as u64,
        });
        for &x in t.iter() {
            x.write_le(&mut blobs);
        }
    }
    let header = CheckpointHeader {
        config: model.config.clone(),
        vocab: model.vocab.clone(),
        outputs: model.outputs.clone(),
        tensors,
    };
    Ok(assemble(&serde_json::to_vec(&header)?, &blobs))
}

/// Joins a raw header and blob section into a file image.
pub fn assemble(header: &[u8], blobs: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + header.len() + blobs.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(header);
    out.extend_from_slice(blobs);
    out
}

/// Splits a file image into (header JSON bytes, blob section).
pub fn split_sections(bytes: &[u8]) -> Result<(&[u8], &[u8])> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic bytes)".into()));
    }
    if bytes.len() < 16 {
        return Err(Error::Format("checkpoint truncated inside the preamble".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let header_end = usize::try_from(header_len)
        .ok()
        .and_then(|n| n.checked_add(16))
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| Error::Format("checkpoint truncated inside the header".into()))?;
    Ok((&bytes[16..header_end], &bytes[header_end..]))
}

pub fn decode_checkpoint<T: Real>(bytes: &[u8]) -> Result<Model<T>> {
    let (header, blobs) = split_sections(bytes)?;
    let header: CheckpointHeader =
        serde_json::from_slice(header).map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
    header.config.validate()?;
    let shape = StoreShape::new(&header.vocab, header.outputs.len());
    let mut store = ParameterStore::<T>::zeros(&header.config, shape);
    let width = std::mem::size_of::<T>();
    let expected_count = store.tensors().len();
    if header.tensors.len() != expected_count {
        return Err(Error::Format(format!(
            "checkpoint lists {} tensors, configuration needs {expected_count}",
            header.tensors.len()
        )));
    }
    for ((name, mut slot), entry) in store.tensors_mut().into_iter().zip(&header.tensors) {
        if entry.name != name {
            return Err(Error::Format(format!("expected tensor `{name}`, found `{}`", entry.name)));
        }
        if entry.dtype != T::DTYPE {
            return Err(Error::Format(format!(
                "tensor `{name}` has dtype {}, expected {}",
                entry.dtype,
                T::DTYPE
            )));
        }
        if entry.shape != slot.shape() {
            return Err(Error::ShapeMismatch {
                name,
                expected: slot.shape().to_vec(),
                actual: entry.shape.clone(),
            });
        }
        let start = entry.offset as usize;
        let end = start + slot.len() * width;
        if end > blobs.len() {
            return Err(Error::Format(format!("checkpoint truncated inside tensor `{name}`")));
        }
        for (x, chunk) in slot.iter_mut().zip(blobs[start..end].chunks_exact(width)) {
            *x = T::read_le(chunk);
        }
    }
    Ok(Model {
        config: header.config,
        vocab: header.vocab,
        outputs: header.outputs,
        store,
    })
}

pub fn save_checkpoint<T: Real>(path: &Path, model: &Model<T>) -> Result<()> {
    fs::write(path, encode_checkpoint(model)?).map_err(|e| Error::file(path, e))
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<Model<T>> {
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    decode_checkpoint(&bytes)
}
