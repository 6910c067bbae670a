//! Binary checkpoints.
//!
//! Layout: the 8 magic bytes `PHSTCKPT`, a little-endian `u32` format version,
//! a little-endian `u64` header length, the UTF-8 JSON header, then every
//! parameter as contiguous little-endian `f64` values in manifest order. The
//! header holds the model config, the output normalization, an echo of the
//! experiment config, and the manifest of `(name, shape, offset)` entries with
//! offsets counted in values from the start of the data block.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Model, ModelConfig, ModelError, Normalization};
use crate::elements::ElementTable;
use crate::matrix::Matrix;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PHSTCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("checkpoint manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: [usize; 2],
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    normalization: Normalization,
    experiment: serde_json::Value,
    manifest: Vec<ManifestEntry>,
}

/// Serializes `model` with an echo of the experiment config.
pub fn checkpoint_bytes(model: &Model, experiment: &serde_json::Value) -> Vec<u8> {
    let mut manifest = Vec::new();
    let mut offset = 0;
    for (_, p) in model.store.iter() {
        manifest.push(ManifestEntry {
            name: p.name.clone(),
            shape: [p.value.rows(), p.value.cols()],
            offset,
        });
        offset += p.value.len();
    }
    let header = Header {
        model: model.config,
        normalization: model.normalization,
        experiment: experiment.clone(),
        manifest,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(8 + 4 + 8 + json.len() + offset * 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, p) in model.store.iter() {
        for v in p.value.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    model: &Model,
    experiment: &serde_json::Value,
) -> Result<(), CheckpointError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&checkpoint_bytes(model, experiment))?;
    Ok(())
}

/// Rebuilds the model described by the header and fills in the stored values.
pub fn model_from_bytes(bytes: &[u8], table: &ElementTable) -> Result<(Model, serde_json::Value), CheckpointError> {
    let mut r = bytes;
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| CheckpointError::BadMagic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut u32b = [0u8; 4];
    r.read_exact(&mut u32b)?;
    let version = u32::from_le_bytes(u32b);
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let mut u64b = [0u8; 8];
    r.read_exact(&mut u64b)?;
    let len = u64::from_le_bytes(u64b) as usize;
    if r.len() < len {
        return Err(CheckpointError::Manifest("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&r[..len])?;
    let data = &r[len..];

    let mut model = Model::new(header.model, table, 0)?;
    model.normalization = header.normalization;
    if header.manifest.len() != model.store.len() {
        return Err(CheckpointError::Manifest(format!(
            "{} entries for a model with {} parameters",
            header.manifest.len(),
            model.store.len()
        )));
    }
    for entry in &header.manifest {
        let id = model
            .store
            .find(&entry.name)
            .ok_or_else(|| CheckpointError::Manifest(format!("unknown parameter {}", entry.name)))?;
        let expected = model.store.value(id).shape();
        if expected != (entry.shape[0], entry.shape[1]) {
            return Err(CheckpointError::Manifest(format!("shape mismatch for {}", entry.name)));
        }
        let n = entry.shape[0] * entry.shape[1];
        let bytes = data
            .get(entry.offset * 8..(entry.offset + n) * 8)
            .ok_or_else(|| CheckpointError::Manifest(format!("data for {} truncated", entry.name)))?;
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        model
            .store
            .set_value(id, Matrix::from_vec(entry.shape[0], entry.shape[1], values));
    }
    Ok((model, header.experiment))
}

pub fn load_checkpoint(
    path: impl AsRef<Path>,
    table: &ElementTable,
) -> Result<(Model, serde_json::Value), CheckpointError> {
    model_from_bytes(&std::fs::read(path)?, table)
}
