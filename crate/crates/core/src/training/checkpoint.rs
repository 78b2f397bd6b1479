//! Fine-tuned parameter checkpoints.
//!
//! Binary layout, all little-endian: magic `ACCK`, `u8` version, `u32`
//! section count, then per section `u32 rows, u32 cols, rows x cols f32`.
//! Sections hold the trainable parameters (adapters, then both key
//! matrices) in registration order. A sibling `<stem>.manifest.json` names
//! each section and records the encoder configuration and adapter seed.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::finetune::TrainState;
use crate::error::{Error, Result};
use crate::io::{manifest_path, EncoderConfig};
use crate::kernel::{ParamSet, Real};
use crate::memory::ConceptMemory;

pub const ACCK_MAGIC: &[u8; 4] = b"ACCK";
pub const ACCK_VERSION: u8 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SectionInfo {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub encoder: EncoderConfig,
    pub embed_dim: usize,
    pub seed: u64,
    pub epochs_trained: usize,
    pub loss_history: Vec<f64>,
    pub sections: Vec<SectionInfo>,
}

pub fn write_checkpoint<T: Real>(state: &TrainState<T>, seed: u64, path: &Path) -> Result<()> {
    let ids = state.model.trainable_ids();
    let mut bytes = ACCK_MAGIC.to_vec();
    bytes.push(ACCK_VERSION);
    bytes.extend_from_slice(&(ids.len() as u32).to_le_bytes());
    let mut sections = Vec::with_capacity(ids.len());
    for id in ids {
        let t = state.params.get(id);
        bytes.extend_from_slice(&(t.rows() as u32).to_le_bytes());
        bytes.extend_from_slice(&(t.cols() as u32).to_le_bytes());
        for v in t.to_f32_vec() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        sections.push(SectionInfo { name: state.params.name(id).to_string(), rows: t.rows(), cols: t.cols() });
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let manifest = CheckpointManifest {
        encoder: state.model.encoder.config().clone(),
        embed_dim: state.model.encoder.embed_dim(),
        seed,
        epochs_trained: state.loss_history.len(),
        loss_history: state.loss_history.clone(),
        sections,
    };
    crate::io::write_json(&manifest_path(path), &manifest)
}

fn decode(bytes: &[u8]) -> Result<Vec<(usize, usize, Vec<f32>)>> {
    let bad = |m: &str| Error::format("ACCK", m.to_string());
    if bytes.len() < 9 || &bytes[..4] != ACCK_MAGIC {
        return Err(bad("bad magic"));
    }
    if bytes[4] != ACCK_VERSION {
        return Err(bad(&format!("unsupported version {}", bytes[4])));
    }
    let u32_at = |p: usize| -> Result<usize> {
        bytes
            .get(p..p + 4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize)
            .ok_or_else(|| bad("truncated section header"))
    };
    let n = u32_at(5)?;
    let mut pos = 9;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let (rows, cols) = (u32_at(pos)?, u32_at(pos + 4)?);
        pos += 8;
        let len = rows * cols * 4;
        let data = bytes.get(pos..pos + len).ok_or_else(|| bad("truncated section payload"))?;
        out.push((rows, cols, data.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()));
        pos += len;
    }
    if pos != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(out)
}

/// Rebuilds a trained state on top of `memory` (which supplies value
/// matrices and semantic rows) from a checkpoint.
pub fn read_checkpoint<T: Real>(path: &Path, memory: &ConceptMemory) -> Result<TrainState<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let sections = decode(&bytes)?;
    let manifest: CheckpointManifest = crate::io::read_json(&manifest_path(path))?;
    if manifest.embed_dim != memory.embed_dim() {
        return Err(Error::shape("checkpoint", &[manifest.embed_dim], &[memory.embed_dim()]));
    }
    let mut state = TrainState::<T>::new(memory, &manifest.encoder, manifest.seed)?;
    let ids = state.model.trainable_ids();
    if ids.len() != sections.len() || manifest.sections.len() != sections.len() {
        return Err(Error::format("ACCK", format!("{} sections, model expects {}", sections.len(), ids.len())));
    }
    for ((id, (rows, cols, data)), info) in ids.into_iter().zip(sections).zip(&manifest.sections) {
        let t = state.params.get(id);
        let name = state.params.name(id);
        if info.name != name || (rows, cols) != (t.rows(), t.cols()) {
            return Err(Error::format(
                "ACCK",
                format!("section `{}` {rows}x{cols} does not fit `{name}` {}x{}", info.name, t.rows(), t.cols()),
            ));
        }
        set_values(&mut state.params, id, &data);
    }
    state.loss_history = manifest.loss_history;
    Ok(state)
}

fn set_values<T: Real>(params: &mut ParamSet<T>, id: crate::kernel::ParamId, data: &[f32]) {
    for (d, &v) in params.get_mut(id).data_mut().iter_mut().zip(data) {
        *d = T::of(v as f64);
    }
}
