//! Checkpoint directories: `meta.json` plus little-endian `f64` weights in
//! `weights.bin`, concatenated in parameter order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ArchConfig, Model};
use crate::error::{Error, Result};
use crate::motion::SkeletonTopology;
use crate::projection::BodyLandmarks;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub arch: ArchConfig,
    pub skeleton: SkeletonTopology,
    pub landmarks: BodyLandmarks,
    pub styles: Vec<String>,
    pub seed: u64,
    pub iteration: usize,
    pub tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint(model: &Model, dir: &Path, iteration: usize) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = CheckpointMeta {
        format_version: FORMAT_VERSION,
        arch: model.arch.clone(),
        skeleton: model.skeleton.clone(),
        landmarks: model.landmarks,
        styles: model.styles.clone(),
        seed: model.seed,
        iteration,
        tensors: model
            .params
            .iter()
            .map(|(_, name, t)| TensorEntry {
                name: name.to_string(),
                shape: t.shape.clone(),
            })
            .collect(),
    };
    let meta_path = dir.join("meta.json");
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::json(&meta_path, e))?;
    std::fs::write(&meta_path, text + "\n").map_err(|e| Error::io(&meta_path, e))?;

    let mut bytes = Vec::with_capacity(8 * model.params.num_scalars());
    for (_, _, t) in model.params.iter() {
        for v in &t.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let w_path = dir.join("weights.bin");
    std::fs::write(&w_path, bytes).map_err(|e| Error::io(&w_path, e))
}

/// Rebuilds the model from its metadata and fills in the stored weights.
pub fn load_checkpoint(dir: &Path) -> Result<(Model, CheckpointMeta)> {
    let meta_path = dir.join("meta.json");
    let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&text).map_err(|e| Error::json(&meta_path, e))?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: format version {} (expected {FORMAT_VERSION})",
            dir.display(),
            meta.format_version
        )));
    }
    let mut model = Model::zeroed(meta.arch.clone(), meta.skeleton.clone(), meta.landmarks, meta.styles.clone(), meta.seed)?;
    if model.params.len() != meta.tensors.len() {
        return Err(Error::Checkpoint(format!(
            "architecture builds {} tensors, checkpoint lists {}",
            model.params.len(),
            meta.tensors.len()
        )));
    }
    let ids: Vec<_> = model.params.iter().map(|(id, _, _)| id).collect();
    for (id, entry) in ids.iter().zip(&meta.tensors) {
        let (name, shape) = (model.params.name(*id), &model.params.get(*id).shape);
        if name != entry.name || shape != &entry.shape {
            return Err(Error::Checkpoint(format!(
                "tensor {} {:?} does not match rebuilt {name} {shape:?}",
                entry.name, entry.shape
            )));
        }
    }

    let w_path = dir.join("weights.bin");
    let bytes = std::fs::read(&w_path).map_err(|e| Error::io(&w_path, e))?;
    if bytes.len() != 8 * model.params.num_scalars() {
        return Err(Error::Checkpoint(format!(
            "{}: {} bytes, expected {}",
            w_path.display(),
            bytes.len(),
            8 * model.params.num_scalars()
        )));
    }
    let mut chunks = bytes.chunks_exact(8);
    for id in ids {
        for v in model.params.get_mut(id).data.iter_mut() {
            *v = f64::from_le_bytes(chunks.next().unwrap().try_into().unwrap());
        }
    }
    Ok((model, meta))
}
