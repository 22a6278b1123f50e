//! Checkpoint directories: `manifest.json` (version, config, tensor table)
//! plus `tensors.bin`, a little-endian f32 blob.
//!
//! A checkpoint holds named parameter groups (e.g. `adaptor`, `lm`). For
//! trainable tensors the AdamW moments are stored after the value, so a
//! restored run continues with the same optimizer state.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::numerics::{ParameterSet, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLOB_FILE: &str = "tensors.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub group: String,
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset of the value in the blob.
    pub offset: u64,
    pub trainable: bool,
    /// Offsets of the first and second moments when stored.
    pub moments: Option<(u64, u64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub version: u32,
    pub config: Value,
    /// Free-form run state: epoch, best validation metrics and the like.
    pub meta: Value,
    /// Optimizer step count per group.
    pub steps: BTreeMap<String, u64>,
    pub tensors: Vec<TensorEntry>,
    pub total_bytes: u64,
}

struct Stored {
    entry: TensorEntry,
    value: Tensor<f32>,
    moments: Option<(Tensor<f32>, Tensor<f32>)>,
}

/// A fully read and validated checkpoint.
pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    tensors: Vec<Stored>,
}

fn push(blob: &mut Vec<u8>, t: &Tensor<f32>) -> u64 {
    let offset = blob.len() as u64;
    for v in t.data() {
        blob.extend_from_slice(&v.to_le_bytes());
    }
    offset
}

pub fn save_checkpoint(dir: &Path, config: &Value, meta: &Value, groups: &[(&str, &ParameterSet<f32>)]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut blob = Vec::new();
    let mut tensors = Vec::new();
    let mut steps = BTreeMap::new();
    for (group, ps) in groups {
        if steps.insert(group.to_string(), ps.step_count()).is_some() {
            return Err(Error::Checkpoint(format!("duplicate group `{group}`")));
        }
        for (_, p) in ps.iter() {
            let offset = push(&mut blob, &p.value);
            let moments = p.trainable.then(|| (push(&mut blob, &p.m), push(&mut blob, &p.v)));
            tensors.push(TensorEntry {
                group: group.to_string(),
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                offset,
                trainable: p.trainable,
                moments,
            });
        }
    }
    let manifest = CheckpointManifest {
        version: CHECKPOINT_VERSION,
        config: config.clone(),
        meta: meta.clone(),
        steps,
        tensors,
        total_bytes: blob.len() as u64,
    };
    let blob_path = dir.join(BLOB_FILE);
    fs::write(&blob_path, &blob).map_err(|e| Error::io(&blob_path, e))?;
    let man_path = dir.join(MANIFEST_FILE);
    fs::write(&man_path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(&man_path, e))?;
    Ok(())
}

fn read_tensor(blob: &[u8], offset: u64, shape: &[usize], name: &str) -> Result<Tensor<f32>> {
    let n: usize = shape.iter().product();
    let start = offset as usize;
    let end = start + 4 * n;
    if end > blob.len() {
        return Err(Error::Checkpoint(format!("tensor `{name}` runs past the end of the blob")));
    }
    let data = blob[start..end].chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
    Tensor::new(shape.to_vec(), data)
}

/// Reads a checkpoint; nothing is returned unless the version matches and
/// the blob has exactly the declared size.
pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let man_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&man_path).map_err(|e| Error::io(&man_path, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)?;
    if manifest.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "version {} is not supported (expected {CHECKPOINT_VERSION})",
            manifest.version
        )));
    }
    let blob_path = dir.join(BLOB_FILE);
    let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    if blob.len() as u64 != manifest.total_bytes {
        return Err(Error::Checkpoint(format!(
            "blob has {} bytes, manifest declares {} (truncated or corrupt)",
            blob.len(),
            manifest.total_bytes
        )));
    }
    let tensors = manifest
        .tensors
        .iter()
        .map(|e| {
            let value = read_tensor(&blob, e.offset, &e.shape, &e.name)?;
            let moments = match e.moments {
                Some((m, v)) => Some((read_tensor(&blob, m, &e.shape, &e.name)?, read_tensor(&blob, v, &e.shape, &e.name)?)),
                None => None,
            };
            Ok(Stored { entry: e.clone(), value, moments })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Checkpoint { manifest, tensors })
}

impl Checkpoint {
    pub fn has_group(&self, group: &str) -> bool {
        self.manifest.steps.contains_key(group)
    }

    /// Copies a stored group into a parameter set built from the same
    /// configuration: values, trainable flags, moments and step count.
    pub fn restore(&self, group: &str, ps: &mut ParameterSet<f32>) -> Result<()> {
        let step = *self
            .manifest
            .steps
            .get(group)
            .ok_or_else(|| Error::Checkpoint(format!("no group `{group}` in checkpoint")))?;
        let stored: Vec<&Stored> = self.tensors.iter().filter(|s| s.entry.group == group).collect();
        if stored.len() != ps.len() {
            return Err(Error::Checkpoint(format!(
                "group `{group}` has {} tensors, the model has {}",
                stored.len(),
                ps.len()
            )));
        }
        // Validate everything before touching the target.
        let mut plan = Vec::with_capacity(stored.len());
        for s in &stored {
            let id = ps
                .id(&s.entry.name)
                .ok_or_else(|| Error::Checkpoint(format!("model has no tensor `{}` in group `{group}`", s.entry.name)))?;
            if ps.get(id).value.shape() != s.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` has shape {:?}, model expects {:?}",
                    s.entry.name,
                    s.value.shape(),
                    ps.get(id).value.shape()
                )));
            }
            plan.push((id, *s));
        }
        for (id, s) in plan {
            let p = ps.get_mut(id);
            p.value = s.value.clone();
            p.grad = None;
            if let Some((m, v)) = &s.moments {
                p.m = m.clone();
                p.v = v.clone();
            } else {
                p.m = Tensor::zeros(s.value.shape());
                p.v = Tensor::zeros(s.value.shape());
            }
            ps.set_trainable(id, s.entry.trainable);
        }
        ps.set_step_count(step);
        Ok(())
    }
}
