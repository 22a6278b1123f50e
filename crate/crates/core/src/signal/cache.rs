//! Feature cache: `<id>.f32` holds little-endian `[T_f][D]` floats and
//! `<id>.json` the sidecar.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FeatureSequence, FrameSpec};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSidecar {
    pub frame_rate: f64,
    pub spec: FrameSpec,
    pub channels: usize,
    pub dim: usize,
}

pub fn save_features(dir: &Path, id: &str, features: &FeatureSequence, spec: &FrameSpec) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let bin = dir.join(format!("{id}.f32"));
    let bytes: Vec<u8> = features.frames.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(&bin, bytes).map_err(|e| Error::io(&bin, e))?;
    let side = FeatureSidecar { frame_rate: features.frame_rate, spec: *spec, channels: features.channels, dim: features.dim() };
    let json = dir.join(format!("{id}.json"));
    fs::write(&json, serde_json::to_string_pretty(&side)?).map_err(|e| Error::io(&json, e))?;
    Ok(())
}

pub fn load_features(dir: &Path, id: &str) -> Result<(FeatureSequence, FrameSpec)> {
    let json = dir.join(format!("{id}.json"));
    let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
    let side: FeatureSidecar = serde_json::from_str(&text)?;
    let bin = dir.join(format!("{id}.f32"));
    let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    if side.dim == 0 || bytes.len() % (4 * side.dim) != 0 {
        return Err(Error::Schema { line: 0, field: "dim".into(), reason: format!("{} bytes for dimension {}", bytes.len(), side.dim) });
    }
    let data: Vec<f32> = bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
    let rows = data.len() / side.dim;
    let frames = Tensor::new(vec![rows, side.dim], data)?;
    Ok((FeatureSequence { frames, frame_rate: side.frame_rate, channels: side.channels }, side.spec))
}
