//! Pretrained LM checkpoints.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{build_lm, PromptTemplate, TinyLm, TinyLmConfig, Vocabulary};
use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::error::{Error, Result};

/// Everything needed to rebuild the model before its tensors are restored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LmSpec {
    pub config: TinyLmConfig,
    pub vocabulary: Vec<String>,
    pub template: PromptTemplate,
}

pub fn save_lm(dir: &Path, lm: &TinyLm<f32>, vocab: &Vocabulary, template: &PromptTemplate, meta: &serde_json::Value) -> Result<()> {
    let spec = LmSpec { config: lm.config.clone(), vocabulary: vocab.words().to_vec(), template: template.clone() };
    save_checkpoint(dir, &serde_json::to_value(&spec)?, meta, &[("lm", &lm.params)])
}

pub fn load_lm(dir: &Path) -> Result<(TinyLm<f32>, Vocabulary, PromptTemplate)> {
    let ck = load_checkpoint(dir)?;
    let spec: LmSpec = serde_json::from_value(ck.manifest.config.clone())
        .map_err(|e| Error::Checkpoint(format!("LM spec: {e}")))?;
    let vocab = Vocabulary::new(&spec.vocabulary)?;
    let mut lm = build_lm::<f32>(&spec.config, vocab.size(), spec.template.reserved_tokens().len(), 0)?;
    ck.restore("lm", &mut lm.params)?;
    Ok((lm, vocab, spec.template))
}
