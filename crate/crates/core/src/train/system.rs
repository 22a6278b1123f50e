//! Adaptor, frozen LM and optional CTC arm as one trainable unit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::data::InputNorm;
use crate::adaptor::{build_adaptor, Adaptor, AdaptorConfig};
use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::decode_eval::{decode_prefix, DecodeConfig, EvalItem, Hypothesis, Transcriber};
use crate::error::{Error, Result};
use crate::lm::{
    assemble_input, assemble_prefix, build_lm, masked_ce, LoraConfig, PromptTemplate, TinyLm, TinyLmConfig, Vocabulary,
};
use crate::numerics::kernels::log_softmax_rows;
use crate::numerics::{Graph, ParameterSet, Tensor, Var};
use crate::objective::{ctc_greedy_decode, ctc_loss, CtcArm, LossKind, LossSpec};

/// Everything needed to rebuild a [`System`] before restoring tensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub adaptor: AdaptorConfig,
    pub lm: TinyLmConfig,
    pub lora: Option<LoraConfig>,
    pub loss: LossSpec,
    pub decode: DecodeConfig,
    pub template: PromptTemplate,
    pub vocabulary: Vec<String>,
    pub norm: InputNorm,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct System {
    pub spec: SystemSpec,
    pub adaptor: Adaptor<f32>,
    pub lm: TinyLm<f32>,
    pub ctc: Option<CtcArm<f32>>,
    pub vocab: Vocabulary,
}

impl System {
    /// Wraps a pretrained LM: freezes it, adds adapters when configured and
    /// builds a seeded adaptor (and CTC arm).
    pub fn new(
        adaptor: &AdaptorConfig,
        mut lm: TinyLm<f32>,
        lora: Option<LoraConfig>,
        loss: &LossSpec,
        decode: &DecodeConfig,
        template: &PromptTemplate,
        vocab: &Vocabulary,
        norm: InputNorm,
        seed: u64,
    ) -> Result<Self> {
        loss.validate()?;
        decode.validate()?;
        if adaptor.output_dim != lm.dim() {
            return Err(Error::param(
                "adaptor.output_dim",
                format!("{} does not match the LM width {}", adaptor.output_dim, lm.dim()),
            ));
        }
        if vocab.size() != lm.vocab_size {
            return Err(Error::param("vocabulary", format!("{} tokens, LM has {}", vocab.size(), lm.vocab_size)));
        }
        lm.freeze();
        if let Some(l) = &lora {
            lm.apply_lora(l, seed)?;
        }
        let ctc = match loss.kind {
            LossKind::Ctc => Some(CtcArm::new(lm.dim(), loss.dilation_factor, seed)?),
            LossKind::CeTemperature => None,
        };
        let spec = SystemSpec {
            adaptor: adaptor.clone(),
            lm: lm.config.clone(),
            lora,
            loss: loss.clone(),
            decode: decode.clone(),
            template: template.clone(),
            vocabulary: vocab.words().to_vec(),
            norm,
            seed,
        };
        Ok(Self { adaptor: build_adaptor(adaptor, seed)?, lm, ctc, vocab: vocab.clone(), spec })
    }

    /// Parameter groups by checkpoint name.
    pub fn groups(&self) -> Vec<(&'static str, &ParameterSet<f32>)> {
        let mut g = vec![("adaptor", &self.adaptor.params), ("lm", &self.lm.params)];
        if let Some(c) = &self.ctc {
            g.push(("ctc", &c.params));
        }
        g
    }

    pub fn groups_mut(&mut self) -> Vec<&mut ParameterSet<f32>> {
        let mut g = vec![&mut self.adaptor.params, &mut self.lm.params];
        if let Some(c) = &mut self.ctc {
            g.push(&mut c.params);
        }
        g
    }

    pub fn trainable_params(&self) -> usize {
        self.groups().iter().map(|(_, p)| p.count(true)).sum()
    }

    /// Records the summed training loss of one utterance.
    pub fn loss(&self, g: &mut Graph<f32>, input: &Tensor<f32>, target: &[usize]) -> Result<Var> {
        let x = g.input(input.clone(), false);
        let e = self.adaptor.forward(g, x)?;
        match &self.ctc {
            None => {
                let a = assemble_input(g, &self.lm, &self.spec.template, e, Some(target))?;
                masked_ce(g, &self.lm, &a, self.spec.loss.tau as f32)
            }
            Some(arm) => {
                let z = arm.frame_logits(g, &self.lm, &self.spec.template, e)?;
                ctc_loss(g, z, target, self.lm.vocab_size)
            }
        }
    }

    /// Word ids of the best hypothesis and its log-probability.
    pub fn decode(&self, input: &Tensor<f32>) -> Result<(Vec<usize>, f64)> {
        let e = self.adaptor.embed(input, "")?.embeddings;
        match &self.ctc {
            None => {
                let prefix = assemble_prefix(&self.lm, &self.spec.template, &e)?;
                let h = decode_prefix(&self.lm, &prefix, &self.spec.decode)?;
                Ok((h.words().to_vec(), h.log_prob))
            }
            Some(arm) => {
                let mut g = Graph::new();
                let ev = g.input(e, false);
                let z = arm.frame_logits(&mut g, &self.lm, &self.spec.template, ev)?;
                let z = g.value(z);
                let blank = self.lm.vocab_size;
                let lp = log_softmax_rows(z.data(), z.cols(), 1.0);
                let best: f64 = lp.chunks(z.cols()).map(|r| r.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64).sum();
                Ok((ctc_greedy_decode(z, blank), best))
            }
        }
    }
}

impl Transcriber for System {
    fn transcribe(&self, item: &EvalItem) -> Result<Hypothesis> {
        let (ids, log_prob) = self.decode(&item.features)?;
        Ok(Hypothesis { text: self.vocab.detokenize(&ids), log_prob })
    }
}

pub fn save_system(dir: &Path, system: &System, meta: &serde_json::Value) -> Result<()> {
    save_checkpoint(dir, &serde_json::to_value(&system.spec)?, meta, &system.groups())
}

/// Rebuilds the system described by a checkpoint and restores every group.
pub fn system_from_checkpoint(ck: &Checkpoint) -> Result<System> {
    let spec: SystemSpec = serde_json::from_value(ck.manifest.config.clone())
        .map_err(|e| Error::Checkpoint(format!("system spec: {e}")))?;
    let vocab = Vocabulary::new(&spec.vocabulary)?;
    let lm = build_lm::<f32>(&spec.lm, vocab.size(), spec.template.reserved_tokens().len(), 0)?;
    let mut system = System::new(
        &spec.adaptor,
        lm,
        spec.lora.clone(),
        &spec.loss,
        &spec.decode,
        &spec.template,
        &vocab,
        spec.norm.clone(),
        spec.seed,
    )?;
    ck.restore("adaptor", &mut system.adaptor.params)?;
    ck.restore("lm", &mut system.lm.params)?;
    if let Some(c) = &mut system.ctc {
        ck.restore("ctc", &mut c.params)?;
    }
    Ok(system)
}

pub fn load_system(dir: &Path) -> Result<System> {
    system_from_checkpoint(&load_checkpoint(dir)?)
}
