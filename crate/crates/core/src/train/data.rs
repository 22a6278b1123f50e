//! Adaptor inputs for one fold, normalized with training-split statistics.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adaptor::InputMode;
use crate::corpus::{CorpusManifest, Fold, Utterance};
use crate::decode_eval::EvalItem;
use crate::error::{Error, Result};
use crate::lm::Vocabulary;
use crate::numerics::Tensor;
use crate::signal::{extract_features, preprocess, ChannelStats, FeatureSequence, FeatureStats, FrameSpec};

/// Unnormalized features per utterance id.
pub type FeatureCache = BTreeMap<String, FeatureSequence>;

pub fn featurize_corpus(manifest: &CorpusManifest, spec: &FrameSpec) -> Result<FeatureCache> {
    spec.validate()?;
    manifest
        .utterances
        .par_iter()
        .map(|u| Ok((u.id().to_string(), extract_features(&u.recording, spec)?)))
        .collect()
}

/// How raw recordings become adaptor inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputNorm {
    Features { spec: FrameSpec, stats: FeatureStats },
    Raw { rate: f64, stats: ChannelStats },
}

impl InputNorm {
    pub fn input(&self, u: &Utterance, cache: Option<&FeatureCache>) -> Result<Tensor<f32>> {
        match self {
            InputNorm::Features { spec, stats } => {
                let f = match cache.and_then(|c| c.get(u.id())) {
                    Some(f) => stats.apply(f)?,
                    None => stats.apply(&extract_features(&u.recording, spec)?)?,
                };
                Ok(f.frames)
            }
            InputNorm::Raw { rate, stats } => Ok(preprocess(&u.recording, *rate, Some(stats))?.signal),
        }
    }
}

/// One utterance ready for training or decoding.
#[derive(Clone, Debug)]
pub struct Example {
    pub utterance_id: String,
    pub transcript: String,
    pub tokens: Vec<usize>,
    pub speaker_id: String,
    pub input: Tensor<f32>,
}

impl Example {
    pub fn eval_item(&self) -> EvalItem {
        EvalItem { utterance_id: self.utterance_id.clone(), reference: self.transcript.clone(), features: self.input.clone() }
    }
}

#[derive(Clone, Debug)]
pub struct FoldData {
    pub train: Vec<Example>,
    pub val: Vec<Example>,
    pub test: Vec<Example>,
    pub norm: InputNorm,
}

/// Where adaptor inputs come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    pub mode: InputMode,
    pub frames: FrameSpec,
    /// Raw mode resampling rate; the recording rate when absent.
    pub raw_rate: Option<f64>,
}

impl Default for InputConfig {
    fn default() -> Self {
        Self { mode: InputMode::Features, frames: FrameSpec::default(), raw_rate: None }
    }
}

impl InputConfig {
    /// Width of the adaptor input for `channels` recording channels.
    pub fn input_dim(&self, channels: usize) -> usize {
        match self.mode {
            InputMode::Features => crate::signal::FEATURES_PER_CHANNEL * channels,
            InputMode::Raw => channels,
        }
    }

    pub fn fit(&self, train: &[&Utterance], cache: Option<&FeatureCache>) -> Result<InputNorm> {
        let first = train.first().ok_or_else(|| Error::Empty("training split".into()))?;
        match self.mode {
            InputMode::Features => {
                let owned;
                let seqs: Vec<&FeatureSequence> = match cache {
                    Some(c) => train
                        .iter()
                        .map(|u| c.get(u.id()).ok_or_else(|| Error::Empty(format!("cached features of `{}`", u.id()))))
                        .collect::<Result<_>>()?,
                    None => {
                        owned = train.iter().map(|u| extract_features(&u.recording, &self.frames)).collect::<Result<Vec<_>>>()?;
                        owned.iter().collect()
                    }
                };
                Ok(InputNorm::Features { spec: self.frames, stats: FeatureStats::fit(&seqs)? })
            }
            InputMode::Raw => {
                let rate = self.raw_rate.unwrap_or(first.recording.sample_rate);
                let recs: Vec<_> = train.iter().map(|u| &u.recording).collect();
                Ok(InputNorm::Raw { rate, stats: ChannelStats::fit(&recs, rate)? })
            }
        }
    }
}

fn examples(
    manifest: &CorpusManifest,
    ids: &[String],
    norm: &InputNorm,
    cache: Option<&FeatureCache>,
    vocab: &Vocabulary,
) -> Result<Vec<Example>> {
    manifest
        .select(ids)
        .into_par_iter()
        .map(|u| {
            Ok(Example {
                utterance_id: u.id().to_string(),
                transcript: u.transcript.clone(),
                tokens: vocab.tokenize(&u.transcript, false)?,
                speaker_id: u.recording.speaker_id.clone(),
                input: norm.input(u, cache)?,
            })
        })
        .collect()
}

/// Builds normalized inputs for a fold; statistics come from `train` only.
pub fn prepare_fold(
    manifest: &CorpusManifest,
    fold: &Fold,
    input: &InputConfig,
    cache: Option<&FeatureCache>,
    vocab: &Vocabulary,
) -> Result<FoldData> {
    let train_utts = manifest.select(&fold.train);
    let norm = input.fit(&train_utts, cache)?;
    Ok(FoldData {
        train: examples(manifest, &fold.train, &norm, cache, vocab)?,
        val: examples(manifest, &fold.val, &norm, cache, vocab)?,
        test: examples(manifest, &fold.test, &norm, cache, vocab)?,
        norm,
    })
}
