use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{CorpusManifest, EmgRecording, Grammar, Modality, Utterance};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng::{rng_for, rng_indexed};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub vocab_size: usize,
    pub n_utterances: usize,
    pub n_speakers: usize,
    pub words_per_utterance_mean: f64,
    pub sample_rate: f64,
    pub channels: usize,
    pub noise_sigma: f64,
    /// Maximum relative duration warp per word occurrence; 0 disables it.
    pub warp: f64,
    /// Word template duration range in seconds.
    pub word_seconds: (f64, f64),
    /// Silence before the first word, between words and after the last.
    pub silence_seconds: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            vocab_size: 67,
            n_utterances: 500,
            n_speakers: 1,
            words_per_utterance_mean: 4.0,
            sample_rate: 800.0,
            channels: 8,
            noise_sigma: 0.05,
            warp: 0.1,
            word_seconds: (0.25, 0.4),
            silence_seconds: 0.08,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(Error::param("vocab_size", format!("must be >= 2, got {}", self.vocab_size)));
        }
        if self.n_utterances < 1 {
            return Err(Error::param("n_utterances", "must be >= 1"));
        }
        if self.n_speakers < 1 {
            return Err(Error::param("n_speakers", "must be >= 1"));
        }
        if !(self.words_per_utterance_mean >= 1.0) {
            return Err(Error::param(
                "words_per_utterance_mean",
                format!("must be >= 1, got {}", self.words_per_utterance_mean),
            ));
        }
        if !(self.sample_rate > 0.0) || self.channels == 0 {
            return Err(Error::param("sample_rate/channels", "must be positive"));
        }
        if !(self.noise_sigma >= 0.0) || !(0.0..1.0).contains(&self.warp) {
            return Err(Error::param("noise_sigma/warp", "noise must be >= 0 and warp in [0, 1)"));
        }
        let (lo, hi) = self.word_seconds;
        if !(lo > 0.0 && hi >= lo) || !(self.silence_seconds >= 0.0) {
            return Err(Error::param("word_seconds", "need 0 < lo <= hi and silence >= 0"));
        }
        Ok(())
    }
}

/// Per-speaker signal phenotype.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeakerProfile {
    pub speaker_id: String,
    /// One `[L x C]` template per vocabulary word.
    pub templates: Vec<Tensor<f32>>,
    /// Positive per-channel gains.
    pub gains: Vec<f32>,
    pub noise_sigma: f64,
    pub warp_range: (f64, f64),
}

pub fn speaker_id(index: usize) -> String {
    format!("spk{index:02}")
}

/// Draws a speaker: per-word templates (3 to 6 sinusoids per channel between
/// 15 Hz and `min(180, sample_rate/4.4)` Hz under a Hann envelope) and
/// log-normal channel gains.
pub fn generate_speaker_profile(config: &CorpusConfig, index: usize, seed: u64) -> Result<SpeakerProfile> {
    config.validate()?;
    let mut rng = rng_indexed(seed, "speaker", index as u64);
    let c = config.channels;
    let sr = config.sample_rate;
    let f_hi = 180.0_f64.min(sr / 4.4);
    let f_lo = 15.0_f64.min(f_hi * 0.5);
    let gain_dist = Normal::new(0.0f64, 0.3).expect("valid normal");
    let gains: Vec<f32> = (0..c).map(|_| gain_dist.sample(&mut rng).exp() as f32).collect();
    let mut templates = Vec::with_capacity(config.vocab_size);
    for _ in 0..config.vocab_size {
        let secs = rng.random_range(config.word_seconds.0..=config.word_seconds.1);
        let len = ((secs * sr).round() as usize).max(2);
        let mut data = vec![0.0f32; len * c];
        for ch in 0..c {
            let amp = rng.random_range(0.3..1.0);
            let n_sin = rng.random_range(3..=6);
            let comps: Vec<(f64, f64, f64)> = (0..n_sin)
                .map(|_| (rng.random_range(f_lo..f_hi), rng.random_range(0.0..2.0 * PI), rng.random_range(0.3..1.0)))
                .collect();
            let norm: f64 = comps.iter().map(|c| c.2).sum();
            for t in 0..len {
                let env = 0.5 - 0.5 * (2.0 * PI * (t as f64 + 0.5) / len as f64).cos();
                let time = t as f64 / sr;
                let s: f64 = comps.iter().map(|&(f, ph, a)| a * (2.0 * PI * f * time + ph).sin()).sum();
                data[t * c + ch] = (amp * env * s / norm) as f32;
            }
        }
        templates.push(Tensor::new(vec![len, c], data)?);
    }
    Ok(SpeakerProfile {
        speaker_id: speaker_id(index),
        templates,
        gains,
        noise_sigma: config.noise_sigma,
        warp_range: (1.0 - config.warp, 1.0 + config.warp),
    })
}

/// Linear-interpolation resampling of a template to `len` rows.
fn stretch(template: &Tensor<f32>, len: usize) -> Vec<f32> {
    let (n, c) = (template.rows(), template.cols());
    let src = template.data();
    let mut out = vec![0.0f32; len * c];
    for t in 0..len {
        let pos = if len > 1 { t as f64 * (n - 1) as f64 / (len - 1) as f64 } else { 0.0 };
        let i0 = (pos.floor() as usize).min(n - 1);
        let i1 = (i0 + 1).min(n - 1);
        let w = (pos - i0 as f64) as f32;
        for ch in 0..c {
            out[t * c + ch] = src[i0 * c + ch] * (1.0 - w) + src[i1 * c + ch] * w;
        }
    }
    out
}

/// Renders one utterance `[T x C]` for a word-index sequence.
pub fn synthesize_utterance(
    profile: &SpeakerProfile,
    words: &[usize],
    sample_rate: f64,
    silence_seconds: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor<f32>> {
    let c = profile.gains.len();
    let gap = (silence_seconds * sample_rate).round() as usize;
    let mut rows: Vec<f32> = vec![0.0; gap * c];
    for (k, &w) in words.iter().enumerate() {
        let template = profile
            .templates
            .get(w)
            .ok_or_else(|| Error::OutOfVocabulary(format!("word index {w}")))?;
        let (lo, hi) = profile.warp_range;
        let factor = if hi > lo { rng.random_range(lo..=hi) } else { 1.0 };
        let len = ((template.rows() as f64 * factor).round() as usize).max(2);
        let seg = if len == template.rows() { template.data().to_vec() } else { stretch(template, len) };
        rows.extend_from_slice(&seg);
        if k + 1 < words.len() {
            rows.extend(std::iter::repeat_n(0.0, gap * c));
        }
    }
    rows.extend(std::iter::repeat_n(0.0, gap * c));
    // Pad to the minimum duration.
    let min_len = (super::MIN_DURATION_S * sample_rate).ceil() as usize;
    if rows.len() < min_len * c {
        rows.resize(min_len * c, 0.0);
    }
    let t = rows.len() / c;
    let noise = if profile.noise_sigma > 0.0 {
        Some(Normal::new(0.0, profile.noise_sigma).map_err(|e| Error::param("noise_sigma", e.to_string()))?)
    } else {
        None
    };
    for (i, v) in rows.iter_mut().enumerate() {
        *v *= profile.gains[i % c];
        if let Some(n) = &noise {
            *v += n.sample(rng) as f32;
        }
    }
    Tensor::new(vec![t, c], rows)
}

/// Generates the seeded corpus. Utterances are assigned to speakers
/// round-robin; each utterance draws from its own seeded stream.
pub fn generate_synthetic_corpus(config: &CorpusConfig, seed: u64) -> Result<CorpusManifest> {
    config.validate()?;
    let mut grammar_rng = rng_for(seed, "grammar");
    let grammar = Grammar::new(config.vocab_size, &mut grammar_rng)?;
    let profiles = (0..config.n_speakers)
        .map(|s| generate_speaker_profile(config, s, seed))
        .collect::<Result<Vec<_>>>()?;
    let mut utterances = Vec::with_capacity(config.n_utterances);
    for i in 0..config.n_utterances {
        let mut rng = rng_indexed(seed, "utterance", i as u64);
        let len = Grammar::sample_length(config.words_per_utterance_mean, &mut rng);
        let words = grammar.sample(len, &mut rng);
        let profile = &profiles[i % config.n_speakers];
        let signal = synthesize_utterance(profile, &words, config.sample_rate, config.silence_seconds, &mut rng)?;
        let recording = EmgRecording {
            signal,
            sample_rate: config.sample_rate,
            speaker_id: profile.speaker_id.clone(),
            modality: Modality::Unvoiced,
            utterance_id: format!("utt{i:05}"),
        };
        utterances.push(Utterance::new(recording, &grammar.render(&words)));
    }
    Ok(CorpusManifest::new(grammar.words().to_vec(), utterances))
}
