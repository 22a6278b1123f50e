//! Synthetic closed-vocabulary EMG corpus, corpus files, folds and
//! duration subsampling.

mod grammar;
mod io;
mod split;
mod synth;
mod text;

pub use grammar::{word_bank, Grammar, BANK_SIZE};
pub use io::{load_corpus, save_corpus, MANIFEST_FILE, SIGNAL_DIR, VOCAB_FILE};
pub use split::{split_folds, subsample_minutes, Fold};
pub use synth::{generate_speaker_profile, generate_synthetic_corpus, synthesize_utterance, CorpusConfig, SpeakerProfile};
pub use text::normalize_transcript;

use serde::{Deserialize, Serialize};

use crate::numerics::Tensor;

/// Minimum recording duration in seconds.
pub const MIN_DURATION_S: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Unvoiced,
}

/// A multichannel recording, `signal` is `[T x C]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmgRecording {
    pub signal: Tensor<f32>,
    pub sample_rate: f64,
    pub speaker_id: String,
    pub modality: Modality,
    pub utterance_id: String,
}

impl EmgRecording {
    pub fn samples(&self) -> usize {
        self.signal.rows()
    }

    pub fn channels(&self) -> usize {
        self.signal.cols()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples() as f64 / self.sample_rate
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub recording: EmgRecording,
    pub transcript: String,
    pub word_count: usize,
}

impl Utterance {
    pub fn new(recording: EmgRecording, transcript: &str) -> Self {
        let transcript = normalize_transcript(transcript);
        let word_count = transcript.split(' ').filter(|w| !w.is_empty()).count();
        Self { recording, transcript, word_count }
    }

    pub fn id(&self) -> &str {
        &self.recording.utterance_id
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusManifest {
    pub vocabulary: Vec<String>,
    pub utterances: Vec<Utterance>,
    pub speakers: Vec<String>,
    pub total_minutes: f64,
}

impl CorpusManifest {
    /// Builds a manifest, deriving the speaker list and the total duration.
    pub fn new(vocabulary: Vec<String>, utterances: Vec<Utterance>) -> Self {
        let mut speakers: Vec<String> = Vec::new();
        for u in &utterances {
            if !speakers.contains(&u.recording.speaker_id) {
                speakers.push(u.recording.speaker_id.clone());
            }
        }
        let total_minutes = utterances.iter().map(|u| u.recording.duration_s()).sum::<f64>() / 60.0;
        Self { vocabulary, utterances, speakers, total_minutes }
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.utterances.iter().map(|u| u.id().to_string()).collect()
    }

    pub fn get(&self, id: &str) -> Option<&Utterance> {
        self.utterances.iter().find(|u| u.id() == id)
    }

    /// Utterances in the order of `ids`; unknown ids are skipped.
    pub fn select<'a>(&'a self, ids: &[String]) -> Vec<&'a Utterance> {
        let index: std::collections::HashMap<&str, &Utterance> =
            self.utterances.iter().map(|u| (u.id(), u)).collect();
        ids.iter().filter_map(|id| index.get(id.as_str()).copied()).collect()
    }
}
