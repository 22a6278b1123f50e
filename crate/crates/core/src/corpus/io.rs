//! Corpus directory layout:
//!
//! ```text
//! <dir>/manifest.jsonl   one JSON object per utterance
//! <dir>/vocab.txt        one word per line, order significant
//! <dir>/signals/*.f32    little-endian f32, row-major [T][C]
//! ```

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde_json::{json, Map, Value};

use super::{CorpusManifest, EmgRecording, Modality, Utterance};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const SIGNAL_DIR: &str = "signals";

pub fn save_corpus(manifest: &CorpusManifest, dir: &Path) -> Result<()> {
    let sig_dir = dir.join(SIGNAL_DIR);
    fs::create_dir_all(&sig_dir).map_err(|e| Error::io(&sig_dir, e))?;
    let mut vocab = manifest.vocabulary.join("\n");
    vocab.push('\n');
    let vocab_path = dir.join(VOCAB_FILE);
    fs::write(&vocab_path, vocab).map_err(|e| Error::io(&vocab_path, e))?;

    let mut lines = String::new();
    for u in &manifest.utterances {
        let r = &u.recording;
        let rel = format!("{SIGNAL_DIR}/{}.f32", r.utterance_id);
        let bytes: Vec<u8> = r.signal.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        let path = dir.join(&rel);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        let line = json!({
            "utterance_id": r.utterance_id,
            "speaker_id": r.speaker_id,
            "transcript": u.transcript,
            "signal_file": rel,
            "sample_rate": r.sample_rate,
            "channels": r.channels(),
            "modality": r.modality,
        });
        lines.push_str(&serde_json::to_string(&line)?);
        lines.push('\n');
    }
    let path = dir.join(MANIFEST_FILE);
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    f.write_all(lines.as_bytes()).map_err(|e| Error::io(&path, e))?;
    Ok(())
}

fn field<'a>(obj: &'a Map<String, Value>, line: usize, name: &str) -> Result<&'a Value> {
    obj.get(name).ok_or_else(|| Error::Schema { line, field: name.into(), reason: "missing".into() })
}

fn str_field<'a>(obj: &'a Map<String, Value>, line: usize, name: &str) -> Result<&'a str> {
    field(obj, line, name)?
        .as_str()
        .ok_or_else(|| Error::Schema { line, field: name.into(), reason: "expected a string".into() })
}

pub fn load_corpus(dir: &Path) -> Result<CorpusManifest> {
    let vocab_path = dir.join(VOCAB_FILE);
    let vocab_text = fs::read_to_string(&vocab_path).map_err(|e| Error::io(&vocab_path, e))?;
    let vocabulary: Vec<String> = vocab_text.lines().map(str::trim).filter(|w| !w.is_empty()).map(String::from).collect();
    let mut seen = HashSet::new();
    for (i, w) in vocabulary.iter().enumerate() {
        if !seen.insert(w.as_str()) {
            return Err(Error::Schema { line: i + 1, field: "vocabulary".into(), reason: format!("duplicate word `{w}`") });
        }
    }

    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let mut utterances = Vec::new();
    let mut ids = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(raw)
            .map_err(|e| Error::Schema { line, field: "<line>".into(), reason: e.to_string() })?;
        let obj = value
            .as_object()
            .ok_or_else(|| Error::Schema { line, field: "<line>".into(), reason: "expected an object".into() })?;
        let utterance_id = str_field(obj, line, "utterance_id")?.to_string();
        if !ids.insert(utterance_id.clone()) {
            return Err(Error::Schema { line, field: "utterance_id".into(), reason: "duplicate id".into() });
        }
        let speaker_id = str_field(obj, line, "speaker_id")?.to_string();
        let transcript = str_field(obj, line, "transcript")?;
        if let Some(w) = transcript.split_whitespace().find(|w| !seen.contains(w)) {
            return Err(Error::Schema { line, field: "transcript".into(), reason: format!("word `{w}` not in vocabulary") });
        }
        let signal_file = str_field(obj, line, "signal_file")?;
        let sample_rate = field(obj, line, "sample_rate")?
            .as_f64()
            .filter(|r| *r > 0.0)
            .ok_or_else(|| Error::Schema { line, field: "sample_rate".into(), reason: "expected a positive number".into() })?;
        let channels = field(obj, line, "channels")?
            .as_u64()
            .filter(|c| *c > 0)
            .ok_or_else(|| Error::Schema { line, field: "channels".into(), reason: "expected a positive integer".into() })?
            as usize;
        let modality: Modality = serde_json::from_value(field(obj, line, "modality")?.clone())
            .map_err(|_| Error::Schema { line, field: "modality".into(), reason: "expected \"unvoiced\"".into() })?;

        let path = dir.join(signal_file);
        if !path.is_file() {
            return Err(Error::MissingSignal { utterance_id, path });
        }
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if bytes.len() % (4 * channels) != 0 || bytes.is_empty() {
            return Err(Error::Schema {
                line,
                field: "signal_file".into(),
                reason: format!("{} bytes is not a whole number of {channels}-channel f32 rows", bytes.len()),
            });
        }
        let data: Vec<f32> = bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        let t = data.len() / channels;
        let recording = EmgRecording {
            signal: Tensor::new(vec![t, channels], data)?,
            sample_rate,
            speaker_id,
            modality,
            utterance_id,
        };
        utterances.push(Utterance::new(recording, transcript));
    }
    Ok(CorpusManifest::new(vocabulary, utterances))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic_corpus, CorpusConfig};

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_synthetic_corpus(&CorpusConfig { n_utterances: 12, ..CorpusConfig::default() }, 4).unwrap();
        save_corpus(&m, dir.path()).unwrap();
        let back = load_corpus(dir.path()).unwrap();
        assert_eq!(back, m);
    }

    fn fixture(dir: &Path) {
        let vocab = vec!["yes".to_string(), "no".to_string(), "stop".to_string()];
        let mk = |id: &str, text: &str, t: usize| {
            let rec = EmgRecording {
                signal: Tensor::new(vec![t, 2], (0..t * 2).map(|v| v as f32 * 0.5).collect()).unwrap(),
                sample_rate: 800.0,
                speaker_id: "a".into(),
                modality: Modality::Unvoiced,
                utterance_id: id.into(),
            };
            Utterance::new(rec, text)
        };
        let m = CorpusManifest::new(vocab, vec![mk("u1", "yes no yes", 200), mk("u2", "stop", 170)]);
        save_corpus(&m, dir).unwrap();
    }

    #[test]
    fn hand_built_word_counts() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path());
        let m = load_corpus(dir.path()).unwrap();
        let counts: Vec<usize> = m.utterances.iter().map(|u| u.word_count).collect();
        assert_eq!(counts, vec![3, 1]);
        assert!((m.total_minutes - 370.0 / 800.0 / 60.0).abs() < 1e-12);
    }

    #[test]
    fn missing_signal_names_the_utterance() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path());
        fs::remove_file(dir.path().join("signals/u2.f32")).unwrap();
        let err = load_corpus(dir.path()).unwrap_err();
        assert!(err.to_string().contains("missing signal"));
        assert!(matches!(err, Error::MissingSignal { ref utterance_id, .. } if utterance_id == "u2"));
    }

    #[test]
    fn schema_errors_name_field_and_line() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path());
        let path = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).unwrap().replace("\"channels\":2,", "");
        fs::write(&path, text).unwrap();
        match load_corpus(dir.path()).unwrap_err() {
            Error::Schema { line, field, .. } => {
                assert_eq!(line, 1);
                assert_eq!(field, "channels");
            }
            e => panic!("unexpected {e}"),
        }
    }
}
