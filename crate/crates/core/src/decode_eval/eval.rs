use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::wer::{edit_counts, mean_std};
use crate::corpus::normalize_transcript;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// One utterance to transcribe.
#[derive(Clone, Debug)]
pub struct EvalItem {
    pub utterance_id: String,
    pub reference: String,
    pub features: Tensor<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub text: String,
    pub log_prob: f64,
}

/// Anything that maps an utterance to text.
pub trait Transcriber: Sync {
    fn transcribe(&self, item: &EvalItem) -> Result<Hypothesis>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub utterance_id: String,
    pub reference: String,
    pub hypothesis: String,
    pub log_prob: f64,
    pub wer: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub n_utterances: usize,
    pub n_words: usize,
    pub n_errors: usize,
    /// Corpus-level: total errors over total reference words.
    pub wer: f64,
    /// Mean of per-utterance WERs.
    pub mean_utterance_wer: f64,
    pub records: Vec<PredictionRecord>,
}

/// Decodes every item (in parallel, results in input order) and scores
/// normalized hypotheses against normalized references.
pub fn evaluate_split<T: Transcriber + ?Sized>(model: &T, items: &[EvalItem]) -> Result<SplitReport> {
    if items.is_empty() {
        return Err(Error::Empty("evaluation split".into()));
    }
    let records = items
        .par_iter()
        .map(|item| {
            let hyp = model.transcribe(item)?;
            let reference = normalize_transcript(&item.reference);
            let hypothesis = normalize_transcript(&hyp.text);
            let r: Vec<&str> = reference.split_whitespace().collect();
            let h: Vec<&str> = hypothesis.split_whitespace().collect();
            if r.is_empty() {
                return Err(Error::Empty(format!("reference of `{}`", item.utterance_id)));
            }
            let (errors, n_ref) = (edit_counts(&r, &h).errors(), r.len());
            Ok((
                PredictionRecord {
                    utterance_id: item.utterance_id.clone(),
                    reference,
                    hypothesis,
                    log_prob: hyp.log_prob,
                    wer: errors as f64 / n_ref as f64,
                },
                n_ref,
                errors,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let n_words: usize = records.iter().map(|r| r.1).sum();
    let n_errors: usize = records.iter().map(|r| r.2).sum();
    let records: Vec<PredictionRecord> = records.into_iter().map(|r| r.0).collect();
    let mean_utterance_wer = records.iter().map(|r| r.wer).sum::<f64>() / records.len() as f64;
    Ok(SplitReport {
        n_utterances: records.len(),
        n_words,
        n_errors,
        wer: n_errors as f64 / n_words as f64,
        mean_utterance_wer,
        records,
    })
}

/// Mean and population standard deviation of per-fold corpus WERs.
pub fn summarize_folds(reports: &[SplitReport]) -> (f64, f64) {
    mean_std(&reports.iter().map(|r| r.wer).collect::<Vec<_>>())
}

pub fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub fold: usize,
    pub split: String,
    pub wer: f64,
    pub n_words: usize,
    pub n_errors: usize,
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let mut out = String::from("fold,split,wer,n_words,n_errors\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{:.6},{},{}", r.fold, r.split, r.wer, r.n_words, r.n_errors);
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
