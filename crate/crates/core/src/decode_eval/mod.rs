//! Beam-search decoding, word error rate, split evaluation and the
//! person-identification probe.

mod beam;
mod eval;
mod pid;
mod wer;

pub use beam::{beam_search, decode_prefix, greedy_decode, BeamHypothesis, DecodeConfig, StepModel};
pub use eval::{
    evaluate_split, summarize_folds, write_metrics_csv, write_predictions, EvalItem, Hypothesis, MetricRow,
    PredictionRecord, SplitReport, Transcriber,
};
pub use pid::{pid_pool, pooled_lm_logits, train_pid_probe, PidConfig, PidItem, PidReport};
pub use wer::{edit_counts, mean_std, wer, EditCounts};

#[cfg(test)]
mod tests;
