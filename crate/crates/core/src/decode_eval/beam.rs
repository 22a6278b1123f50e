//! Beam search over any incremental next-token model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::{LmState, TinyLm, EOS, N_SPECIAL};
use crate::numerics::kernels::log_softmax_rows;
use crate::numerics::{Element, Tensor};

/// A model that can be advanced one token at a time from a cloned state.
pub trait StepModel {
    type State: Clone;
    fn vocab_size(&self) -> usize;
    /// Logits after appending `token`.
    fn advance(&self, state: &mut Self::State, token: usize) -> Result<Vec<f64>>;
}

impl<E: Element> StepModel for TinyLm<E> {
    type State = LmState<E>;

    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn advance(&self, state: &mut LmState<E>, token: usize) -> Result<Vec<f64>> {
        Ok(self.advance_token(state, token)?.into_iter().map(|v| v.as_f64()).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub beam_width: usize,
    /// Generated tokens per hypothesis, EOS included.
    pub max_len: usize,
    /// Ranking exponent: score = log_prob / len^length_norm.
    pub length_norm: f64,
    /// Only vocabulary words and EOS may be generated.
    pub constrained: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self { beam_width: 4, max_len: 16, length_norm: 0.0, constrained: false }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_width == 0 || self.max_len == 0 {
            return Err(Error::param("decode", "beam_width and max_len must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BeamHypothesis {
    /// Generated tokens; ends with EOS when `finished`.
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub finished: bool,
    /// Stopped by `max_len` rather than EOS.
    pub truncated: bool,
}

impl BeamHypothesis {
    pub fn score(&self, length_norm: f64) -> f64 {
        if length_norm == 0.0 {
            return self.log_prob;
        }
        self.log_prob / (self.tokens.len().max(1) as f64).powf(length_norm)
    }

    /// Tokens without the trailing EOS.
    pub fn words(&self) -> &[usize] {
        match self.tokens.last() {
            Some(&EOS) if self.finished => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }
}

fn allowed(token: usize, constrained: bool) -> bool {
    !constrained || token == EOS || token >= N_SPECIAL
}

fn log_probs(logits: &[f64]) -> Vec<f64> {
    log_softmax_rows(logits, logits.len(), 1.0)
}

/// Argmax over allowed tokens; ties go to the lowest id.
fn best_token(lp: &[f64], constrained: bool) -> usize {
    (0..lp.len())
        .filter(|&k| allowed(k, constrained))
        .fold(None, |b: Option<usize>, k| match b {
            Some(b) if lp[b] >= lp[k] => Some(b),
            _ => Some(k),
        })
        .unwrap_or(EOS)
}

/// Step-by-step argmax decoding.
pub fn greedy_decode<M: StepModel>(
    model: &M,
    mut state: M::State,
    first_logits: Vec<f64>,
    max_len: usize,
    constrained: bool,
) -> Result<BeamHypothesis> {
    let mut logits = first_logits;
    let mut tokens = Vec::new();
    let mut log_prob = 0.0;
    while tokens.len() < max_len {
        let lp = log_probs(&logits);
        let tok = best_token(&lp, constrained);
        tokens.push(tok);
        log_prob += lp[tok];
        if tok == EOS {
            return Ok(BeamHypothesis { tokens, log_prob, finished: true, truncated: false });
        }
        if tokens.len() < max_len {
            logits = model.advance(&mut state, tok)?;
        }
    }
    Ok(BeamHypothesis { tokens, log_prob, finished: true, truncated: true })
}

struct Live<S> {
    state: S,
    tokens: Vec<usize>,
    log_prob: f64,
    logits: Vec<f64>,
}

/// Breadth-limited search; returns every finished hypothesis, best first.
/// Candidates are ranked by cumulative log-probability with ties broken by
/// beam order then token id, so `beam_width = 1` is greedy decoding.
pub fn beam_search<M: StepModel>(
    model: &M,
    state: M::State,
    first_logits: Vec<f64>,
    config: &DecodeConfig,
) -> Result<Vec<BeamHypothesis>> {
    config.validate()?;
    let mut live = vec![Live { state, tokens: Vec::new(), log_prob: 0.0, logits: first_logits }];
    let mut done: Vec<BeamHypothesis> = Vec::new();
    for step in 0..config.max_len {
        let mut cands: Vec<(f64, usize, usize)> = Vec::new();
        for (b, h) in live.iter().enumerate() {
            let lp = log_probs(&h.logits);
            for (k, &l) in lp.iter().enumerate().filter(|(k, _)| allowed(*k, config.constrained)) {
                cands.push((h.log_prob + l, b, k));
            }
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        cands.truncate(config.beam_width);
        let last = step + 1 == config.max_len;
        let mut next = Vec::new();
        for (lp, b, k) in cands {
            let parent = &live[b];
            let mut tokens = parent.tokens.clone();
            tokens.push(k);
            if k == EOS || last {
                done.push(BeamHypothesis { tokens, log_prob: lp, finished: true, truncated: k != EOS });
            } else {
                let mut state = parent.state.clone();
                let logits = model.advance(&mut state, k)?;
                next.push(Live { state, tokens, log_prob: lp, logits });
            }
        }
        live = next;
        if live.is_empty() {
            break;
        }
    }
    done.sort_by(|a, b| b.score(config.length_norm).total_cmp(&a.score(config.length_norm)));
    Ok(done)
}

/// Starts `lm` on an inference prefix and runs beam search.
pub fn decode_prefix<E: Element>(lm: &TinyLm<E>, prefix: &Tensor<E>, config: &DecodeConfig) -> Result<BeamHypothesis> {
    let room = lm.config.max_len.saturating_sub(prefix.rows());
    let config = DecodeConfig { max_len: config.max_len.min(room.max(1)), ..config.clone() };
    let (state, logits) = lm.start(prefix)?;
    let logits = logits.into_iter().map(|v| v.as_f64()).collect();
    let top = if config.beam_width == 1 {
        greedy_decode(lm, state, logits, config.max_len, config.constrained)?
    } else {
        beam_search(lm, state, logits, &config)?.into_iter().next().expect("at least one hypothesis")
    };
    Ok(top)
}
