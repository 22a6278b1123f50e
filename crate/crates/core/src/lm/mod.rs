//! Word-level tokenizer, prompt assembly and the tiny decoder-only language
//! model with its pretraining and low-rank adaptation.

mod model;
mod pretrain;
mod session;
mod store;
mod vocab;

pub use model::{build_lm, LoraConfig, Positions, TinyLm, TinyLmConfig};
pub use pretrain::{bigram_transcripts, heldout_loss, pretrain_lm, PretrainConfig, PretrainReport};
pub use session::LmState;
pub use store::{load_lm, save_lm, LmSpec};
pub use vocab::{prompt_tokens, PromptTemplate, Vocabulary, BOS, EOS, N_SPECIAL, PAD, UNK};

use crate::error::{Error, Result};
use crate::numerics::{Element, Graph, Tensor, Var};

/// An assembled LM input `P1 ++ E ++ P2 ++ BOS (++ target)`.
#[derive(Clone, Debug)]
pub struct Assembled {
    pub input: Var,
    pub rows: usize,
    pub emg_start: usize,
    pub emg_len: usize,
    /// Row of BOS; the first loss position.
    pub bos_pos: usize,
    /// True at rows whose next-token prediction is scored.
    pub mask: Vec<bool>,
    /// Next-token targets of the masked rows, in order (target words, EOS).
    pub targets: Vec<usize>,
}

/// Concatenates prompt embeddings around the EMG embeddings `e`. With a
/// target the input continues with the target tokens (teacher forcing).
pub fn assemble_input<E: Element>(
    g: &mut Graph<E>,
    lm: &TinyLm<E>,
    template: &PromptTemplate,
    e: Var,
    target: Option<&[usize]>,
) -> Result<Assembled> {
    let (emg_len, f) = (g.value(e).rows(), g.value(e).cols());
    if f != lm.dim() {
        return Err(Error::shape("assemble_input", format!("embedding width {f}, model width {}", lm.dim())));
    }
    if let Some(t) = target {
        if t.is_empty() {
            return Err(Error::Empty("training target".into()));
        }
        if let Some(&bad) = t.iter().find(|&&id| id >= lm.vocab_size) {
            return Err(Error::param("target", format!("token {bad} outside the vocabulary")));
        }
    }
    let p1 = template.p1_ids(lm.vocab_size);
    let p2 = template.p2_ids(lm.vocab_size);
    if template.reserved_tokens().len() > lm.n_prompt {
        return Err(Error::shape("assemble_input", "template needs more reserved prompt rows than the model has"));
    }
    let p1v = lm.embed_ids(g, &p1)?;
    let mut tail_ids = p2.clone();
    tail_ids.push(BOS);
    if let Some(t) = target {
        tail_ids.extend_from_slice(t);
    }
    let tail = lm.embed_ids(g, &tail_ids)?;
    let input = g.concat_rows(&[p1v, e, tail])?;
    let rows = p1.len() + emg_len + tail_ids.len();
    let bos_pos = p1.len() + emg_len + p2.len();
    let mut mask = vec![false; rows];
    let mut targets = Vec::new();
    if let Some(t) = target {
        mask[bos_pos..].iter_mut().for_each(|m| *m = true);
        targets.extend_from_slice(t);
        targets.push(EOS);
    }
    Ok(Assembled { input, rows, emg_start: p1.len(), emg_len, bos_pos, mask, targets })
}

/// Inference prefix `P1 ++ E ++ P2 ++ BOS` without a tape.
pub fn assemble_prefix<E: Element>(lm: &TinyLm<E>, template: &PromptTemplate, e: &Tensor<E>) -> Result<Tensor<E>> {
    if e.cols() != lm.dim() {
        return Err(Error::shape("assemble_prefix", format!("embedding width {}, model width {}", e.cols(), lm.dim())));
    }
    let p1 = lm.embedding_rows(&template.p1_ids(lm.vocab_size))?;
    let mut tail_ids = template.p2_ids(lm.vocab_size);
    tail_ids.push(BOS);
    let tail = lm.embedding_rows(&tail_ids)?;
    let mut data = p1.into_data();
    data.extend_from_slice(e.data());
    data.extend_from_slice(tail.data());
    let rows = data.len() / lm.dim();
    Tensor::new(vec![rows, lm.dim()], data)
}

/// Teacher-forced loss over the masked rows: the final hidden states are
/// sliced to the contiguous masked block before the output head.
pub fn masked_ce<E: Element>(g: &mut Graph<E>, lm: &TinyLm<E>, a: &Assembled, tau: E) -> Result<Var> {
    let h = lm.hidden(g, a.input)?;
    let n = a.targets.len();
    let hs = g.slice_rows(h, a.bos_pos, n)?;
    let logits = lm.head(g, hs)?;
    g.ce_temperature(logits, &a.targets, tau)
}

#[cfg(test)]
mod tests;
