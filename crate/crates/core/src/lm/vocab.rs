use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BOS: usize = 0;
pub const EOS: usize = 1;
pub const PAD: usize = 2;
pub const UNK: usize = 3;
pub const N_SPECIAL: usize = 4;

const SPECIAL_NAMES: [&str; N_SPECIAL] = ["<bos>", "<eos>", "<pad>", "<unk>"];

/// Closed word-level vocabulary; ids `0..4` are `BOS, EOS, PAD, UNK`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new(words: &[String]) -> Result<Self> {
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if w.is_empty() || w.contains(char::is_whitespace) {
                return Err(Error::param("vocabulary", format!("invalid word {w:?}")));
            }
            if index.insert(w.clone(), N_SPECIAL + i).is_some() {
                return Err(Error::param("vocabulary", format!("duplicate word `{w}`")));
            }
        }
        Ok(Self { words: words.to_vec(), index })
    }

    /// `|V|` including the special tokens.
    pub fn size(&self) -> usize {
        self.words.len() + N_SPECIAL
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        if id < N_SPECIAL {
            SPECIAL_NAMES[id]
        } else {
            self.words.get(id - N_SPECIAL).map(String::as_str).unwrap_or("<out-of-range>")
        }
    }

    pub fn is_word(&self, id: usize) -> bool {
        (N_SPECIAL..self.size()).contains(&id)
    }

    /// Word-level ids of normalized text.
    pub fn tokenize(&self, text: &str, allow_unk: bool) -> Result<Vec<usize>> {
        text.split_whitespace()
            .map(|w| match self.id(w) {
                Some(id) => Ok(id),
                None if allow_unk => Ok(UNK),
                None => Err(Error::OutOfVocabulary(w.to_string())),
            })
            .collect()
    }

    /// Joins word tokens with single spaces. BOS, EOS and PAD are dropped,
    /// UNK renders as `<unk>`.
    pub fn detokenize(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter(|&&id| id == UNK || id >= N_SPECIAL)
            .map(|&id| self.token(id))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Splits prompt text into lowercase word and single-punctuation tokens.
pub fn prompt_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let mut word = String::new();
        for ch in chunk.chars() {
            if ch.is_ascii_punctuation() {
                if !word.is_empty() {
                    out.push(std::mem::take(&mut word));
                }
                out.push(ch.to_string());
            } else {
                word.extend(ch.to_lowercase());
            }
        }
        if !word.is_empty() {
            out.push(word);
        }
    }
    out
}

/// Text prompts placed before and after the EMG embeddings. Prompt tokens
/// get reserved input-embedding rows after the vocabulary, never UNK.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptTemplate {
    pub p1_text: String,
    pub p2_text: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self { p1_text: "Unvoiced EMG:".into(), p2_text: "Prompt: Convert unvoiced EMG embeddings to text.".into() }
    }
}

impl PromptTemplate {
    /// Distinct prompt tokens in first-appearance order.
    pub fn reserved_tokens(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for t in prompt_tokens(&self.p1_text).into_iter().chain(prompt_tokens(&self.p2_text)) {
            if !out.contains(&t) {
                out.push(t);
            }
        }
        out
    }

    fn ids(&self, text: &str, vocab_size: usize) -> Vec<usize> {
        let reserved = self.reserved_tokens();
        prompt_tokens(text)
            .iter()
            .map(|t| vocab_size + reserved.iter().position(|r| r == t).expect("token is reserved"))
            .collect()
    }

    /// Input-embedding ids of P1 (offset by `vocab_size`).
    pub fn p1_ids(&self, vocab_size: usize) -> Vec<usize> {
        self.ids(&self.p1_text, vocab_size)
    }

    pub fn p2_ids(&self, vocab_size: usize) -> Vec<usize> {
        self.ids(&self.p2_text, vocab_size)
    }
}
