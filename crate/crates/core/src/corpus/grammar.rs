//! Closed-vocabulary word bank and the transcript grammar.
//!
//! Words live in ten ordered slots (openers, verbs, determiners, ...). A
//! transcript starts in a random slot and walks forward one slot per word;
//! each word only allows a few successors in the next slot. The resulting
//! language is low-entropy enough for a tiny language model to learn.

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const SLOTS: [&[&str]; 10] = [
    &["hey", "please", "okay", "now", "yes", "no", "so"],
    &["turn", "set", "open", "close", "play", "call", "check"],
    &["the", "my", "a", "this", "that", "every", "some"],
    &["light", "alarm", "door", "music", "phone", "timer", "window"],
    &["on", "off", "up", "down", "in", "out", "at"],
    &["kitchen", "bedroom", "office", "garden", "morning", "evening", "noon"],
    &["one", "two", "three", "four", "five", "six", "seven"],
    &["minutes", "hours", "seconds", "times", "days"],
    &["again", "later", "today", "tomorrow", "quickly", "slowly"],
    &["thanks", "done", "stop", "wait", "go", "fine", "right"],
];

/// Number of successors each word allows in the next slot.
const BRANCHING: usize = 3;

/// Size of the built-in word bank.
pub const BANK_SIZE: usize = 67;

/// The first `n` words of the bank in round-robin slot order, paired with
/// their slot. Sizes beyond the bank get generated `wordNNN` entries.
pub fn word_bank(n: usize) -> Vec<(String, usize)> {
    let mut out = Vec::with_capacity(n);
    let mut depth = 0;
    while out.len() < n && depth < 8 {
        for (slot, words) in SLOTS.iter().enumerate() {
            if let Some(w) = words.get(depth) {
                if out.len() < n {
                    out.push((w.to_string(), slot));
                }
            }
        }
        depth += 1;
    }
    let mut extra = out.len();
    while out.len() < n {
        out.push((format!("word{extra:03}"), extra % SLOTS.len()));
        extra += 1;
    }
    out
}

/// Slot-successor grammar over a vocabulary.
#[derive(Clone, Debug)]
pub struct Grammar {
    words: Vec<String>,
    slot_of: Vec<usize>,
    /// Word indices per non-empty slot, in slot order.
    slots: Vec<Vec<usize>>,
    successors: Vec<Vec<usize>>,
}

impl Grammar {
    pub fn new(vocab_size: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if vocab_size < 2 {
            return Err(Error::param("vocab_size", format!("must be >= 2, got {vocab_size}")));
        }
        let bank = word_bank(vocab_size);
        let mut by_slot: Vec<Vec<usize>> = vec![Vec::new(); SLOTS.len()];
        for (i, (_, s)) in bank.iter().enumerate() {
            by_slot[*s].push(i);
        }
        let slots: Vec<Vec<usize>> = by_slot.into_iter().filter(|s| !s.is_empty()).collect();
        let mut slot_of = vec![0; bank.len()];
        for (si, members) in slots.iter().enumerate() {
            for &w in members {
                slot_of[w] = si;
            }
        }
        let successors = (0..bank.len())
            .map(|w| {
                let next = &slots[(slot_of[w] + 1) % slots.len()];
                let k = BRANCHING.min(next.len());
                let mut picked: Vec<usize> = next.choose_multiple(rng, k).copied().collect();
                picked.sort_unstable();
                picked
            })
            .collect();
        Ok(Self { words: bank.into_iter().map(|(w, _)| w).collect(), slot_of, slots, successors })
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn slot_of(&self, word: usize) -> usize {
        self.slot_of[word]
    }

    /// Samples an utterance length with the requested mean (at least 1).
    pub fn sample_length(mean: f64, rng: &mut ChaCha8Rng) -> usize {
        let base = mean.floor() as usize;
        let frac = mean - mean.floor();
        let mut len = base + usize::from(rng.random_bool(frac.clamp(0.0, 1.0)));
        if base >= 2 {
            // Symmetric +-1 jitter keeps the mean.
            len = match rng.random_range(0..3) {
                0 => len - 1,
                1 => len,
                _ => len + 1,
            };
        }
        len.max(1)
    }

    /// Samples a word-index sequence of the given length.
    pub fn sample(&self, len: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let start_slot = rng.random_range(0..self.slots.len());
        let mut w = *self.slots[start_slot].choose(rng).expect("non-empty slot");
        let mut out = vec![w];
        while out.len() < len {
            w = *self.successors[w].choose(rng).expect("non-empty successors");
            out.push(w);
        }
        out
    }

    pub fn render(&self, ids: &[usize]) -> String {
        ids.iter().map(|&i| self.words[i].as_str()).collect::<Vec<_>>().join(" ")
    }
}
