//! Unvoiced EMG to text with a trainable adaptor feeding a frozen
//! decoder-only language model.
//!
//! The crate is self-contained: a small reverse-mode autodiff engine
//! ([`numerics`]) carries the adaptor networks ([`adaptor`]) and a tiny
//! language model ([`lm`]) that is pretrained on transcripts and then frozen.
//! A synthetic closed-vocabulary EMG corpus ([`corpus`]) with handcrafted
//! features ([`signal`]) drives training ([`train`]), decoding and
//! evaluation ([`decode_eval`]).

pub mod adaptor;
pub mod checkpoint;
pub mod corpus;
pub mod decode_eval;
pub mod error;
pub mod lm;
pub mod nn;
pub mod numerics;
pub mod objective;
pub mod rng;
pub mod signal;
pub mod train;

pub use error::{Error, Result};
