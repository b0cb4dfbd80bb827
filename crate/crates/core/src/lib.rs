//! Anchored speech recognition at desk scale.
//!
//! An attention encoder-decoder recognizer that conditions on the wake-word
//! ("anchor") segment of an utterance to transcribe only the speech of the
//! speaker who uttered it. Three model variants are provided — a plain
//! encoder-decoder baseline, multi-source attention (anchor similarity added
//! to the attention energies), and a mask-based model (a per-frame sigmoid
//! gate on the encoder output) — together with the synthetic-data machinery,
//! multi-task training loop, beam-search decoder and WER scoring harness
//! needed to run controlled experiments on a generated toy corpus.
//!
//! All model math runs in 64-bit precision on a small reverse-mode
//! gradient tape ([`numerics`]) whose every primitive is verified against
//! central finite differences.

pub mod augment;
pub mod config;
pub mod corpus;
pub mod decode;
pub mod eval;
pub mod experiment;
pub mod model;
pub mod numerics;
pub mod par;
pub mod seeding;
pub mod train;
