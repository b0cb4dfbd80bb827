//! Utterance data model, grapheme vocabulary, toy-corpus generation and
//! corpus file I/O.

mod io;
mod toygen;
mod vocab;

pub use io::{read_corpus, write_corpus, CORPUS_MAGIC, CORPUS_VERSION};
pub use toygen::{gen_toy_corpus, speaker_of, speaker_profiles, SpeakerProfile, ToyCorpusConfig};
pub use vocab::{Vocabulary, EOS, PAD, RESERVED_SYMBOLS, SOS};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected \"ANCH\", found {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported corpus format version {0}")]
    BadVersion(u32),
    #[error("truncated payload while reading {0}")]
    Truncated(&'static str),
    #[error("mask length {got} does not match body length {expected}")]
    MaskLengthMismatch { expected: usize, got: usize },
    #[error("mask byte {0} is not 0 or 1")]
    InvalidMaskByte(u8),
    #[error("no grapheme reaches the minimum count; vocabulary would be empty")]
    EmptyGraphemes,
    #[error("character {0:?} is not in the vocabulary")]
    UnknownGrapheme(char),
    #[error("symbol id {0} is out of range")]
    UnknownSymbol(usize),
    #[error("invalid corpus config: {0}")]
    BadConfig(String),
    #[error("invalid utterance: {0}")]
    BadUtterance(String),
}

/// Time-major matrix of acoustic feature frames (one row per 10 ms frame).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    dim: usize,
    data: Vec<f64>,
}

impl FeatureSequence {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self, CorpusError> {
        if dim == 0 || data.is_empty() || data.len() % dim != 0 {
            return Err(CorpusError::BadUtterance(format!(
                "{} values do not form frames of dim {dim}",
                data.len()
            )));
        }
        Ok(FeatureSequence { dim, data })
    }

    pub fn frames(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Concatenation of frame ranges from existing sequences.
    pub fn from_frames(dim: usize, frames: &[&[f64]]) -> Result<Self, CorpusError> {
        let mut data = Vec::with_capacity(dim * frames.len());
        for f in frames {
            debug_assert_eq!(f.len(), dim);
            data.extend_from_slice(f);
        }
        FeatureSequence::new(dim, data)
    }
}

/// Per-body-frame binary labels: 1 = device-directed, 0 = inserted or
/// background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldMask {
    labels: Vec<u8>,
}

impl GoldMask {
    pub fn new(labels: Vec<u8>) -> Result<Self, CorpusError> {
        if let Some(&bad) = labels.iter().find(|&&b| b > 1) {
            return Err(CorpusError::InvalidMaskByte(bad));
        }
        Ok(GoldMask { labels })
    }

    pub fn all_ones(len: usize) -> Self {
        GoldMask { labels: vec![1; len] }
    }

    pub fn all_zeros(len: usize) -> Self {
        GoldMask { labels: vec![0; len] }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }
}

/// One anchored utterance: the wake-word segment, the body to recognize,
/// its grapheme transcript (empty for background-only bodies) and, when
/// known by construction, the gold frame mask over the body.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchoredUtterance {
    pub id: String,
    pub anchor: FeatureSequence,
    pub body: FeatureSequence,
    pub transcript: String,
    pub gold_mask: Option<GoldMask>,
}

impl AnchoredUtterance {
    pub fn new(
        id: String,
        anchor: FeatureSequence,
        body: FeatureSequence,
        transcript: String,
        gold_mask: Option<GoldMask>,
    ) -> Result<Self, CorpusError> {
        if anchor.dim() != body.dim() {
            return Err(CorpusError::BadUtterance(format!(
                "anchor dim {} != body dim {}",
                anchor.dim(),
                body.dim()
            )));
        }
        if let Some(mask) = &gold_mask {
            if mask.len() != body.frames() {
                return Err(CorpusError::MaskLengthMismatch {
                    expected: body.frames(),
                    got: mask.len(),
                });
            }
        }
        Ok(AnchoredUtterance { id, anchor, body, transcript, gold_mask })
    }
}

/// A set of anchored utterances.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    pub utterances: Vec<AnchoredUtterance>,
}

impl Corpus {
    pub fn new(utterances: Vec<AnchoredUtterance>) -> Self {
        Corpus { utterances }
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, AnchoredUtterance> {
        self.utterances.iter()
    }

    pub fn transcripts(&self) -> impl Iterator<Item = &str> {
        self.utterances.iter().map(|u| u.transcript.as_str())
    }
}
