//! Grapheme vocabulary with reserved start/end/padding symbols.

use std::collections::HashMap;

use super::CorpusError;

pub const PAD: usize = 0;
pub const SOS: usize = 1;
pub const EOS: usize = 2;
/// Number of reserved ids preceding the graphemes.
pub const RESERVED_SYMBOLS: usize = 3;

/// Ordered grapheme list plus the three reserved symbols. The id mapping
/// is a bijection: ids `0..RESERVED_SYMBOLS` are reserved, graphemes
/// follow in codepoint order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    graphemes: Vec<char>,
    ids: HashMap<char, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from the characters whose corpus count reaches
    /// `min_count`, ordered by codepoint.
    pub fn build<'a>(
        transcripts: impl IntoIterator<Item = &'a str>,
        min_count: usize,
    ) -> Result<Self, CorpusError> {
        assert!(min_count >= 1, "min_count must be at least 1");
        let mut counts: HashMap<char, usize> = HashMap::new();
        for t in transcripts {
            for ch in t.chars() {
                *counts.entry(ch).or_insert(0) += 1;
            }
        }
        let mut graphemes: Vec<char> = counts
            .into_iter()
            .filter(|&(_, n)| n >= min_count)
            .map(|(ch, _)| ch)
            .collect();
        graphemes.sort_unstable();
        if graphemes.is_empty() {
            return Err(CorpusError::EmptyGraphemes);
        }
        Ok(Vocabulary::from_graphemes(graphemes))
    }

    pub fn from_graphemes(graphemes: Vec<char>) -> Self {
        let ids = graphemes
            .iter()
            .enumerate()
            .map(|(i, &ch)| (ch, RESERVED_SYMBOLS + i))
            .collect();
        Vocabulary { graphemes, ids }
    }

    /// Total symbol count including the reserved ids.
    pub fn size(&self) -> usize {
        RESERVED_SYMBOLS + self.graphemes.len()
    }

    pub fn graphemes(&self) -> &[char] {
        &self.graphemes
    }

    /// The graphemes as one string, in id order (for checkpoints).
    pub fn grapheme_string(&self) -> String {
        self.graphemes.iter().collect()
    }

    pub fn id_of(&self, ch: char) -> Result<usize, CorpusError> {
        self.ids.get(&ch).copied().ok_or(CorpusError::UnknownGrapheme(ch))
    }

    /// Encodes a transcript into grapheme ids (no reserved symbols).
    pub fn encode(&self, transcript: &str) -> Result<Vec<usize>, CorpusError> {
        transcript.chars().map(|ch| self.id_of(ch)).collect()
    }

    /// Teacher-forcing target: the encoded transcript with EOS appended.
    /// An empty transcript becomes the single symbol EOS.
    pub fn targets(&self, transcript: &str) -> Result<Vec<usize>, CorpusError> {
        let mut t = self.encode(transcript)?;
        t.push(EOS);
        Ok(t)
    }

    /// Renders grapheme ids back to text, skipping reserved symbols.
    pub fn decode(&self, ids: &[usize]) -> Result<String, CorpusError> {
        let mut out = String::with_capacity(ids.len());
        for &id in ids {
            if id < RESERVED_SYMBOLS {
                continue;
            }
            let ch = self
                .graphemes
                .get(id - RESERVED_SYMBOLS)
                .ok_or(CorpusError::UnknownSymbol(id))?;
            out.push(*ch);
        }
        Ok(out)
    }
}
