//! Corpus file format.
//!
//! Binary, little-endian: magic `ANCH`, format version u32, utterance
//! count u32; per utterance: id (u16 length + UTF-8), transcript (u16
//! length + UTF-8), feat_dim u16, anchor frames u32, body frames u32,
//! anchor values (frames × dim, f32, frame-major), body values likewise,
//! mask flag u8 (0 absent / 1 present), then body-frames bytes of {0,1}
//! when present. Features are stored as f32; the toolkit only ever
//! produces f32-rounded values, so write∘read is the identity.

use std::fs;
use std::path::Path;

use super::{AnchoredUtterance, Corpus, CorpusError, FeatureSequence, GoldMask};

pub const CORPUS_MAGIC: [u8; 4] = *b"ANCH";
pub const CORPUS_VERSION: u32 = 1;

pub fn write_corpus(corpus: &Corpus, path: &Path) -> Result<(), CorpusError> {
    let mut out = Vec::new();
    out.extend_from_slice(&CORPUS_MAGIC);
    out.extend_from_slice(&CORPUS_VERSION.to_le_bytes());
    out.extend_from_slice(&(corpus.len() as u32).to_le_bytes());
    for utt in corpus.iter() {
        write_str(&mut out, &utt.id)?;
        write_str(&mut out, &utt.transcript)?;
        out.extend_from_slice(&(utt.body.dim() as u16).to_le_bytes());
        out.extend_from_slice(&(utt.anchor.frames() as u32).to_le_bytes());
        out.extend_from_slice(&(utt.body.frames() as u32).to_le_bytes());
        for v in utt.anchor.data() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        for v in utt.body.data() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        match &utt.gold_mask {
            None => out.push(0),
            Some(mask) => {
                out.push(1);
                out.extend_from_slice(mask.labels());
            }
        }
    }
    fs::write(path, out)?;
    Ok(())
}

fn write_str(out: &mut Vec<u8>, s: &str) -> Result<(), CorpusError> {
    let bytes = s.as_bytes();
    if bytes.len() > u16::MAX as usize {
        return Err(CorpusError::BadUtterance(format!("string of {} bytes", bytes.len())));
    }
    out.extend_from_slice(&(bytes.len() as u16).to_le_bytes());
    out.extend_from_slice(bytes);
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CorpusError> {
        if self.pos + n > self.buf.len() {
            return Err(CorpusError::Truncated(what));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, CorpusError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, CorpusError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CorpusError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &'static str) -> Result<String, CorpusError> {
        let len = self.u16(what)? as usize;
        let bytes = self.take(len, what)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| CorpusError::BadUtterance(format!("{what} is not UTF-8")))
    }

    fn f32_block(&mut self, count: usize, what: &'static str) -> Result<Vec<f64>, CorpusError> {
        let bytes = self.take(count * 4, what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }
}

pub fn read_corpus(path: &Path) -> Result<Corpus, CorpusError> {
    let buf = fs::read(path)?;
    let mut r = Reader { buf: &buf, pos: 0 };

    let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
    if magic != CORPUS_MAGIC {
        return Err(CorpusError::BadMagic(magic));
    }
    let version = r.u32("version")?;
    if version != CORPUS_VERSION {
        return Err(CorpusError::BadVersion(version));
    }
    let count = r.u32("utterance count")? as usize;

    let mut utterances = Vec::with_capacity(count);
    for _ in 0..count {
        let id = r.string("utterance id")?;
        let transcript = r.string("transcript")?;
        let dim = r.u16("feat_dim")? as usize;
        let anchor_frames = r.u32("anchor length")? as usize;
        let body_frames = r.u32("body length")? as usize;
        let anchor = r.f32_block(anchor_frames * dim, "anchor frames")?;
        let body = r.f32_block(body_frames * dim, "body frames")?;
        let gold_mask = match r.u8("mask flag")? {
            0 => None,
            1 => {
                let labels = r.take(body_frames, "mask labels")?.to_vec();
                Some(GoldMask::new(labels)?)
            }
            flag => return Err(CorpusError::InvalidMaskByte(flag)),
        };
        utterances.push(AnchoredUtterance::new(
            id,
            FeatureSequence::new(dim, anchor)?,
            FeatureSequence::new(dim, body)?,
            transcript,
            gold_mask,
        )?);
    }
    Ok(Corpus::new(utterances))
}
