//! Checkpoint file format.
//!
//! Binary, little-endian: magic `ANCK`, version u32, canonical config
//! text (u32 length + UTF-8 holding the `model.*` keys and the vocabulary
//! graphemes), parameter count u32; per parameter: name (u16 + UTF-8),
//! rank u8, dims u32 each, f64 values row-major. Values are written as
//! f64, so write∘read is exact.

use std::fs;
use std::path::Path;

use crate::config::{read_model_config, write_model_config, FlatConfig};
use crate::corpus::Vocabulary;
use crate::numerics::{ParamSet, Tensor};

use super::{ModelConfig, ModelError};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"ANCK";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint(
    path: &Path,
    cfg: &ModelConfig,
    vocab: &Vocabulary,
    params: &ParamSet,
) -> Result<(), ModelError> {
    let mut flat = FlatConfig::new();
    write_model_config(&mut flat, cfg);
    flat.set("vocab.graphemes", vocab.grapheme_string());
    let config_text = flat.render();

    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(config_text.len() as u32).to_le_bytes());
    out.extend_from_slice(config_text.as_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, tensor) in params.iter() {
        let name_bytes = name.as_bytes();
        out.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
        out.extend_from_slice(name_bytes);
        out.push(tensor.rank() as u8);
        for &d in tensor.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, out).map_err(|e| ModelError::BadCheckpoint(format!("write {path:?}: {e}")))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], ModelError> {
        if self.pos + n > self.buf.len() {
            return Err(ModelError::BadCheckpoint(format!("truncated while reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16, ModelError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, Vocabulary, ParamSet), ModelError> {
    let buf =
        fs::read(path).map_err(|e| ModelError::BadCheckpoint(format!("read {path:?}: {e}")))?;
    let mut r = Reader { buf: &buf, pos: 0 };

    let magic = r.take(4, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(ModelError::BadCheckpoint(format!("bad magic {magic:?}")));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::BadCheckpoint(format!("unsupported version {version}")));
    }

    let config_len = r.u32("config length")? as usize;
    let config_text = std::str::from_utf8(r.take(config_len, "config text")?)
        .map_err(|_| ModelError::BadCheckpoint("config text is not UTF-8".into()))?;
    let flat = FlatConfig::parse(config_text)
        .map_err(|e| ModelError::BadCheckpoint(format!("config: {e}")))?;
    let graphemes: Vec<char> = flat
        .get("vocab.graphemes")
        .ok_or_else(|| ModelError::BadCheckpoint("missing vocab.graphemes".into()))?
        .chars()
        .collect();
    let vocab = Vocabulary::from_graphemes(graphemes);
    let cfg = read_model_config(&flat, vocab.size())
        .map_err(|e| ModelError::BadCheckpoint(format!("config: {e}")))?;
    cfg.validate()?;

    let count = r.u32("parameter count")? as usize;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let name_len = r.u16("parameter name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "parameter name")?)
            .map_err(|_| ModelError::BadCheckpoint("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = r.take(1, "rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dimension")? as usize);
        }
        let numel: usize = shape.iter().product();
        let bytes = r.take(numel * 8, "parameter values")?;
        let data: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.insert(name, Tensor::new(shape, data)?);
    }
    Ok((cfg, vocab, params))
}
