//! Flat `key = value` config text.
//!
//! One key per line, `#` starts a comment, values with spaces are quoted.
//! Sections are dotted prefixes (`corpus.*`, `model.*`, `train.*`), so one
//! experiment file can feed every stage. Rendering is canonical: fixed key
//! order, fixed float formatting, so a config hash is stable.

use indexmap::IndexMap;
use std::cell::RefCell;
use std::collections::HashSet;
use thiserror::Error;

use crate::augment::MixSpec;
use crate::corpus::ToyCorpusConfig;
use crate::model::{ModelConfig, Pooling, SEncoderSpec, Variant};
use crate::numerics::{Activation, ConvLayerSpec};
use crate::train::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config line {0} is not `key = value`: {1:?}")]
    BadLine(usize, String),
    #[error("duplicate config key {0}")]
    DuplicateKey(String),
    #[error("missing config key {0}")]
    Missing(String),
    #[error("config key {key}: cannot parse {got:?} as {want}")]
    BadValue { key: String, want: &'static str, got: String },
    #[error("unknown config keys: {0}")]
    UnknownKeys(String),
}

#[derive(Debug, Clone, Default)]
pub struct FlatConfig {
    entries: IndexMap<String, String>,
    used: RefCell<HashSet<String>>,
}

impl FlatConfig {
    pub fn new() -> Self {
        FlatConfig::default()
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = FlatConfig::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::BadLine(i + 1, raw.to_string()));
            };
            let key = key.trim().to_string();
            let value = unquote(value.trim());
            if cfg.entries.insert(key.clone(), value).is_some() {
                return Err(ConfigError::DuplicateKey(key));
            }
        }
        Ok(cfg)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&quote(v));
            out.push('\n');
        }
        out
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        let v = self.entries.get(key);
        if v.is_some() {
            self.used.borrow_mut().insert(key.to_string());
        }
        v.map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str, ConfigError> {
        self.get(key).ok_or_else(|| ConfigError::Missing(key.to_string()))
    }

    fn parse_with<T, F>(&self, key: &str, want: &'static str, f: F) -> Result<Option<T>, ConfigError>
    where
        F: FnOnce(&str) -> Option<T>,
    {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => f(raw)
                .map(Some)
                .ok_or_else(|| ConfigError::BadValue { key: key.into(), want, got: raw.into() }),
        }
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize, ConfigError> {
        Ok(self.parse_with(key, "integer", |s| s.parse().ok())?.unwrap_or(default))
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64, ConfigError> {
        Ok(self.parse_with(key, "integer", |s| s.parse().ok())?.unwrap_or(default))
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        Ok(self.parse_with(key, "number", |s| s.parse().ok())?.unwrap_or(default))
    }

    /// Inclusive `lo..hi` range.
    pub fn range_or(
        &self,
        key: &str,
        default: (usize, usize),
    ) -> Result<(usize, usize), ConfigError> {
        Ok(self
            .parse_with(key, "range lo..hi", |s| {
                let (lo, hi) = s.split_once("..")?;
                Some((lo.trim().parse().ok()?, hi.trim().parse().ok()?))
            })?
            .unwrap_or(default))
    }

    /// Errors if any key under `prefix.` was never read.
    pub fn check_consumed(&self, prefix: &str) -> Result<(), ConfigError> {
        let used = self.used.borrow();
        let mut unknown: Vec<&str> = self
            .entries
            .keys()
            .filter(|k| k.starts_with(&format!("{prefix}.")) && !used.contains(*k))
            .map(String::as_str)
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            unknown.sort_unstable();
            Err(ConfigError::UnknownKeys(unknown.join(", ")))
        }
    }
}

fn quote(v: &str) -> String {
    if v.is_empty()
        || v.starts_with(' ')
        || v.ends_with(' ')
        || v.contains('"')
        || v.contains('\\')
        || v.starts_with('#')
    {
        let mut out = String::from("\"");
        for ch in v.chars() {
            if ch == '"' || ch == '\\' {
                out.push('\\');
            }
            out.push(ch);
        }
        out.push('"');
        out
    } else {
        v.to_string()
    }
}

fn unquote(v: &str) -> String {
    if v.len() >= 2 && v.starts_with('"') && v.ends_with('"') {
        let inner = &v[1..v.len() - 1];
        let mut out = String::with_capacity(inner.len());
        let mut escape = false;
        for ch in inner.chars() {
            if escape {
                out.push(ch);
                escape = false;
            } else if ch == '\\' {
                escape = true;
            } else {
                out.push(ch);
            }
        }
        out
    } else {
        v.to_string()
    }
}

// ── conv layer text form: "3x3 2x2 1>2 tanh" ─────────────────────────

pub fn render_conv_layer(spec: &ConvLayerSpec) -> String {
    let act = match spec.activation {
        Activation::Linear => "linear",
        Activation::Tanh => "tanh",
    };
    format!(
        "{}x{} {}x{} {}>{} {}",
        spec.kernel_t, spec.kernel_f, spec.stride_t, spec.stride_f, spec.in_channels,
        spec.out_channels, act
    )
}

pub fn parse_conv_layer(s: &str) -> Option<ConvLayerSpec> {
    let parts: Vec<&str> = s.split_whitespace().collect();
    if parts.len() != 4 {
        return None;
    }
    let pair = |p: &str, sep: char| -> Option<(usize, usize)> {
        let (a, b) = p.split_once(sep)?;
        Some((a.parse().ok()?, b.parse().ok()?))
    };
    let (kernel_t, kernel_f) = pair(parts[0], 'x')?;
    let (stride_t, stride_f) = pair(parts[1], 'x')?;
    let (in_channels, out_channels) = pair(parts[2], '>')?;
    let activation = match parts[3] {
        "linear" => Activation::Linear,
        "tanh" => Activation::Tanh,
        _ => return None,
    };
    Some(ConvLayerSpec {
        kernel_t,
        kernel_f,
        stride_t,
        stride_f,
        in_channels,
        out_channels,
        activation,
    })
}

fn write_conv_stack(cfg: &mut FlatConfig, prefix: &str, specs: &[ConvLayerSpec]) {
    cfg.set(&format!("{prefix}.len"), specs.len());
    for (i, spec) in specs.iter().enumerate() {
        cfg.set(&format!("{prefix}.{i}"), render_conv_layer(spec));
    }
}

fn read_conv_stack(
    cfg: &FlatConfig,
    prefix: &str,
    default: &[ConvLayerSpec],
) -> Result<Vec<ConvLayerSpec>, ConfigError> {
    let len = cfg.usize_or(&format!("{prefix}.len"), usize::MAX)?;
    if len == usize::MAX {
        return Ok(default.to_vec());
    }
    (0..len)
        .map(|i| {
            let key = format!("{prefix}.{i}");
            let raw = cfg.require(&key)?;
            parse_conv_layer(raw).ok_or_else(|| ConfigError::BadValue {
                key,
                want: "conv layer `KtxKf StxSf Cin>Cout act`",
                got: raw.to_string(),
            })
        })
        .collect()
}

// ── model config ─────────────────────────────────────────────────────

/// Writes a model config under `model.*` keys (canonical order).
pub fn write_model_config(cfg: &mut FlatConfig, model: &ModelConfig) {
    cfg.set("model.variant", model.variant.name());
    cfg.set("model.feat_dim", model.feat_dim);
    write_conv_stack(cfg, "model.conv", &model.conv);
    cfg.set("model.encoder.layers", model.encoder_layers);
    cfg.set("model.encoder.units", model.encoder_units);
    if let Some(s) = &model.s_encoder {
        write_conv_stack(cfg, "model.senc.conv", &s.conv);
        cfg.set(
            "model.senc.units",
            s.recurrent_units.map_or("none".to_string(), |u| u.to_string()),
        );
        cfg.set(
            "model.senc.pooling",
            match s.pooling {
                Pooling::MaxOverFrames => "max",
                Pooling::LastState => "last",
            },
        );
    }
    cfg.set("model.attention.dim", model.attention_dim);
    cfg.set("model.decoder.layers", model.decoder_layers);
    cfg.set("model.decoder.units", model.decoder_units);
    cfg.set("model.embed.dim", model.embed_dim);
    cfg.set("model.vocab_size", model.vocab_size);
}

/// Reads `model.*` keys over a desk-scale default of the given variant.
pub fn read_model_config(cfg: &FlatConfig, vocab_size: usize) -> Result<ModelConfig, ConfigError> {
    let variant_raw = cfg.get("model.variant").unwrap_or("baseline").to_string();
    let variant: Variant = variant_raw.parse().map_err(|_| ConfigError::BadValue {
        key: "model.variant".into(),
        want: "baseline | multi-source | mask-based",
        got: variant_raw.clone(),
    })?;
    let default = ModelConfig::desk_scale(variant, vocab_size);

    let s_encoder = match default.s_encoder {
        None => None,
        Some(ds) => {
            let conv = read_conv_stack(cfg, "model.senc.conv", &ds.conv)?;
            let units_raw = cfg.get("model.senc.units").unwrap_or_default().to_string();
            let recurrent_units = match units_raw.as_str() {
                "" => ds.recurrent_units,
                "none" => None,
                n => Some(n.parse().map_err(|_| ConfigError::BadValue {
                    key: "model.senc.units".into(),
                    want: "integer or `none`",
                    got: units_raw.clone(),
                })?),
            };
            let pooling = match cfg.get("model.senc.pooling") {
                None => ds.pooling,
                Some("max") => Pooling::MaxOverFrames,
                Some("last") => Pooling::LastState,
                Some(other) => {
                    return Err(ConfigError::BadValue {
                        key: "model.senc.pooling".into(),
                        want: "max | last",
                        got: other.to_string(),
                    })
                }
            };
            Some(SEncoderSpec { conv, recurrent_units, pooling })
        }
    };

    Ok(ModelConfig {
        variant,
        feat_dim: cfg.usize_or("model.feat_dim", default.feat_dim)?,
        conv: read_conv_stack(cfg, "model.conv", &default.conv)?,
        encoder_layers: cfg.usize_or("model.encoder.layers", default.encoder_layers)?,
        encoder_units: cfg.usize_or("model.encoder.units", default.encoder_units)?,
        s_encoder,
        attention_dim: cfg.usize_or("model.attention.dim", default.attention_dim)?,
        decoder_layers: cfg.usize_or("model.decoder.layers", default.decoder_layers)?,
        decoder_units: cfg.usize_or("model.decoder.units", default.decoder_units)?,
        embed_dim: cfg.usize_or("model.embed.dim", default.embed_dim)?,
        vocab_size: cfg.usize_or("model.vocab_size", vocab_size)?,
    })
}

// ── corpus config ────────────────────────────────────────────────────

pub fn write_corpus_config(cfg: &mut FlatConfig, c: &ToyCorpusConfig) {
    cfg.set("corpus.n_utts", c.n_utts);
    cfg.set("corpus.feat_dim", c.feat_dim);
    cfg.set("corpus.speakers", c.speakers);
    cfg.set("corpus.transcript_len", format!("{}..{}", c.transcript_len.0, c.transcript_len.1));
    cfg.set("corpus.anchor_len", format!("{}..{}", c.anchor_len.0, c.anchor_len.1));
    cfg.set("corpus.body_len_per_grapheme", c.body_len_per_grapheme);
    cfg.set("corpus.noise_scale", c.noise_scale);
    cfg.set("corpus.n_letters", c.n_letters);
}

pub fn read_corpus_config(cfg: &FlatConfig) -> Result<ToyCorpusConfig, ConfigError> {
    let d = ToyCorpusConfig::default();
    let out = ToyCorpusConfig {
        n_utts: cfg.usize_or("corpus.n_utts", d.n_utts)?,
        feat_dim: cfg.usize_or("corpus.feat_dim", d.feat_dim)?,
        speakers: cfg.usize_or("corpus.speakers", d.speakers)?,
        transcript_len: cfg.range_or("corpus.transcript_len", d.transcript_len)?,
        anchor_len: cfg.range_or("corpus.anchor_len", d.anchor_len)?,
        body_len_per_grapheme: cfg.usize_or("corpus.body_len_per_grapheme", d.body_len_per_grapheme)?,
        noise_scale: cfg.f64_or("corpus.noise_scale", d.noise_scale)?,
        n_letters: cfg.usize_or("corpus.n_letters", d.n_letters)?,
    };
    cfg.check_consumed("corpus")?;
    Ok(out)
}

// ── train config ─────────────────────────────────────────────────────

pub fn write_train_config(cfg: &mut FlatConfig, t: &TrainConfig) {
    cfg.set("train.lambda", t.lambda);
    cfg.set("train.mask_weight_1", t.mask_weights.0);
    cfg.set("train.mask_weight_0", t.mask_weights.1);
    cfg.set("train.lr", t.learning_rate);
    cfg.set("train.decay", t.decay);
    cfg.set("train.epochs", t.epochs);
    cfg.set("train.batch_size", t.batch_size);
    cfg.set("train.seed", t.seed);
    cfg.set("train.beta1", t.beta1);
    cfg.set("train.beta2", t.beta2);
    cfg.set("train.epsilon", t.epsilon);
    cfg.set("train.clip_norm", t.clip_norm);
    cfg.set("train.dev_beam", t.dev_beam);
}

pub fn read_train_config(cfg: &FlatConfig) -> Result<TrainConfig, ConfigError> {
    let d = TrainConfig::default();
    let out = TrainConfig {
        lambda: cfg.f64_or("train.lambda", d.lambda)?,
        mask_weights: (
            cfg.f64_or("train.mask_weight_1", d.mask_weights.0)?,
            cfg.f64_or("train.mask_weight_0", d.mask_weights.1)?,
        ),
        learning_rate: cfg.f64_or("train.lr", d.learning_rate)?,
        decay: cfg.f64_or("train.decay", d.decay)?,
        epochs: cfg.usize_or("train.epochs", d.epochs)?,
        batch_size: cfg.usize_or("train.batch_size", d.batch_size)?,
        seed: cfg.u64_or("train.seed", d.seed)?,
        beta1: cfg.f64_or("train.beta1", d.beta1)?,
        beta2: cfg.f64_or("train.beta2", d.beta2)?,
        epsilon: cfg.f64_or("train.epsilon", d.epsilon)?,
        clip_norm: cfg.f64_or("train.clip_norm", d.clip_norm)?,
        dev_beam: cfg.usize_or("train.dev_beam", d.dev_beam)?,
    };
    cfg.check_consumed("train")?;
    Ok(out)
}

/// Mix fractions in `a,b,c` form.
pub fn parse_mix(s: &str) -> Option<MixSpec> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse().ok())
        .collect::<Option<Vec<f64>>>()?;
    if parts.len() != 3 {
        return None;
    }
    Some(MixSpec { unchanged: parts[0], method1: parts[1], method2: parts[2] })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_render_round_trip() {
        let text = "a.x = 1\n# comment\nb.y = \"hello world \"\nc.z = 2.5\n";
        let cfg = FlatConfig::parse(text).unwrap();
        assert_eq!(cfg.get("a.x"), Some("1"));
        assert_eq!(cfg.get("b.y"), Some("hello world "));
        let again = FlatConfig::parse(&cfg.render()).unwrap();
        assert_eq!(again.get("b.y"), Some("hello world "));
    }

    #[test]
    fn rejects_bad_lines_and_duplicates() {
        assert!(matches!(FlatConfig::parse("nonsense"), Err(ConfigError::BadLine(1, _))));
        assert!(matches!(
            FlatConfig::parse("a = 1\na = 2"),
            Err(ConfigError::DuplicateKey(_))
        ));
    }

    #[test]
    fn unknown_keys_in_section_are_errors() {
        let cfg = FlatConfig::parse("corpus.n_utts = 5\ncorpus.typo = 1").unwrap();
        assert!(matches!(read_corpus_config(&cfg), Err(ConfigError::UnknownKeys(_))));
    }

    #[test]
    fn model_config_round_trips_through_text() {
        for variant in [Variant::Baseline, Variant::MultiSource, Variant::MaskBased] {
            let model = ModelConfig::desk_scale(variant, 14);
            let mut cfg = FlatConfig::new();
            write_model_config(&mut cfg, &model);
            let parsed = FlatConfig::parse(&cfg.render()).unwrap();
            let back = read_model_config(&parsed, 14).unwrap();
            assert_eq!(back, model);
        }
    }

    #[test]
    fn conv_layer_text_round_trips() {
        let spec = ConvLayerSpec {
            kernel_t: 3,
            kernel_f: 2,
            stride_t: 2,
            stride_f: 4,
            in_channels: 2,
            out_channels: 8,
            activation: Activation::Linear,
        };
        assert_eq!(parse_conv_layer(&render_conv_layer(&spec)), Some(spec));
        assert!(parse_conv_layer("bogus").is_none());
    }

    #[test]
    fn corpus_and_train_configs_apply_defaults() {
        let cfg = FlatConfig::parse("corpus.n_utts = 7\ntrain.epochs = 3").unwrap();
        let c = read_corpus_config(&cfg).unwrap();
        assert_eq!(c.n_utts, 7);
        assert_eq!(c.feat_dim, ToyCorpusConfig::default().feat_dim);
        let t = read_train_config(&cfg).unwrap();
        assert_eq!(t.epochs, 3);
        assert_eq!(t.learning_rate, TrainConfig::default().learning_rate);
    }

    #[test]
    fn mix_string_parses() {
        let m = parse_mix("0.5, 0.44, 0.06").unwrap();
        assert_eq!(m, MixSpec::reference());
        assert!(parse_mix("0.5,0.5").is_none());
    }
}
