//! The three model variants as pure forward computations over named
//! parameters.
//!
//! All variants share the same encoder / Bahdanau-attention / decoder
//! skeleton. Multi-source attention adds an auxiliary speaker encoder
//! (S-Encoder) whose anchor/body similarity biases the attention
//! energies; the mask-based variant instead squashes that similarity
//! through a sigmoid and scales the encoder output frame by frame before
//! attention sees it.

mod checkpoint;
mod forward;
mod infer;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use forward::{
    attention_energy, attn_vars, build_forward, build_mask_gates, decode_step, encode, forward,
    mask_frames, multi_source_attend, s_encode, AttendContext, AttnVars, BuiltForward,
    DecoderTapeState, ForwardOptions, ForwardTrace,
};
pub use infer::{encode_for_inference, inference_step, start_state, EncodeContext, InferState};

use rand::Rng;
use thiserror::Error;

use crate::corpus::CorpusError;
use crate::numerics::{
    receptive_field, time_stride, Activation, ConvLayerSpec, NumericsError, ParamSet, Tensor,
};
use crate::seeding;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("invalid model config: {0}")]
    BadConfig(String),
    #[error("unknown symbol id {0}")]
    UnknownSymbol(usize),
    #[error("encoder produced {h} frames but the s-encoder produced {u}")]
    AlignmentMismatch { h: usize, u: usize },
    #[error("teacher targets must be non-empty and end with end-of-sequence")]
    BadTargets,
    #[error("checkpoint: {0}")]
    BadCheckpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Baseline,
    MultiSource,
    MaskBased,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::MultiSource => "multi-source",
            Variant::MaskBased => "mask-based",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "baseline" => Ok(Variant::Baseline),
            "multi-source" | "multi_source" => Ok(Variant::MultiSource),
            "mask-based" | "mask_based" => Ok(Variant::MaskBased),
            other => Err(format!("unknown variant {other:?}")),
        }
    }
}

/// How the S-Encoder's frame outputs become the fixed-length anchor
/// vector: max over frames for convolutional S-Encoders, the final
/// hidden state for recurrent ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pooling {
    MaxOverFrames,
    LastState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SEncoderSpec {
    pub conv: Vec<ConvLayerSpec>,
    /// Units of the bidirectional recurrent layer on top of the conv
    /// stack, if any.
    pub recurrent_units: Option<usize>,
    pub pooling: Pooling,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub feat_dim: usize,
    pub conv: Vec<ConvLayerSpec>,
    pub encoder_layers: usize,
    pub encoder_units: usize,
    pub s_encoder: Option<SEncoderSpec>,
    pub attention_dim: usize,
    pub decoder_layers: usize,
    pub decoder_units: usize,
    pub embed_dim: usize,
    pub vocab_size: usize,
}

fn conv_out_dim(specs: &[ConvLayerSpec], feat_dim: usize) -> usize {
    let mut f = feat_dim;
    let mut channels = 1;
    for spec in specs {
        f = f.div_ceil(spec.stride_f);
        channels = spec.out_channels;
    }
    f * channels
}

impl ModelConfig {
    /// Encoder output dimension per frame (bidirectional concatenation).
    pub fn h_dim(&self) -> usize {
        2 * self.encoder_units
    }

    /// S-Encoder output dimension per frame.
    pub fn s_dim(&self) -> usize {
        let spec = self.s_encoder.as_ref().expect("anchor variant");
        match spec.recurrent_units {
            Some(u) => 2 * u,
            None => conv_out_dim(&spec.conv, self.feat_dim),
        }
    }

    /// Flattened conv-stack output dimension feeding the first LSTM.
    pub fn encoder_input_dim(&self) -> usize {
        conv_out_dim(&self.conv, self.feat_dim)
    }

    /// Total time downsampling factor of the encoder.
    pub fn time_stride(&self) -> usize {
        time_stride(&self.conv)
    }

    /// Minimum body length the encoder accepts.
    pub fn receptive_field(&self) -> usize {
        let enc = receptive_field(&self.conv);
        match &self.s_encoder {
            Some(s) => enc.max(receptive_field(&s.conv)),
            None => enc,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::BadConfig(msg));
        if self.decoder_layers == 0 || self.encoder_layers == 0 {
            return bad("encoder and decoder need at least one layer".into());
        }
        if [self.feat_dim, self.encoder_units, self.attention_dim, self.decoder_units, self.embed_dim]
            .iter()
            .any(|&d| d == 0)
        {
            return bad("all dimensions must be positive".into());
        }
        if self.vocab_size <= crate::corpus::RESERVED_SYMBOLS {
            return bad(format!("vocab size {} leaves no graphemes", self.vocab_size));
        }
        check_conv_chain(&self.conv, "encoder")?;
        match (&self.variant, &self.s_encoder) {
            (Variant::Baseline, Some(_)) => {
                return bad("baseline takes no s-encoder".into());
            }
            (Variant::Baseline, None) => {}
            (_, None) => return bad(format!("{} needs an s-encoder", self.variant.name())),
            (_, Some(spec)) => {
                check_conv_chain(&spec.conv, "s-encoder")?;
                if time_stride(&spec.conv) != self.time_stride() {
                    return bad(format!(
                        "s-encoder time stride {} must match encoder stride {} so u and h align",
                        time_stride(&spec.conv),
                        self.time_stride()
                    ));
                }
                if spec.recurrent_units == Some(0) {
                    return bad("s-encoder recurrent layer needs units".into());
                }
            }
        }
        Ok(())
    }

    /// Desk-scale defaults: tiny layer sizes that keep the full topology.
    pub fn desk_scale(variant: Variant, vocab_size: usize) -> Self {
        let conv = vec![ConvLayerSpec {
            kernel_t: 3,
            kernel_f: 3,
            stride_t: 2,
            stride_f: 2,
            in_channels: 1,
            out_channels: 2,
            activation: Activation::Tanh,
        }];
        let s_encoder = match variant {
            Variant::Baseline => None,
            Variant::MultiSource => Some(SEncoderSpec {
                conv: vec![ConvLayerSpec {
                    kernel_t: 3,
                    kernel_f: 3,
                    stride_t: 2,
                    stride_f: 2,
                    in_channels: 1,
                    out_channels: 4,
                    activation: Activation::Tanh,
                }],
                recurrent_units: None,
                pooling: Pooling::MaxOverFrames,
            }),
            Variant::MaskBased => Some(SEncoderSpec {
                conv: vec![ConvLayerSpec {
                    kernel_t: 3,
                    kernel_f: 3,
                    stride_t: 2,
                    stride_f: 2,
                    in_channels: 1,
                    out_channels: 2,
                    activation: Activation::Tanh,
                }],
                recurrent_units: Some(16),
                pooling: Pooling::LastState,
            }),
        };
        ModelConfig {
            variant,
            feat_dim: 8,
            conv,
            encoder_layers: 1,
            encoder_units: 32,
            s_encoder,
            attention_dim: 32,
            // Two layers so the first symbol's logits can see the current
            // context vector, which only upper decoder layers receive.
            decoder_layers: 2,
            decoder_units: 32,
            embed_dim: 8,
            vocab_size,
        }
    }

    /// Full-scale reference topology (documented, not trained here):
    /// 3 conv layers for 2x time and 8x frequency downsampling over 64-dim
    /// features, 3 bidirectional encoder layers and 3 decoder layers of
    /// 320 units, grapheme vocabulary of 36.
    pub fn full_scale(variant: Variant) -> Self {
        let conv_layer = |stride_t, stride_f, in_c, out_c| ConvLayerSpec {
            kernel_t: 3,
            kernel_f: 3,
            stride_t,
            stride_f,
            in_channels: in_c,
            out_channels: out_c,
            activation: Activation::Tanh,
        };
        let conv = vec![
            conv_layer(2, 2, 1, 32),
            conv_layer(1, 2, 32, 32),
            conv_layer(1, 2, 32, 32),
        ];
        let s_encoder = match variant {
            Variant::Baseline => None,
            Variant::MultiSource => Some(SEncoderSpec {
                conv: conv.clone(),
                recurrent_units: None,
                pooling: Pooling::MaxOverFrames,
            }),
            Variant::MaskBased => Some(SEncoderSpec {
                conv: conv.clone(),
                recurrent_units: Some(320),
                pooling: Pooling::LastState,
            }),
        };
        ModelConfig {
            variant,
            feat_dim: 64,
            conv,
            encoder_layers: 3,
            encoder_units: 320,
            s_encoder,
            attention_dim: 320,
            decoder_layers: 3,
            decoder_units: 320,
            embed_dim: 96,
            vocab_size: 36,
        }
    }

    /// Very small configuration for gradient verification, where cost is
    /// quadratic in parameter count.
    pub fn grad_check_scale(variant: Variant, vocab_size: usize) -> Self {
        let conv = vec![ConvLayerSpec {
            kernel_t: 2,
            kernel_f: 2,
            stride_t: 2,
            stride_f: 2,
            in_channels: 1,
            out_channels: 2,
            activation: Activation::Tanh,
        }];
        let s_encoder = match variant {
            Variant::Baseline => None,
            Variant::MultiSource => Some(SEncoderSpec {
                conv: conv.clone(),
                recurrent_units: None,
                pooling: Pooling::MaxOverFrames,
            }),
            Variant::MaskBased => Some(SEncoderSpec {
                conv: conv.clone(),
                recurrent_units: Some(4),
                pooling: Pooling::LastState,
            }),
        };
        ModelConfig {
            variant,
            feat_dim: 4,
            conv,
            encoder_layers: 1,
            encoder_units: 5,
            s_encoder,
            attention_dim: 6,
            decoder_layers: 2,
            decoder_units: 5,
            embed_dim: 3,
            vocab_size,
        }
    }
}

fn check_conv_chain(specs: &[ConvLayerSpec], what: &str) -> Result<(), ModelError> {
    if specs.is_empty() {
        return Err(ModelError::BadConfig(format!("{what} conv stack is empty")));
    }
    if specs[0].in_channels != 1 {
        return Err(ModelError::BadConfig(format!("{what} conv layer 0 must take 1 channel")));
    }
    for w in specs.windows(2) {
        if w[1].in_channels != w[0].out_channels {
            return Err(ModelError::BadConfig(format!(
                "{what} conv channel chain broken: {} out vs {} in",
                w[0].out_channels, w[1].in_channels
            )));
        }
    }
    for (i, s) in specs.iter().enumerate() {
        if s.kernel_t == 0 || s.kernel_f == 0 || s.stride_t == 0 || s.stride_f == 0 || s.out_channels == 0 {
            return Err(ModelError::BadConfig(format!("{what} conv layer {i} has a zero field")));
        }
    }
    Ok(())
}

/// Names and shapes of every parameter of a config, in a fixed order.
fn param_shapes(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let mut shapes = Vec::new();
    let conv_shapes = |shapes: &mut Vec<(String, Vec<usize>)>, prefix: &str, specs: &[ConvLayerSpec]| {
        for (i, spec) in specs.iter().enumerate() {
            shapes.push((format!("{prefix}.conv{i}.kernel"), spec.kernel_shape()));
            shapes.push((format!("{prefix}.conv{i}.bias"), spec.bias_shape()));
        }
    };
    let lstm_shapes =
        |shapes: &mut Vec<(String, Vec<usize>)>, name: String, input_dim: usize, units: usize| {
            shapes.push((format!("{name}.w_ih"), vec![4 * units, input_dim]));
            shapes.push((format!("{name}.w_hh"), vec![4 * units, units]));
            shapes.push((format!("{name}.b"), vec![4 * units]));
        };

    conv_shapes(&mut shapes, "enc", &cfg.conv);
    let mut in_dim = cfg.encoder_input_dim();
    for layer in 0..cfg.encoder_layers {
        for dir in ["fwd", "bwd"] {
            lstm_shapes(&mut shapes, format!("enc.lstm{layer}.{dir}"), in_dim, cfg.encoder_units);
        }
        in_dim = cfg.h_dim();
    }

    if let Some(senc) = &cfg.s_encoder {
        conv_shapes(&mut shapes, "senc", &senc.conv);
        if let Some(units) = senc.recurrent_units {
            let in_dim = conv_out_dim(&senc.conv, cfg.feat_dim);
            for dir in ["fwd", "bwd"] {
                lstm_shapes(&mut shapes, format!("senc.lstm0.{dir}"), in_dim, units);
            }
        }
    }

    shapes.push(("attn.w_q".into(), vec![cfg.attention_dim, cfg.decoder_units]));
    shapes.push(("attn.w_h".into(), vec![cfg.attention_dim, cfg.h_dim()]));
    shapes.push(("attn.b".into(), vec![cfg.attention_dim]));
    shapes.push(("attn.v".into(), vec![cfg.attention_dim]));

    shapes.push(("dec.embed".into(), vec![cfg.vocab_size, cfg.embed_dim]));
    let mut in_dim = cfg.embed_dim + cfg.h_dim();
    for layer in 0..cfg.decoder_layers {
        lstm_shapes(&mut shapes, format!("dec.lstm{layer}"), in_dim, cfg.decoder_units);
        in_dim = cfg.decoder_units + cfg.h_dim();
    }

    shapes.push(("out.w_f".into(), vec![cfg.vocab_size, cfg.decoder_units]));
    shapes.push(("out.b_f".into(), vec![cfg.vocab_size]));

    if cfg.variant != Variant::Baseline {
        shapes.push(("g".into(), vec![1]));
    }
    shapes
}

/// Initializes parameters from a seeded generator: weights uniform in
/// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, biases at zero. The
/// anchor-contribution scalar `g` starts at exactly 0 so anchor variants
/// begin at baseline behavior.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ParamSet, ModelError> {
    cfg.validate()?;
    let mut rng = seeding::rng(seeding::derive(seed, 0x9a7a));
    let mut params = ParamSet::new();
    for (name, shape) in param_shapes(cfg) {
        let is_bias = name == "g"
            || name.ends_with(".b")
            || name.ends_with(".bias")
            || name.ends_with(".b_f")
            || name.ends_with("attn.b");
        let tensor = if is_bias {
            Tensor::zeros(shape)
        } else {
            // Matrices see fan_in columns; weight vectors (attn.v) project
            // a fan_in-sized activation down to a scalar.
            let fan_in = *shape.last().expect("non-empty shape");
            let bound = 1.0 / (fan_in as f64).sqrt();
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
            Tensor::new(shape, data)?
        };
        params.insert(name, tensor);
    }
    Ok(params)
}

/// Zero-valued parameters with the config's shapes (tests and edge cases).
pub fn zero_params(cfg: &ModelConfig) -> Result<ParamSet, ModelError> {
    cfg.validate()?;
    let mut params = ParamSet::new();
    for (name, shape) in param_shapes(cfg) {
        params.insert(name, Tensor::zeros(shape));
    }
    Ok(params)
}
