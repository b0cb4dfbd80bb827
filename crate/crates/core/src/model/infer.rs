//! Tape-free forward path for decoding.
//!
//! Beam search expands many partial hypotheses per utterance and needs no
//! gradients, so it runs on plain vectors. Every computation here mirrors
//! the tape path in `forward` with identical operation order and
//! associativity; a teacher-forced run through this path reproduces the
//! training-path logits bit for bit (pinned by tests).

use crate::corpus::{AnchoredUtterance, FeatureSequence};
use crate::numerics::{
    conv_downsample, lstm_cell_step, receptive_field, softmax, ConvLayer, ConvLayerSpec,
    LstmCellParams, ParamSet, Tensor,
};

use super::{ModelConfig, ModelError, Pooling, Variant};

fn matvec(w: &Tensor, x: &[f64]) -> Vec<f64> {
    let (rows, cols) = (w.rows(), w.cols());
    let mut out = vec![0.0; rows];
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (wv, xv) in w.data()[i * cols..(i + 1) * cols].iter().zip(x) {
            acc += wv * xv;
        }
        *o = acc;
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn conv_layers(params: &ParamSet, prefix: &str, specs: &[ConvLayerSpec]) -> Result<Vec<ConvLayer>, ModelError> {
    specs
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            Ok(ConvLayer {
                spec: *spec,
                kernel: params.get(&format!("{prefix}.conv{i}.kernel"))?.clone(),
                bias: params.get(&format!("{prefix}.conv{i}.bias"))?.clone(),
            })
        })
        .collect()
}

struct LstmRef<'a> {
    params: LstmCellParams<'a>,
    units: usize,
}

fn lstm_ref<'a>(params: &'a ParamSet, name: &str) -> Result<LstmRef<'a>, ModelError> {
    let bias = params.get(&format!("{name}.b"))?;
    Ok(LstmRef {
        units: bias.len() / 4,
        params: LstmCellParams {
            w_ih: params.get(&format!("{name}.w_ih"))?,
            w_hh: params.get(&format!("{name}.w_hh"))?,
            bias,
        },
    })
}

struct BiLstmValues {
    rows: Vec<Vec<f64>>,
    final_fwd: Vec<f64>,
    final_bwd: Vec<f64>,
}

fn bilstm_values(
    params: &ParamSet,
    name: &str,
    inputs: &[Vec<f64>],
    units: usize,
) -> Result<BiLstmValues, ModelError> {
    let fwd = lstm_ref(params, &format!("{name}.fwd"))?;
    let bwd = lstm_ref(params, &format!("{name}.bwd"))?;
    debug_assert_eq!(fwd.units, units);

    let mut h = vec![0.0; units];
    let mut c = vec![0.0; units];
    let mut fwd_rows = Vec::with_capacity(inputs.len());
    for x in inputs {
        let (nh, nc) = lstm_cell_step(x, &h, &c, &fwd.params)?;
        fwd_rows.push(nh.clone());
        h = nh;
        c = nc;
    }

    let mut h = vec![0.0; units];
    let mut c = vec![0.0; units];
    let mut bwd_rows = Vec::with_capacity(inputs.len());
    for x in inputs.iter().rev() {
        let (nh, nc) = lstm_cell_step(x, &h, &c, &bwd.params)?;
        bwd_rows.push(nh.clone());
        h = nh;
        c = nc;
    }
    bwd_rows.reverse();

    let rows = fwd_rows
        .iter()
        .zip(&bwd_rows)
        .map(|(f, b)| {
            let mut row = Vec::with_capacity(2 * units);
            row.extend_from_slice(f);
            row.extend_from_slice(b);
            row
        })
        .collect();
    Ok(BiLstmValues {
        final_fwd: fwd_rows.last().expect("non-empty").clone(),
        final_bwd: bwd_rows.first().expect("non-empty").clone(),
        rows,
    })
}

fn conv_stack_values(
    params: &ParamSet,
    prefix: &str,
    specs: &[ConvLayerSpec],
    features: &FeatureSequence,
) -> Result<Vec<Vec<f64>>, ModelError> {
    let need = receptive_field(specs);
    if features.frames() < need {
        return Err(crate::numerics::NumericsError::InputTooShort {
            got: features.frames(),
            need,
        }
        .into());
    }
    let layers = conv_layers(params, prefix, specs)?;
    let input = Tensor::matrix(features.frames(), features.dim(), features.data().to_vec())?;
    let out = conv_downsample(&input, &layers)?;
    let cols = out.cols();
    Ok((0..out.rows())
        .map(|t| out.data()[t * cols..(t + 1) * cols].to_vec())
        .collect())
}

/// Per-utterance encoder state reused across every decoding step.
pub struct EncodeContext {
    /// `W_h h'_t + b`, query-independent attention terms.
    wh_pre: Vec<Vec<f64>>,
    /// Frames the context vector sums over (masked for mask-based).
    h_ctx: Vec<Vec<f64>>,
    /// `g * (u_t . w_tilde)` energy bias (multi-source only).
    ms_bias: Option<Vec<f64>>,
    /// Mask gates (mask-based only), for mask evaluation.
    pub phi: Option<Vec<f64>>,
    /// Encoder frame count.
    pub frames: usize,
}

/// Runs the encoder (and S-Encoder, per variant) once for an utterance.
pub fn encode_for_inference(
    cfg: &ModelConfig,
    params: &ParamSet,
    utt: &AnchoredUtterance,
) -> Result<EncodeContext, ModelError> {
    if utt.body.dim() != cfg.feat_dim {
        return Err(ModelError::BadConfig(format!(
            "sample has {}-dim features, model wants {}",
            utt.body.dim(),
            cfg.feat_dim
        )));
    }
    let mut rows = conv_stack_values(params, "enc", &cfg.conv, &utt.body)?;
    for layer in 0..cfg.encoder_layers {
        rows = bilstm_values(params, &format!("enc.lstm{layer}"), &rows, cfg.encoder_units)?.rows;
    }
    let h = rows;

    let s_outputs = match cfg.variant {
        Variant::Baseline => None,
        _ => {
            let spec = cfg.s_encoder.as_ref().expect("validated");
            let run = |features: &FeatureSequence| -> Result<BiLstmValues, ModelError> {
                let rows = conv_stack_values(params, "senc", &spec.conv, features)?;
                match spec.recurrent_units {
                    None => Ok(BiLstmValues {
                        final_fwd: rows.last().expect("non-empty").clone(),
                        final_bwd: rows.last().expect("non-empty").clone(),
                        rows,
                    }),
                    Some(units) => bilstm_values(params, "senc.lstm0", &rows, units),
                }
            };
            let anchor_out = run(&utt.anchor)?;
            let body_out = run(&utt.body)?;
            let w_tilde = match (spec.pooling, spec.recurrent_units) {
                (Pooling::MaxOverFrames, _) => {
                    let mut m = anchor_out.rows[0].clone();
                    for row in &anchor_out.rows[1..] {
                        for (o, &x) in m.iter_mut().zip(row) {
                            if x > *o {
                                *o = x;
                            }
                        }
                    }
                    m
                }
                (Pooling::LastState, Some(_)) => {
                    let mut v = anchor_out.final_fwd.clone();
                    v.extend_from_slice(&anchor_out.final_bwd);
                    v
                }
                (Pooling::LastState, None) => anchor_out.rows.last().expect("non-empty").clone(),
            };
            if body_out.rows.len() != h.len() {
                return Err(ModelError::AlignmentMismatch { h: h.len(), u: body_out.rows.len() });
            }
            Some((w_tilde, body_out.rows))
        }
    };

    let w_h = params.get("attn.w_h")?;
    let b = params.get("attn.b")?;
    let frames = h.len();

    let (h_ctx, ms_bias, phi) = match (&cfg.variant, s_outputs) {
        (Variant::Baseline, _) => (h, None, None),
        (Variant::MultiSource, Some((w_tilde, u))) => {
            let g = params.get("g")?.data()[0];
            let bias = u.iter().map(|u_t| g * dot(u_t, &w_tilde)).collect();
            (h, Some(bias), None)
        }
        (Variant::MaskBased, Some((w_tilde, u))) => {
            let g = params.get("g")?.data()[0];
            let mut phi = Vec::with_capacity(frames);
            let masked = h
                .iter()
                .zip(&u)
                .map(|(h_t, u_t)| {
                    let gate = crate::numerics::sigmoid(g * dot(u_t, &w_tilde));
                    phi.push(gate);
                    h_t.iter().map(|&x| gate * x).collect()
                })
                .collect();
            (masked, None, Some(phi))
        }
        _ => unreachable!("anchor variants always produce s-encoder outputs"),
    };

    let wh_pre = h_ctx
        .iter()
        .map(|h_t| {
            let mut v = matvec(w_h, h_t);
            for (x, y) in v.iter_mut().zip(b.data()) {
                *x += y;
            }
            v
        })
        .collect();
    Ok(EncodeContext { wh_pre, h_ctx, ms_bias, phi, frames })
}

/// Decoder recurrence state for one hypothesis.
#[derive(Debug, Clone)]
pub struct InferState {
    layers: Vec<(Vec<f64>, Vec<f64>)>,
    c_prev: Vec<f64>,
}

pub fn start_state(cfg: &ModelConfig) -> InferState {
    InferState {
        layers: vec![(vec![0.0; cfg.decoder_units], vec![0.0; cfg.decoder_units]); cfg.decoder_layers],
        c_prev: vec![0.0; cfg.h_dim()],
    }
}

/// One decoder step; mutates the state and returns the logits.
pub fn inference_step(
    cfg: &ModelConfig,
    params: &ParamSet,
    ctx: &EncodeContext,
    state: &mut InferState,
    y_prev: usize,
) -> Result<Vec<f64>, ModelError> {
    if y_prev >= cfg.vocab_size {
        return Err(ModelError::UnknownSymbol(y_prev));
    }
    let embed = params.get("dec.embed")?;
    let cols = embed.cols();
    let emb = &embed.data()[y_prev * cols..(y_prev + 1) * cols];

    let mut x0 = Vec::with_capacity(emb.len() + state.c_prev.len());
    x0.extend_from_slice(emb);
    x0.extend_from_slice(&state.c_prev);
    let l0 = lstm_ref(params, "dec.lstm0")?;
    let (h0, c0) = lstm_cell_step(&x0, &state.layers[0].0, &state.layers[0].1, &l0.params)?;
    state.layers[0] = (h0.clone(), c0);

    // Attention with the layer-1 output as query.
    let w_q = params.get("attn.w_q")?;
    let v = params.get("attn.v")?;
    let wq = matvec(w_q, &h0);
    let mut energies = Vec::with_capacity(ctx.frames);
    for (t, pre) in ctx.wh_pre.iter().enumerate() {
        let mut s: Vec<f64> = wq.iter().zip(pre).map(|(a, b)| a + b).collect();
        for x in s.iter_mut() {
            *x = x.tanh();
        }
        let mut e = dot(v.data(), &s);
        if let Some(bias) = &ctx.ms_bias {
            e += bias[t];
        }
        energies.push(e);
    }
    let alpha = softmax(&energies)?;
    let mut context = vec![0.0; cfg.h_dim()];
    for (t, h_t) in ctx.h_ctx.iter().enumerate() {
        let w = alpha[t];
        for (o, &x) in context.iter_mut().zip(h_t) {
            *o += w * x;
        }
    }

    let mut top = h0;
    for layer in 1..cfg.decoder_layers {
        let mut x = Vec::with_capacity(top.len() + context.len());
        x.extend_from_slice(&top);
        x.extend_from_slice(&context);
        let lv = lstm_ref(params, &format!("dec.lstm{layer}"))?;
        let (h, c) = lstm_cell_step(&x, &state.layers[layer].0, &state.layers[layer].1, &lv.params)?;
        state.layers[layer] = (h.clone(), c);
        top = h;
    }

    let w_f = params.get("out.w_f")?;
    let b_f = params.get("out.b_f")?;
    let mut logits = matvec(w_f, &top);
    for (x, y) in logits.iter_mut().zip(b_f.data()) {
        *x += y;
    }
    state.c_prev = context;
    Ok(logits)
}
