//! Tape-based forward passes for training and gradient verification.
//!
//! The decoder is teacher-forced: step n consumes the gold symbol n-1 (the
//! start symbol at n=1) together with the previous context vector; the
//! fresh context computed from the step's attention feeds the upper
//! decoder layers and the next step. The inference path in `infer`
//! mirrors these computations operation for operation so that re-scoring
//! a decoded hypothesis reproduces the training-path logits.

use crate::corpus::{AnchoredUtterance, FeatureSequence, SOS};
use crate::numerics::{
    receptive_field, BoundParams, ConvLayerSpec, NumericsError, ParamSet, Tape, Tensor, Var,
};

use super::{ModelConfig, ModelError, Pooling, Variant};

/// Per-step trace of one teacher-forced forward pass, as plain values.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Encoder output, T frames of `h_dim` values.
    pub h: Vec<Vec<f64>>,
    /// S-Encoder body output (anchor variants).
    pub u: Option<Vec<Vec<f64>>>,
    /// Pooled anchor vector (anchor variants).
    pub w_tilde: Option<Vec<f64>>,
    /// Anchor similarity per frame: raw dot products for multi-source
    /// attention, sigmoid gates for the mask-based variant.
    pub phi: Option<Vec<f64>>,
    /// Attention matrix, N rows of T weights.
    pub alpha: Vec<Vec<f64>>,
    /// Output-projection logits, N rows of vocab-size values.
    pub logits: Vec<Vec<f64>>,
}

/// Handles into the tape for everything the losses need.
pub struct BuiltForward {
    pub logits: Vec<Var>,
    pub alpha: Vec<Var>,
    /// Mask gates (sigmoid outputs), mask-based variant only.
    pub phi: Option<Vec<Var>>,
    /// Pre-sigmoid mask logits, kept for numerically stable mask loss.
    pub phi_logits: Option<Vec<Var>>,
    pub trace: ForwardTrace,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ForwardOptions {
    /// Replaces the mask-based gate with an exact 1.0 scale, which must
    /// reproduce baseline logits bit for bit.
    pub force_unit_mask: bool,
}

struct LstmVars {
    w_ih: Var,
    w_hh: Var,
    b: Var,
    units: usize,
}

fn lstm_vars(bp: &BoundParams, tape: &Tape, name: &str) -> Result<LstmVars, NumericsError> {
    let b = bp.var(&format!("{name}.b"))?;
    Ok(LstmVars {
        w_ih: bp.var(&format!("{name}.w_ih"))?,
        w_hh: bp.var(&format!("{name}.w_hh"))?,
        b,
        units: tape.value(b).len() / 4,
    })
}

fn lstm_step_tape(
    tape: &mut Tape,
    p: &LstmVars,
    x: Var,
    h: Var,
    c: Var,
) -> Result<(Var, Var), NumericsError> {
    let ih = tape.matvec(p.w_ih, x)?;
    let hh = tape.matvec(p.w_hh, h)?;
    let s = tape.add(ih, hh)?;
    let pre = tape.add(s, p.b)?;
    let u = p.units;
    let i_pre = tape.slice(pre, 0, u)?;
    let f_pre = tape.slice(pre, u, u)?;
    let g_pre = tape.slice(pre, 2 * u, u)?;
    let o_pre = tape.slice(pre, 3 * u, u)?;
    let i = tape.sigmoid(i_pre);
    let f = tape.sigmoid(f_pre);
    let g = tape.tanh(g_pre);
    let o = tape.sigmoid(o_pre);
    let fc = tape.mul(f, c)?;
    let ig = tape.mul(i, g)?;
    let c_new = tape.add(fc, ig)?;
    let ct = tape.tanh(c_new);
    let h_new = tape.mul(o, ct)?;
    Ok((h_new, c_new))
}

struct BiLstmOut {
    rows: Vec<Var>,
    final_fwd: Var,
    final_bwd: Var,
}

fn bilstm_tape(
    tape: &mut Tape,
    bp: &BoundParams,
    name: &str,
    inputs: &[Var],
    units: usize,
) -> Result<BiLstmOut, NumericsError> {
    let fwd = lstm_vars(bp, tape, &format!("{name}.fwd"))?;
    let bwd = lstm_vars(bp, tape, &format!("{name}.bwd"))?;
    let t_len = inputs.len();

    let mut h = tape.constant(Tensor::zeros(vec![units]));
    let mut c = tape.constant(Tensor::zeros(vec![units]));
    let mut fwd_rows = Vec::with_capacity(t_len);
    for &x in inputs {
        let (nh, nc) = lstm_step_tape(tape, &fwd, x, h, c)?;
        fwd_rows.push(nh);
        h = nh;
        c = nc;
    }

    let mut h = tape.constant(Tensor::zeros(vec![units]));
    let mut c = tape.constant(Tensor::zeros(vec![units]));
    let mut bwd_rows = Vec::with_capacity(t_len);
    for t in (0..t_len).rev() {
        let (nh, nc) = lstm_step_tape(tape, &bwd, inputs[t], h, c)?;
        bwd_rows.push(nh);
        h = nh;
        c = nc;
    }
    bwd_rows.reverse();

    let mut rows = Vec::with_capacity(t_len);
    for t in 0..t_len {
        rows.push(tape.concat(&[fwd_rows[t], bwd_rows[t]])?);
    }
    Ok(BiLstmOut {
        final_fwd: fwd_rows[t_len - 1],
        final_bwd: bwd_rows[0],
        rows,
    })
}

/// Runs a named conv stack over `[frames, feat_dim]` features and splits
/// the result into per-frame row vectors.
fn conv_stack_rows(
    tape: &mut Tape,
    bp: &BoundParams,
    prefix: &str,
    specs: &[ConvLayerSpec],
    features: &FeatureSequence,
) -> Result<Vec<Var>, ModelError> {
    let frames = features.frames();
    let need = receptive_field(specs);
    if frames < need {
        return Err(NumericsError::InputTooShort { got: frames, need }.into());
    }
    let input = tape.constant(Tensor::matrix(frames, features.dim(), features.data().to_vec())?);
    let mut cur = input;
    let mut f = features.dim();
    for (i, spec) in specs.iter().enumerate() {
        let kernel = bp.var(&format!("{prefix}.conv{i}.kernel"))?;
        let bias = bp.var(&format!("{prefix}.conv{i}.bias"))?;
        cur = tape.conv2d(cur, kernel, bias, spec, f)?;
        f = f.div_ceil(spec.stride_f);
    }
    let t_out = tape.value(cur).rows();
    (0..t_out).map(|t| tape.row(cur, t).map_err(Into::into)).collect()
}

/// Encoder: conv downsampling followed by stacked bidirectional LSTM
/// layers; one output row per downsampled frame, `2 * encoder_units` wide.
pub fn encode(
    tape: &mut Tape,
    bp: &BoundParams,
    cfg: &ModelConfig,
    body: &FeatureSequence,
) -> Result<Vec<Var>, ModelError> {
    let mut rows = conv_stack_rows(tape, bp, "enc", &cfg.conv, body)?;
    for layer in 0..cfg.encoder_layers {
        rows = bilstm_tape(tape, bp, &format!("enc.lstm{layer}"), &rows, cfg.encoder_units)?.rows;
    }
    Ok(rows)
}

/// S-Encoder: shared weights applied to the anchor (pooled to the fixed
/// vector `w_tilde`) and to the body (the per-frame sequence `u`).
pub fn s_encode(
    tape: &mut Tape,
    bp: &BoundParams,
    cfg: &ModelConfig,
    anchor: &FeatureSequence,
    body: &FeatureSequence,
) -> Result<(Var, Vec<Var>), ModelError> {
    let spec = cfg
        .s_encoder
        .as_ref()
        .ok_or_else(|| ModelError::BadConfig("variant has no s-encoder".into()))?;

    let run = |tape: &mut Tape, features: &FeatureSequence| -> Result<BiLstmOut, ModelError> {
        let rows = conv_stack_rows(tape, bp, "senc", &spec.conv, features)?;
        match spec.recurrent_units {
            None => {
                let last = *rows.last().expect("at least one frame");
                Ok(BiLstmOut { final_fwd: last, final_bwd: last, rows })
            }
            Some(units) => Ok(bilstm_tape(tape, bp, "senc.lstm0", &rows, units)?),
        }
    };

    let anchor_out = run(tape, anchor)?;
    let body_out = run(tape, body)?;

    let w_tilde = match (spec.pooling, spec.recurrent_units) {
        (Pooling::MaxOverFrames, _) => tape.max_rows(&anchor_out.rows)?,
        (Pooling::LastState, Some(_)) => {
            tape.concat(&[anchor_out.final_fwd, anchor_out.final_bwd])?
        }
        (Pooling::LastState, None) => *anchor_out.rows.last().expect("at least one frame"),
    };
    Ok((w_tilde, body_out.rows))
}

/// Handles to the four attention parameters.
#[derive(Clone, Copy)]
pub struct AttnVars {
    pub w_q: Var,
    pub w_h: Var,
    pub b: Var,
    pub v: Var,
}

/// Fetches the attention parameters from a bound set.
pub fn attn_vars(bp: &BoundParams) -> Result<AttnVars, NumericsError> {
    Ok(AttnVars {
        w_q: bp.var("attn.w_q")?,
        w_h: bp.var("attn.w_h")?,
        b: bp.var("attn.b")?,
        v: bp.var("attn.v")?,
    })
}

/// Additive attention energy for one (query, frame) pair.
pub fn attention_energy(
    tape: &mut Tape,
    q: Var,
    h_t: Var,
    attn: &AttnVars,
) -> Result<Var, NumericsError> {
    let wh = tape.matvec(attn.w_h, h_t)?;
    let wh_pre = tape.add(wh, attn.b)?;
    let wq = tape.matvec(attn.w_q, q)?;
    let s = tape.add(wq, wh_pre)?;
    let t = tape.tanh(s);
    tape.dot(attn.v, t)
}

/// Everything one attention evaluation needs; `wh_pre` holds the
/// query-independent `W_h h'_t + b` terms so the per-step cost stays
/// linear in T.
pub struct AttendContext {
    pub wh_pre: Vec<Var>,
    /// Frames summed into the context vector (masked for the mask-based
    /// variant, raw encoder output otherwise).
    pub h_ctx: Vec<Var>,
    /// Anchor-similarity energies and the scalar g (multi-source only).
    pub bias: Option<(Vec<Var>, Var)>,
    /// False marks padded frames, which get zero attention mass.
    pub valid: Vec<bool>,
}

fn attend(
    tape: &mut Tape,
    q: Var,
    attn: &AttnVars,
    ctx: &AttendContext,
) -> Result<(Var, Var), NumericsError> {
    let wq = tape.matvec(attn.w_q, q)?;
    let mut energies = Vec::with_capacity(ctx.wh_pre.len());
    for (t, &pre) in ctx.wh_pre.iter().enumerate() {
        let s = tape.add(wq, pre)?;
        let th = tape.tanh(s);
        let mut e = tape.dot(attn.v, th)?;
        if let Some((phi, g)) = &ctx.bias {
            let gp = tape.mul(*g, phi[t])?;
            e = tape.add(e, gp)?;
        }
        energies.push(e);
    }
    let evec = tape.concat(&energies)?;
    let alpha = tape.softmax_masked(evec, &ctx.valid)?;
    let context = tape.weighted_sum(alpha, &ctx.h_ctx)?;
    Ok((alpha, context))
}

fn wh_precompute(
    tape: &mut Tape,
    attn: &AttnVars,
    frames: &[Var],
) -> Result<Vec<Var>, NumericsError> {
    frames
        .iter()
        .map(|&h| {
            let wh = tape.matvec(attn.w_h, h)?;
            tape.add(wh, attn.b)
        })
        .collect()
}

/// Multi-source attention step: energies are the additive-attention terms
/// plus `g` times the dot-product similarity of each frame with the
/// pooled anchor. Returns the attention row and the context vector.
pub fn multi_source_attend(
    tape: &mut Tape,
    q: Var,
    h: &[Var],
    u: &[Var],
    w_tilde: Var,
    g: Var,
    attn: &AttnVars,
    valid: &[bool],
) -> Result<(Var, Var), ModelError> {
    if u.len() != h.len() {
        return Err(ModelError::AlignmentMismatch { h: h.len(), u: u.len() });
    }
    let wh_pre = wh_precompute(tape, attn, h)?;
    let phi = u
        .iter()
        .map(|&u_t| tape.dot(u_t, w_tilde))
        .collect::<Result<Vec<_>, _>>()?;
    let ctx = AttendContext {
        wh_pre,
        h_ctx: h.to_vec(),
        bias: Some((phi, g)),
        valid: valid.to_vec(),
    };
    attend(tape, q, attn, &ctx).map_err(Into::into)
}

/// Mask-based frame gating: `phi_t = sigmoid(g * (u_t . w_tilde))` scales
/// each encoder frame. Returns (gates, pre-sigmoid logits, masked frames).
pub fn mask_frames(
    tape: &mut Tape,
    h: &[Var],
    u: &[Var],
    w_tilde: Var,
    g: Var,
) -> Result<(Vec<Var>, Vec<Var>, Vec<Var>), ModelError> {
    if u.len() != h.len() {
        return Err(ModelError::AlignmentMismatch { h: h.len(), u: u.len() });
    }
    let mut phi = Vec::with_capacity(h.len());
    let mut phi_logits = Vec::with_capacity(h.len());
    let mut masked = Vec::with_capacity(h.len());
    for (&h_t, &u_t) in h.iter().zip(u) {
        let sim = tape.dot(u_t, w_tilde)?;
        let z = tape.mul(g, sim)?;
        let gate = tape.sigmoid(z);
        phi_logits.push(z);
        phi.push(gate);
        masked.push(tape.scale(gate, h_t)?);
    }
    Ok((phi, phi_logits, masked))
}

/// S-Encoder gates only: `sigmoid(g * (u_t . w_tilde))` per body frame,
/// without running the recognizer. Pure mask training (interpolation
/// weight 1) gives the recognizer path an exactly-zero gradient, so this
/// skips building it.
pub fn build_mask_gates(
    tape: &mut Tape,
    bp: &BoundParams,
    cfg: &ModelConfig,
    utt: &AnchoredUtterance,
) -> Result<(Vec<Var>, Vec<Var>), ModelError> {
    let (w_tilde, u) = s_encode(tape, bp, cfg, &utt.anchor, &utt.body)?;
    let g = bp.var("g")?;
    let mut phi = Vec::with_capacity(u.len());
    let mut phi_logits = Vec::with_capacity(u.len());
    for &u_t in &u {
        let sim = tape.dot(u_t, w_tilde)?;
        let z = tape.mul(g, sim)?;
        phi_logits.push(z);
        phi.push(tape.sigmoid(z));
    }
    Ok((phi, phi_logits))
}

/// Decoder state threaded through teacher forcing or beam search.
pub struct DecoderTapeState {
    pub layers: Vec<(Var, Var)>,
    pub c_prev: Var,
}

impl DecoderTapeState {
    pub fn fresh(tape: &mut Tape, cfg: &ModelConfig) -> Self {
        let layers = (0..cfg.decoder_layers)
            .map(|_| {
                let h = tape.constant(Tensor::zeros(vec![cfg.decoder_units]));
                let c = tape.constant(Tensor::zeros(vec![cfg.decoder_units]));
                (h, c)
            })
            .collect();
        let c_prev = tape.constant(Tensor::zeros(vec![cfg.h_dim()]));
        DecoderTapeState { layers, c_prev }
    }
}

/// One decoder step: layer 1 consumes `[embedding(y_prev); c_prev]`, the
/// attention query is layer 1's output, and every upper layer consumes
/// `[lower output; c_n]` with the step's fresh context. Returns the
/// logits over the vocabulary and the attention row.
pub fn decode_step(
    tape: &mut Tape,
    bp: &BoundParams,
    cfg: &ModelConfig,
    att: &AttendContext,
    state: &mut DecoderTapeState,
    y_prev: usize,
) -> Result<(Var, Var), ModelError> {
    if y_prev >= cfg.vocab_size {
        return Err(ModelError::UnknownSymbol(y_prev));
    }
    let attn = attn_vars(bp)?;
    let embed = bp.var("dec.embed")?;
    let emb = tape.row(embed, y_prev)?;

    let x0 = tape.concat(&[emb, state.c_prev])?;
    let l0 = lstm_vars(bp, tape, "dec.lstm0")?;
    let (h0, c0) = lstm_step_tape(tape, &l0, x0, state.layers[0].0, state.layers[0].1)?;
    state.layers[0] = (h0, c0);

    let (alpha, context) = attend(tape, h0, &attn, att)?;

    let mut top = h0;
    for layer in 1..cfg.decoder_layers {
        let x = tape.concat(&[top, context])?;
        let lv = lstm_vars(bp, tape, &format!("dec.lstm{layer}"))?;
        let (h, c) = lstm_step_tape(tape, &lv, x, state.layers[layer].0, state.layers[layer].1)?;
        state.layers[layer] = (h, c);
        top = h;
    }

    let wf = bp.var("out.w_f")?;
    let bf = bp.var("out.b_f")?;
    let proj = tape.matvec(wf, top)?;
    let logits = tape.add(proj, bf)?;
    state.c_prev = context;
    Ok((logits, alpha))
}

/// Builds the attention context for a sample under the given variant.
pub(crate) fn build_attend_context(
    tape: &mut Tape,
    bp: &BoundParams,
    cfg: &ModelConfig,
    utt: &AnchoredUtterance,
    opts: ForwardOptions,
) -> Result<(AttendContext, Option<MaskParts>, Vec<Var>), ModelError> {
    let h = encode(tape, bp, cfg, &utt.body)?;
    let attn = attn_vars(bp)?;
    let valid = vec![true; h.len()];

    match cfg.variant {
        Variant::Baseline => {
            let wh_pre = wh_precompute(tape, &attn, &h)?;
            Ok((
                AttendContext { wh_pre, h_ctx: h.clone(), bias: None, valid },
                None,
                h,
            ))
        }
        Variant::MultiSource => {
            let (w_tilde, u) = s_encode(tape, bp, cfg, &utt.anchor, &utt.body)?;
            if u.len() != h.len() {
                return Err(ModelError::AlignmentMismatch { h: h.len(), u: u.len() });
            }
            let g = bp.var("g")?;
            let phi = u
                .iter()
                .map(|&u_t| tape.dot(u_t, w_tilde))
                .collect::<Result<Vec<_>, _>>()?;
            let wh_pre = wh_precompute(tape, &attn, &h)?;
            let parts = MaskParts { u, w_tilde, phi: phi.clone(), phi_logits: None };
            Ok((
                AttendContext { wh_pre, h_ctx: h.clone(), bias: Some((phi, g)), valid },
                Some(parts),
                h,
            ))
        }
        Variant::MaskBased => {
            let (w_tilde, u) = s_encode(tape, bp, cfg, &utt.anchor, &utt.body)?;
            if u.len() != h.len() {
                return Err(ModelError::AlignmentMismatch { h: h.len(), u: u.len() });
            }
            let g = bp.var("g")?;
            let (phi, phi_logits, masked) = if opts.force_unit_mask {
                let one = tape.scalar(1.0);
                let masked = h
                    .iter()
                    .map(|&h_t| tape.scale(one, h_t))
                    .collect::<Result<Vec<_>, _>>()?;
                (Vec::new(), Vec::new(), masked)
            } else {
                mask_frames(tape, &h, &u, w_tilde, g)?
            };
            let wh_pre = wh_precompute(tape, &attn, &masked)?;
            let parts = MaskParts {
                u,
                w_tilde,
                phi,
                phi_logits: Some(phi_logits),
            };
            Ok((
                AttendContext { wh_pre, h_ctx: masked, bias: None, valid },
                Some(parts),
                h,
            ))
        }
    }
}

pub(crate) struct MaskParts {
    pub u: Vec<Var>,
    pub w_tilde: Var,
    pub phi: Vec<Var>,
    /// Present for the mask-based variant (empty when the unit mask is
    /// forced); `None` for multi-source, whose phi is a raw similarity.
    pub phi_logits: Option<Vec<Var>>,
}

/// Teacher-forced forward pass over one utterance.
pub fn build_forward(
    tape: &mut Tape,
    bp: &BoundParams,
    cfg: &ModelConfig,
    utt: &AnchoredUtterance,
    targets: &[usize],
    opts: ForwardOptions,
) -> Result<BuiltForward, ModelError> {
    if targets.is_empty() || *targets.last().unwrap() != crate::corpus::EOS {
        return Err(ModelError::BadTargets);
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= cfg.vocab_size) {
        return Err(ModelError::UnknownSymbol(bad));
    }
    if utt.body.dim() != cfg.feat_dim {
        return Err(ModelError::BadConfig(format!(
            "sample has {}-dim features, model wants {}",
            utt.body.dim(),
            cfg.feat_dim
        )));
    }

    let (att, mask_parts, h) = build_attend_context(tape, bp, cfg, utt, opts)?;
    let mut state = DecoderTapeState::fresh(tape, cfg);

    let mut logits = Vec::with_capacity(targets.len());
    let mut alpha = Vec::with_capacity(targets.len());
    for n in 0..targets.len() {
        let y_prev = if n == 0 { SOS } else { targets[n - 1] };
        let (l, a) = decode_step(tape, bp, cfg, &att, &mut state, y_prev)?;
        logits.push(l);
        alpha.push(a);
    }

    let values = |tape: &Tape, vars: &[Var]| -> Vec<Vec<f64>> {
        vars.iter().map(|&v| tape.value(v).data().to_vec()).collect()
    };
    let trace = ForwardTrace {
        h: values(tape, &h),
        u: mask_parts.as_ref().map(|p| values(tape, &p.u)),
        w_tilde: mask_parts
            .as_ref()
            .map(|p| tape.value(p.w_tilde).data().to_vec()),
        phi: mask_parts.as_ref().map(|p| {
            if p.phi.is_empty() {
                vec![1.0; h.len()]
            } else {
                p.phi.iter().map(|&v| tape.value(v).data()[0]).collect()
            }
        }),
        alpha: values(tape, &alpha),
        logits: values(tape, &logits),
    };

    let (phi, phi_logits) = match mask_parts {
        Some(MaskParts { phi, phi_logits: Some(z), .. }) if !phi.is_empty() => {
            (Some(phi), Some(z))
        }
        _ => (None, None),
    };
    Ok(BuiltForward { logits, alpha, phi, phi_logits, trace })
}

/// Convenience wrapper: runs one forward pass on a private tape and
/// returns the value trace.
pub fn forward(
    cfg: &ModelConfig,
    params: &ParamSet,
    utt: &AnchoredUtterance,
    targets: &[usize],
) -> Result<ForwardTrace, ModelError> {
    let mut tape = Tape::new();
    let bp = params.bind(&mut tape);
    build_forward(&mut tape, &bp, cfg, utt, targets, ForwardOptions::default())
        .map(|built| built.trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{gen_toy_corpus, Corpus, ToyCorpusConfig, Vocabulary};
    use crate::model::{init_params, zero_params, ModelError};
    use crate::numerics::ParamSet;

    fn toy_corpus(n: usize, feat_dim: usize, seed: u64) -> (Corpus, Vocabulary) {
        let cfg = ToyCorpusConfig { n_utts: n, feat_dim, ..ToyCorpusConfig::default() };
        let corpus = gen_toy_corpus(&cfg, seed).unwrap();
        let vocab = Vocabulary::build(corpus.transcripts(), 1).unwrap();
        (corpus, vocab)
    }

    fn utt_with_body_frames(frames: usize) -> AnchoredUtterance {
        let cfg = ToyCorpusConfig {
            n_utts: 1,
            transcript_len: (frames.div_ceil(3), frames.div_ceil(3)),
            body_len_per_grapheme: 3,
            ..ToyCorpusConfig::default()
        };
        gen_toy_corpus(&cfg, 99).unwrap().utterances.into_iter().next().unwrap()
    }

    #[test]
    fn encode_halves_the_frame_count() {
        let (corpus, vocab) = toy_corpus(1, 8, 1);
        let cfg = ModelConfig::desk_scale(Variant::Baseline, vocab.size());
        let params = init_params(&cfg, 0).unwrap();
        let utt = utt_with_body_frames(20);
        assert_eq!(utt.body.frames(), 21); // 7 graphemes * 3
        let mut tape = Tape::new();
        let bp = params.bind(&mut tape);
        let h = encode(&mut tape, &bp, &cfg, &utt.body).unwrap();
        assert_eq!(h.len(), 11);
        assert_eq!(tape.value(h[0]).len(), cfg.h_dim());
        drop(corpus);
    }

    #[test]
    fn encode_with_zero_params_outputs_zeros() {
        let (corpus, vocab) = toy_corpus(1, 8, 2);
        let cfg = ModelConfig::desk_scale(Variant::Baseline, vocab.size());
        let params = zero_params(&cfg).unwrap();
        let mut tape = Tape::new();
        let bp = params.bind(&mut tape);
        let h = encode(&mut tape, &bp, &cfg, &corpus.utterances[0].body).unwrap();
        for row in h {
            assert!(tape.value(row).data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn encode_is_not_time_symmetric() {
        let (corpus, vocab) = toy_corpus(1, 8, 3);
        let cfg = ModelConfig::desk_scale(Variant::Baseline, vocab.size());
        let params = init_params(&cfg, 7).unwrap();
        let body = &corpus.utterances[0].body;
        let dim = body.dim();
        let reversed_frames: Vec<&[f64]> =
            (0..body.frames()).rev().map(|t| body.frame(t)).collect();
        let reversed =
            crate::corpus::FeatureSequence::from_frames(dim, &reversed_frames).unwrap();

        let mut tape = Tape::new();
        let bp = params.bind(&mut tape);
        let h_fwd = encode(&mut tape, &bp, &cfg, body).unwrap();
        let h_rev = encode(&mut tape, &bp, &cfg, &reversed).unwrap();
        let differs = h_fwd.iter().zip(h_rev.iter().rev()).any(|(&a, &b)| {
            tape.value(a)
                .data()
                .iter()
                .zip(tape.value(b).data())
                .any(|(x, y)| (x - y).abs() > 1e-9)
        });
        assert!(differs, "bidirectional encoding should not be time-symmetric");
    }

    #[test]
    fn encode_rejects_too_short_input() {
        let (corpus, vocab) = toy_corpus(1, 8, 4);
        let cfg = ModelConfig::desk_scale(Variant::Baseline, vocab.size());
        let params = init_params(&cfg, 0).unwrap();
        let short =
            crate::corpus::FeatureSequence::new(8, corpus.utterances[0].body.data()[..16].to_vec())
                .unwrap();
        let mut tape = Tape::new();
        let bp = params.bind(&mut tape);
        let err = encode(&mut tape, &bp, &cfg, &short).unwrap_err();
        assert!(matches!(
            err,
            ModelError::Numerics(crate::numerics::NumericsError::InputTooShort { .. })
        ));
    }

    #[test]
    fn max_pooling_over_one_frame_is_that_frame() {
        // grad_check scale: conv kernel 2, stride 2, so a 2-frame anchor
        // yields exactly one s-encoder output row.
        let vocab_size = 8;
        let cfg = ModelConfig::grad_check_scale(Variant::MultiSource, vocab_size);
        let params = init_params(&cfg, 5).unwrap();
        let toy = ToyCorpusConfig {
            n_utts: 1,
            feat_dim: 4,
            anchor_len: (2, 2),
            ..ToyCorpusConfig::default()
        };
        let utt = gen_toy_corpus(&toy, 11).unwrap().utterances.remove(0);
        let mut tape = Tape::new();
        let bp = params.bind(&mut tape);
        // Body = anchor, so u's single row comes from the same frames.
        let (w_tilde, u) = s_encode(&mut tape, &bp, &cfg, &utt.anchor, &utt.anchor).unwrap();
        assert_eq!(u.len(), 1);
        assert_eq!(tape.value(w_tilde), tape.value(u[0]));
    }

    #[test]
    fn max_pooling_of_constant_rows_is_that_constant() {
        let cfg = ModelConfig::grad_check_scale(Variant::MultiSource, 8);
        let params = zero_params(&cfg).unwrap();
        let toy = ToyCorpusConfig { n_utts: 1, feat_dim: 4, ..ToyCorpusConfig::default() };
        let utt = gen_toy_corpus(&toy, 12).unwrap().utterances.remove(0);
        let mut tape = Tape::new();
        let bp = params.bind(&mut tape);
        // Zero params make every s-encoder row the constant tanh(0) = 0.
        let (w_tilde, _) = s_encode(&mut tape, &bp, &cfg, &utt.anchor, &utt.body).unwrap();
        assert!(tape.value(w_tilde).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn last_state_pooling_over_one_frame_is_the_single_step_output() {
        let cfg = ModelConfig::grad_check_scale(Variant::MaskBased, 8);
        let params = init_params(&cfg, 6).unwrap();
        let toy = ToyCorpusConfig {
            n_utts: 1,
            feat_dim: 4,
            anchor_len: (2, 2),
            ..ToyCorpusConfig::default()
        };
        let utt = gen_toy_corpus(&toy, 13).unwrap().utterances.remove(0);
        let mut tape = Tape::new();
        let bp = params.bind(&mut tape);
        let (w_tilde, u) = s_encode(&mut tape, &bp, &cfg, &utt.anchor, &utt.anchor).unwrap();
        assert_eq!(u.len(), 1);
        assert_eq!(tape.value(w_tilde), tape.value(u[0]));
    }

    fn tiny_attention(tape: &mut Tape) -> AttnVars {
        AttnVars {
            w_q: tape.constant(Tensor::matrix(3, 3, vec![0.2, -0.1, 0.3, 0.0, 0.4, -0.2, 0.1, 0.1, 0.5]).unwrap()),
            w_h: tape.constant(Tensor::matrix(3, 3, vec![-0.3, 0.2, 0.1, 0.25, -0.15, 0.0, 0.4, 0.3, -0.1]).unwrap()),
            b: tape.constant(Tensor::vector(vec![0.05, -0.1, 0.2])),
            v: tape.constant(Tensor::vector(vec![0.7, -0.4, 0.3])),
        }
    }

    #[test]
    fn attention_energy_zero_cases() {
        let mut tape = Tape::new();
        let zeros3 = Tensor::vector(vec![0.0; 3]);
        let attn = AttnVars {
            w_q: tape.constant(Tensor::zeros(vec![3, 3])),
            w_h: tape.constant(Tensor::zeros(vec![3, 3])),
            b: tape.constant(zeros3.clone()),
            v: tape.constant(zeros3.clone()),
        };
        let q = tape.constant(zeros3.clone());
        let h = tape.constant(zeros3);
        let e = attention_energy(&mut tape, q, h, &attn).unwrap();
        assert_eq!(tape.value(e).data()[0], 0.0);

        // v = 0 forces zero energy regardless of the other inputs.
        let mut tape = Tape::new();
        let mut attn = tiny_attention(&mut tape);
        attn.v = tape.constant(Tensor::vector(vec![0.0; 3]));
        let q = tape.constant(Tensor::vector(vec![1.0, -2.0, 0.5]));
        let h = tape.constant(Tensor::vector(vec![0.3, 0.9, -1.1]));
        let e = attention_energy(&mut tape, q, h, &attn).unwrap();
        assert_eq!(tape.value(e).data()[0], 0.0);
    }

    #[test]
    fn attention_energy_matches_direct_evaluation() {
        let mut tape = Tape::new();
        let attn = tiny_attention(&mut tape);
        let q_vals = [0.4, -0.6, 1.1];
        let h_vals = [-0.2, 0.8, 0.35];
        let q = tape.constant(Tensor::vector(q_vals.to_vec()));
        let h = tape.constant(Tensor::vector(h_vals.to_vec()));
        let e = attention_energy(&mut tape, q, h, &attn).unwrap();

        // Independent evaluation with explicit loops.
        let wq = [
            0.2 * 0.4 + -0.1 * -0.6 + 0.3 * 1.1,
            0.0 * 0.4 + 0.4 * -0.6 + -0.2 * 1.1,
            0.1 * 0.4 + 0.1 * -0.6 + 0.5 * 1.1,
        ];
        let wh = [
            -0.3 * -0.2 + 0.2 * 0.8 + 0.1 * 0.35,
            0.25 * -0.2 + -0.15 * 0.8 + 0.0 * 0.35,
            0.4 * -0.2 + 0.3 * 0.8 + -0.1 * 0.35,
        ];
        let b = [0.05f64, -0.1, 0.2];
        let v = [0.7f64, -0.4, 0.3];
        let mut expected = 0.0;
        for i in 0..3 {
            expected += v[i] * (wq[i] + (wh[i] + b[i])).tanh();
        }
        assert!((tape.value(e).data()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn multi_source_reduces_to_plain_attention_at_g_zero() {
        let mut tape = Tape::new();
        let attn = tiny_attention(&mut tape);
        let q = tape.constant(Tensor::vector(vec![0.3, -0.5, 0.8]));
        let h: Vec<Var> = [[0.2, -0.4, 0.6], [-0.7, 0.1, 0.0], [0.5, 0.5, -0.5]]
            .iter()
            .map(|r| tape.constant(Tensor::vector(r.to_vec())))
            .collect();
        let u: Vec<Var> = [[1.0, 2.0], [-1.0, 0.5], [0.0, 3.0]]
            .iter()
            .map(|r| tape.constant(Tensor::vector(r.to_vec())))
            .collect();
        let w_tilde = tape.constant(Tensor::vector(vec![0.4, -0.9]));
        let g = tape.scalar(0.0);
        let valid = [true, true, true];

        let (alpha_ms, c_ms) =
            multi_source_attend(&mut tape, q, &h, &u, w_tilde, g, &attn, &valid).unwrap();

        // Baseline route: energies through attention_energy, then softmax.
        let energies: Vec<Var> = h
            .iter()
            .map(|&h_t| attention_energy(&mut tape, q, h_t, &attn).unwrap())
            .collect();
        let evec = tape.concat(&energies).unwrap();
        let alpha_base = tape.softmax(evec).unwrap();
        let c_base = tape.weighted_sum(alpha_base, &h).unwrap();

        for (a, b) in tape.value(alpha_ms).data().iter().zip(tape.value(alpha_base).data()) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in tape.value(c_ms).data().iter().zip(tape.value(c_base).data()) {
            assert!((a - b).abs() < 1e-12);
        }
        let sum: f64 = tape.value(alpha_ms).data().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_similarity_shift_does_not_change_attention() {
        let mut tape = Tape::new();
        let attn = tiny_attention(&mut tape);
        let q = tape.constant(Tensor::vector(vec![0.3, -0.5, 0.8]));
        let h: Vec<Var> = [[0.2, -0.4, 0.6], [-0.7, 0.1, 0.0]]
            .iter()
            .map(|r| tape.constant(Tensor::vector(r.to_vec())))
            .collect();
        // u rows chosen so every dot product with w_tilde is the same.
        let u: Vec<Var> = [[2.0, 1.0], [4.0, 0.0]]
            .iter()
            .map(|r| tape.constant(Tensor::vector(r.to_vec())))
            .collect();
        let w_tilde = tape.constant(Tensor::vector(vec![0.5, 1.0])); // dots: 2.0, 2.0
        let g = tape.scalar(1.7);
        let valid = [true, true];
        let (alpha_ms, _) =
            multi_source_attend(&mut tape, q, &h, &u, w_tilde, g, &attn, &valid).unwrap();

        let g0 = tape.scalar(0.0);
        let (alpha_base, _) =
            multi_source_attend(&mut tape, q, &h, &u, w_tilde, g0, &attn, &valid).unwrap();
        for (a, b) in tape.value(alpha_ms).data().iter().zip(tape.value(alpha_base).data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn similarity_log3_shifts_attention_to_three_quarters() {
        // Zero attention parameters give zero energies; the anchor bias
        // contributes [0, ln 3], so the weights become [1/4, 3/4].
        let mut tape = Tape::new();
        let attn = AttnVars {
            w_q: tape.constant(Tensor::zeros(vec![2, 2])),
            w_h: tape.constant(Tensor::zeros(vec![2, 2])),
            b: tape.constant(Tensor::zeros(vec![2])),
            v: tape.constant(Tensor::zeros(vec![2])),
        };
        let q = tape.constant(Tensor::vector(vec![0.0, 0.0]));
        let h: Vec<Var> = (0..2)
            .map(|i| tape.constant(Tensor::vector(vec![i as f64 + 1.0, 0.0])))
            .collect();
        let u: Vec<Var> = [[0.0], [3.0f64.ln()]]
            .iter()
            .map(|r| tape.constant(Tensor::vector(r.to_vec())))
            .collect();
        let w_tilde = tape.constant(Tensor::vector(vec![1.0]));
        let g = tape.scalar(1.0);
        let (alpha, _) =
            multi_source_attend(&mut tape, q, &h, &u, w_tilde, g, &attn, &[true, true]).unwrap();
        let a = tape.value(alpha).data();
        assert!((a[0] - 0.25).abs() < 1e-12);
        assert!((a[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn fully_padded_attention_is_an_error() {
        let mut tape = Tape::new();
        let attn = tiny_attention(&mut tape);
        let q = tape.constant(Tensor::vector(vec![0.0; 3]));
        let h = vec![tape.constant(Tensor::vector(vec![0.1, 0.2, 0.3]))];
        let u = vec![tape.constant(Tensor::vector(vec![1.0]))];
        let w_tilde = tape.constant(Tensor::vector(vec![1.0]));
        let g = tape.scalar(0.5);
        let err = multi_source_attend(&mut tape, q, &h, &u, w_tilde, g, &attn, &[false])
            .unwrap_err();
        assert!(matches!(
            err,
            ModelError::Numerics(crate::numerics::NumericsError::AllMasked(_))
        ));
    }

    #[test]
    fn permuting_frames_permutes_attention_columns() {
        let mut tape = Tape::new();
        let attn = tiny_attention(&mut tape);
        let q = tape.constant(Tensor::vector(vec![0.3, -0.5, 0.8]));
        let rows = [[0.2, -0.4, 0.6], [-0.7, 0.1, 0.0], [0.5, 0.5, -0.5]];
        let us = [[1.0, 2.0], [-1.0, 0.5], [0.0, 3.0]];
        let perm = [2usize, 0, 1];

        let h: Vec<Var> =
            rows.iter().map(|r| tape.constant(Tensor::vector(r.to_vec()))).collect();
        let u: Vec<Var> = us.iter().map(|r| tape.constant(Tensor::vector(r.to_vec()))).collect();
        let h_p: Vec<Var> = perm.iter().map(|&i| h[i]).collect();
        let u_p: Vec<Var> = perm.iter().map(|&i| u[i]).collect();

        let w_tilde = tape.constant(Tensor::vector(vec![0.4, -0.9]));
        let g = tape.scalar(0.8);
        let valid = [true, true, true];
        let (alpha, _) =
            multi_source_attend(&mut tape, q, &h, &u, w_tilde, g, &attn, &valid).unwrap();
        let (alpha_p, _) =
            multi_source_attend(&mut tape, q, &h_p, &u_p, w_tilde, g, &attn, &valid).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            let a = tape.value(alpha).data()[i];
            let b = tape.value(alpha_p).data()[k];
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn mask_gates_at_g_zero_halve_the_frames() {
        let mut tape = Tape::new();
        let h: Vec<Var> = [[0.4, -0.8], [1.2, 0.2]]
            .iter()
            .map(|r| tape.constant(Tensor::vector(r.to_vec())))
            .collect();
        let u: Vec<Var> = [[1.0, 0.0], [0.0, 1.0]]
            .iter()
            .map(|r| tape.constant(Tensor::vector(r.to_vec())))
            .collect();
        let w_tilde = tape.constant(Tensor::vector(vec![0.3, -0.6]));
        let g = tape.scalar(0.0);
        let (phi, _, masked) = mask_frames(&mut tape, &h, &u, w_tilde, g).unwrap();
        for (t, (&p, &m)) in phi.iter().zip(&masked).enumerate() {
            assert_eq!(tape.value(p).data()[0], 0.5);
            for (a, b) in tape.value(m).data().iter().zip(tape.value(h[t]).data()) {
                assert!((a - b / 2.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn orthogonal_frames_gate_at_one_half_and_saturate_at_twenty() {
        let mut tape = Tape::new();
        let h = vec![
            tape.constant(Tensor::vector(vec![1.0, 1.0])),
            tape.constant(Tensor::vector(vec![2.0, -1.0])),
        ];
        // First u orthogonal to w_tilde; second aligned with product 20/g.
        let u = vec![
            tape.constant(Tensor::vector(vec![0.0, 1.0])),
            tape.constant(Tensor::vector(vec![10.0, 0.0])),
        ];
        let w_tilde = tape.constant(Tensor::vector(vec![1.0, 0.0]));
        let g = tape.scalar(2.0);
        let (phi, _, masked) = mask_frames(&mut tape, &h, &u, w_tilde, g).unwrap();
        assert_eq!(tape.value(phi[0]).data()[0], 0.5);
        let saturated = tape.value(phi[1]).data()[0];
        assert!((saturated - 1.0).abs() < 1e-8);
        for (a, b) in tape.value(masked[1]).data().iter().zip(tape.value(h[1]).data()) {
            assert!((a - b).abs() < 1e-7);
        }
        // Monotone in the dot product for positive g, mirrored for -g.
        let g_neg = tape.scalar(-2.0);
        let (phi_neg, _, _) = mask_frames(&mut tape, &h, &u, w_tilde, g_neg).unwrap();
        assert!((tape.value(phi_neg[1]).data()[0] - (1.0 - saturated)).abs() < 1e-12);
    }

    fn build_context_for(
        tape: &mut Tape,
        bp: &BoundParams,
        cfg: &ModelConfig,
        utt: &AnchoredUtterance,
    ) -> AttendContext {
        build_attend_context(tape, bp, cfg, utt, ForwardOptions::default())
            .unwrap()
            .0
    }

    #[test]
    fn decode_step_follows_the_output_bias() {
        let (corpus, vocab) = toy_corpus(1, 8, 21);
        let cfg = ModelConfig::desk_scale(Variant::Baseline, vocab.size());
        let mut params = zero_params(&cfg).unwrap();
        // One-hot output bias at symbol 5: argmax must be 5 whatever the
        // state, because w_f is zero.
        params.get_mut("out.b_f").unwrap().data_mut()[5] = 3.0;
        let utt = &corpus.utterances[0];

        let mut tape = Tape::new();
        let bp = params.bind(&mut tape);
        let att = build_context_for(&mut tape, &bp, &cfg, utt);
        let mut state = DecoderTapeState::fresh(&mut tape, &cfg);
        let (logits, alpha) = decode_step(&mut tape, &bp, &cfg, &att, &mut state, SOS).unwrap();

        let values = tape.value(logits).data();
        assert_eq!(values.len(), cfg.vocab_size);
        let argmax = values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(argmax, 5);
        // Zero params: logits equal the bias exactly.
        let expected = params.get("out.b_f").unwrap().data();
        assert_eq!(values, expected);
        let asum: f64 = tape.value(alpha).data().iter().sum();
        assert!((asum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn decode_step_rejects_unknown_symbols() {
        let (corpus, vocab) = toy_corpus(1, 8, 22);
        let cfg = ModelConfig::desk_scale(Variant::Baseline, vocab.size());
        let params = init_params(&cfg, 1).unwrap();
        let mut tape = Tape::new();
        let bp = params.bind(&mut tape);
        let att = build_context_for(&mut tape, &bp, &cfg, &corpus.utterances[0]);
        let mut state = DecoderTapeState::fresh(&mut tape, &cfg);
        let err = decode_step(&mut tape, &bp, &cfg, &att, &mut state, cfg.vocab_size)
            .unwrap_err();
        assert!(matches!(err, ModelError::UnknownSymbol(_)));
    }

    #[test]
    fn baseline_trace_has_no_anchor_outputs() {
        let (corpus, vocab) = toy_corpus(2, 8, 23);
        let cfg = ModelConfig::desk_scale(Variant::Baseline, vocab.size());
        let params = init_params(&cfg, 2).unwrap();
        let utt = &corpus.utterances[0];
        let targets = vocab.targets(&utt.transcript).unwrap();
        let trace = forward(&cfg, &params, utt, &targets).unwrap();
        assert!(trace.u.is_none() && trace.w_tilde.is_none() && trace.phi.is_none());
        assert_eq!(trace.logits.len(), targets.len());
        assert_eq!(trace.alpha.len(), targets.len());
        let t = utt.body.frames().div_ceil(cfg.time_stride());
        for row in &trace.alpha {
            assert_eq!(row.len(), t);
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn forward_rejects_bad_targets() {
        let (corpus, vocab) = toy_corpus(1, 8, 24);
        let cfg = ModelConfig::desk_scale(Variant::Baseline, vocab.size());
        let params = init_params(&cfg, 3).unwrap();
        let utt = &corpus.utterances[0];
        assert!(matches!(
            forward(&cfg, &params, utt, &[]),
            Err(ModelError::BadTargets)
        ));
        // Missing the end-of-sequence terminator.
        let ids = vocab.encode(&utt.transcript).unwrap();
        assert!(matches!(
            forward(&cfg, &params, utt, &ids),
            Err(ModelError::BadTargets)
        ));
    }

    /// Copies every parameter the destination config declares from a
    /// source set trained/initialized under a richer variant.
    fn shared_subset(src: &ParamSet, dst_cfg: &ModelConfig) -> ParamSet {
        let mut dst = zero_params(dst_cfg).unwrap();
        let names: Vec<String> = dst.names().map(String::from).collect();
        for name in names {
            let tensor = src.get(&name).expect("shared name").clone();
            *dst.get_mut(&name).unwrap() = tensor;
        }
        dst
    }

    #[test]
    fn multi_source_with_g_zero_is_bitwise_baseline() {
        let (corpus, vocab) = toy_corpus(6, 8, 25);
        let ms_cfg = ModelConfig::desk_scale(Variant::MultiSource, vocab.size());
        let base_cfg = ModelConfig::desk_scale(Variant::Baseline, vocab.size());
        for (i, utt) in corpus.iter().enumerate() {
            let ms_params = init_params(&ms_cfg, 100 + i as u64).unwrap();
            assert_eq!(ms_params.get("g").unwrap().data(), &[0.0]);
            let base_params = shared_subset(&ms_params, &base_cfg);
            let targets = vocab.targets(&utt.transcript).unwrap();
            let ms = forward(&ms_cfg, &ms_params, utt, &targets).unwrap();
            let base = forward(&base_cfg, &base_params, utt, &targets).unwrap();
            assert_eq!(ms.logits, base.logits, "utterance {i}");
        }
    }

    #[test]
    fn forced_unit_mask_is_bitwise_baseline() {
        let (corpus, vocab) = toy_corpus(6, 8, 26);
        let mask_cfg = ModelConfig::desk_scale(Variant::MaskBased, vocab.size());
        let base_cfg = ModelConfig::desk_scale(Variant::Baseline, vocab.size());
        for (i, utt) in corpus.iter().enumerate() {
            let mask_params = init_params(&mask_cfg, 200 + i as u64).unwrap();
            let base_params = shared_subset(&mask_params, &base_cfg);
            let targets = vocab.targets(&utt.transcript).unwrap();

            let mut tape = Tape::new();
            let bp = mask_params.bind(&mut tape);
            let forced = build_forward(
                &mut tape,
                &bp,
                &mask_cfg,
                utt,
                &targets,
                ForwardOptions { force_unit_mask: true },
            )
            .unwrap();
            let base = forward(&base_cfg, &base_params, utt, &targets).unwrap();
            assert_eq!(forced.trace.logits, base.logits, "utterance {i}");
            assert!(forced.trace.phi.unwrap().iter().all(|&p| p == 1.0));
        }
    }

    #[test]
    fn inference_path_matches_tape_logits_bitwise() {
        for variant in [Variant::Baseline, Variant::MultiSource, Variant::MaskBased] {
            let (corpus, vocab) = toy_corpus(3, 8, 30);
            let cfg = ModelConfig::desk_scale(variant, vocab.size());
            for (i, utt) in corpus.iter().enumerate() {
                let mut params = init_params(&cfg, 300 + i as u64).unwrap();
                if variant != Variant::Baseline {
                    // A nonzero anchor contribution exercises the full path.
                    params.get_mut("g").unwrap().data_mut()[0] = 0.35;
                }
                let targets = vocab.targets(&utt.transcript).unwrap();
                let trace = forward(&cfg, &params, utt, &targets).unwrap();

                let ctx = crate::model::encode_for_inference(&cfg, &params, utt).unwrap();
                let mut state = crate::model::start_state(&cfg);
                for (n, expected) in trace.logits.iter().enumerate() {
                    let y_prev = if n == 0 { SOS } else { targets[n - 1] };
                    let logits = crate::model::inference_step(
                        &cfg, &params, &ctx, &mut state, y_prev,
                    )
                    .unwrap();
                    assert_eq!(&logits, expected, "{} utterance {i} step {n}", variant.name());
                }
                if variant == Variant::MaskBased {
                    let phi = ctx.phi.as_ref().unwrap();
                    assert_eq!(phi, trace.phi.as_ref().unwrap());
                    assert!(phi.iter().all(|&p| p > 0.0 && p < 1.0));
                }
            }
        }
    }
}
