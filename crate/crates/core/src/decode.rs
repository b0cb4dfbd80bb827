//! Beam-search decoding.
//!
//! The beam operates on any [`StepScorer`], which lets tests drive it with
//! hand-built probability tables and exhaustive oracles; [`ModelScorer`]
//! adapts a trained model. Scores are plain sums of per-step log
//! softmax terms with no length normalization, so the empty hypothesis
//! (end-of-sequence first) competes on equal footing — that is the
//! "nothing was said to the device" output and must not be penalized.

use std::path::Path;

use thiserror::Error;

use crate::corpus::{AnchoredUtterance, Corpus, CorpusError, Vocabulary, PAD, SOS};
use crate::model::{
    encode_for_inference, inference_step, start_state, EncodeContext, InferState, ModelConfig,
    ModelError,
};
use crate::numerics::ParamSet;

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("hypothesis file: {0}")]
    BadHypothesisFile(String),
}

/// One step of an autoregressive scorer: consumes the previously emitted
/// symbol (`None` on the first step) and returns logits for the next one.
pub trait StepScorer {
    type State: Clone;

    fn vocab_size(&self) -> usize;
    fn eos(&self) -> usize;
    fn start(&self) -> Self::State;
    fn step(&self, state: &Self::State, prev: Option<usize>) -> (Self::State, Vec<f64>);
}

/// A decoded candidate. The log probability is the sum of per-step log
/// softmax terms, including the end-of-sequence term when the hypothesis
/// ended by emitting it.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Emitted symbols, end-of-sequence excluded.
    pub symbols: Vec<usize>,
    pub log_prob: f64,
    /// Set when the hypothesis ended with end-of-sequence or hit the
    /// length limit.
    pub finished: bool,
    pub ended_with_eos: bool,
}

/// Log-softmax that tolerates -inf energies (masked symbols).
fn log_probs(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    debug_assert!(max.is_finite(), "all logits are -inf");
    let mut sum = 0.0;
    for &x in logits {
        if x > f64::NEG_INFINITY {
            sum += (x - max).exp();
        }
    }
    let log_z = max + sum.ln();
    logits
        .iter()
        .map(|&x| if x > f64::NEG_INFINITY { x - log_z } else { f64::NEG_INFINITY })
        .collect()
}

struct BeamHyp<S> {
    state: S,
    symbols: Vec<usize>,
    log_prob: f64,
}

/// Expands all live hypotheses over the vocabulary each step and keeps
/// the `beam_size` best by total log probability; hypotheses that emit
/// end-of-sequence retire to a pool. Returns pool and survivors ranked by
/// log probability, ties broken by symbol sequence.
pub fn beam_search<S: StepScorer>(
    scorer: &S,
    beam_size: usize,
    max_len: usize,
) -> Vec<Hypothesis> {
    assert!(beam_size >= 1, "beam_size must be at least 1");
    assert!(max_len >= 1, "max_len must be at least 1");

    let eos = scorer.eos();
    let mut live = vec![BeamHyp { state: scorer.start(), symbols: Vec::new(), log_prob: 0.0 }];
    let mut pool: Vec<Hypothesis> = Vec::new();

    for _ in 0..max_len {
        // (symbols, log_prob, parent state index, symbol)
        let mut candidates: Vec<(Vec<usize>, f64, usize, usize)> = Vec::new();
        let mut next_states = Vec::with_capacity(live.len());
        for (pi, hyp) in live.iter().enumerate() {
            let (state, logits) = scorer.step(&hyp.state, hyp.symbols.last().copied());
            let lp = log_probs(&logits);
            next_states.push(state);
            for (v, &l) in lp.iter().enumerate() {
                if l == f64::NEG_INFINITY {
                    continue;
                }
                let mut symbols = hyp.symbols.clone();
                if v != eos {
                    symbols.push(v);
                }
                candidates.push((symbols, hyp.log_prob + l, pi, v));
            }
        }
        candidates.sort_by(|a, b| {
            b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)).then_with(|| a.3.cmp(&b.3))
        });
        candidates.truncate(beam_size);

        let mut next_live = Vec::with_capacity(beam_size);
        for (symbols, log_prob, parent, symbol) in candidates {
            if symbol == eos {
                pool.push(Hypothesis {
                    symbols,
                    log_prob,
                    finished: true,
                    ended_with_eos: true,
                });
            } else {
                next_live.push(BeamHyp {
                    state: next_states[parent].clone(),
                    symbols,
                    log_prob,
                });
            }
        }
        live = next_live;
        if live.is_empty() {
            break;
        }
    }

    // Survivors hit the length limit.
    for hyp in live {
        pool.push(Hypothesis {
            symbols: hyp.symbols,
            log_prob: hyp.log_prob,
            finished: true,
            ended_with_eos: false,
        });
    }
    pool.sort_by(|a, b| b.log_prob.total_cmp(&a.log_prob).then_with(|| a.symbols.cmp(&b.symbols)));
    pool
}

/// Beam search with beam size 1.
pub fn greedy_decode<S: StepScorer>(scorer: &S, max_len: usize) -> Hypothesis {
    beam_search(scorer, 1, max_len)
        .into_iter()
        .next()
        .expect("beam always returns at least one hypothesis")
}

/// Independent re-scoring of a symbol sequence under the scorer.
pub fn rescore<S: StepScorer>(scorer: &S, symbols: &[usize], ended_with_eos: bool) -> f64 {
    let mut state = scorer.start();
    let mut prev = None;
    let mut total = 0.0;
    for &sym in symbols {
        let (next, logits) = scorer.step(&state, prev);
        total += log_probs(&logits)[sym];
        state = next;
        prev = Some(sym);
    }
    if ended_with_eos {
        let (_, logits) = scorer.step(&state, prev);
        total += log_probs(&logits)[scorer.eos()];
    }
    total
}

/// Adapts a trained model to the beam: runs the encoder once, then steps
/// the decoder per hypothesis. Reserved non-output symbols (padding,
/// start) are masked to -inf.
pub struct ModelScorer<'a> {
    cfg: &'a ModelConfig,
    params: &'a ParamSet,
    ctx: EncodeContext,
}

impl<'a> ModelScorer<'a> {
    pub fn new(
        cfg: &'a ModelConfig,
        params: &'a ParamSet,
        utt: &AnchoredUtterance,
    ) -> Result<Self, ModelError> {
        let ctx = encode_for_inference(cfg, params, utt)?;
        Ok(ModelScorer { cfg, params, ctx })
    }

    /// Encoder frame count, for the default length limit.
    pub fn frames(&self) -> usize {
        self.ctx.frames
    }

    pub fn context(&self) -> &EncodeContext {
        &self.ctx
    }
}

impl StepScorer for ModelScorer<'_> {
    type State = InferState;

    fn vocab_size(&self) -> usize {
        self.cfg.vocab_size
    }

    fn eos(&self) -> usize {
        crate::corpus::EOS
    }

    fn start(&self) -> InferState {
        start_state(self.cfg)
    }

    fn step(&self, state: &InferState, prev: Option<usize>) -> (InferState, Vec<f64>) {
        let mut next = state.clone();
        let y_prev = prev.unwrap_or(SOS);
        let mut logits = inference_step(self.cfg, self.params, &self.ctx, &mut next, y_prev)
            .expect("encoder context and state dimensions were validated");
        logits[PAD] = f64::NEG_INFINITY;
        logits[SOS] = f64::NEG_INFINITY;
        (next, logits)
    }
}

/// Default decoding length limit: twice the encoder frame count.
pub fn default_max_len(frames: usize) -> usize {
    (2 * frames).max(1)
}

/// Decodes one utterance and renders the best hypothesis.
pub fn decode_utterance(
    cfg: &ModelConfig,
    params: &ParamSet,
    vocab: &Vocabulary,
    utt: &AnchoredUtterance,
    beam_size: usize,
) -> Result<(Hypothesis, String), DecodeError> {
    let scorer = ModelScorer::new(cfg, params, utt)?;
    let max_len = default_max_len(scorer.frames());
    let best = beam_search(&scorer, beam_size, max_len)
        .into_iter()
        .next()
        .expect("non-empty beam");
    let text = vocab.decode(&best.symbols)?;
    Ok((best, text))
}

/// One hypothesis-file record: utterance id, total log probability,
/// decoded text.
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisRecord {
    pub id: String,
    pub log_prob: f64,
    pub text: String,
}

/// Decodes a corpus in parallel, preserving utterance order.
pub fn decode_corpus(
    cfg: &ModelConfig,
    params: &ParamSet,
    vocab: &Vocabulary,
    corpus: &Corpus,
    beam_size: usize,
) -> Result<Vec<HypothesisRecord>, DecodeError> {
    let results = crate::par::map(&corpus.utterances, |utt| {
        decode_utterance(cfg, params, vocab, utt, beam_size).map(|(hyp, text)| HypothesisRecord {
            id: utt.id.clone(),
            log_prob: hyp.log_prob,
            text,
        })
    });
    results.into_iter().collect()
}

/// Hypothesis file: one `id<TAB>log_prob<TAB>text` record per line; the
/// text may be empty.
pub fn write_hypotheses(path: &Path, records: &[HypothesisRecord]) -> Result<(), DecodeError> {
    let mut out = String::new();
    for r in records {
        out.push_str(&format!("{}\t{:.6}\t{}\n", r.id, r.log_prob, r.text));
    }
    std::fs::write(path, out).map_err(|e| DecodeError::BadHypothesisFile(format!("{path:?}: {e}")))
}

pub fn read_hypotheses(path: &Path) -> Result<Vec<HypothesisRecord>, DecodeError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| DecodeError::BadHypothesisFile(format!("{path:?}: {e}")))?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let mut parts = line.splitn(3, '\t');
        let (Some(id), Some(lp), text) = (parts.next(), parts.next(), parts.next()) else {
            return Err(DecodeError::BadHypothesisFile(format!("line {}: {line:?}", i + 1)));
        };
        let log_prob: f64 = lp.parse().map_err(|_| {
            DecodeError::BadHypothesisFile(format!("line {}: bad log prob {lp:?}", i + 1))
        })?;
        records.push(HypothesisRecord {
            id: id.to_string(),
            log_prob,
            text: text.unwrap_or("").to_string(),
        });
    }
    Ok(records)
}
