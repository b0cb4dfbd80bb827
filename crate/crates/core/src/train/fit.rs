//! Batch gradients and the training loop.
//!
//! Per-sample gradients are computed on private tapes (in parallel under
//! the `parallel` feature) and combined in sample order, so a batch
//! gradient is bit-identical however many threads run. The batch loss is
//! the arithmetic mean of per-sample losses; batching never changes the
//! objective.

use rand::seq::SliceRandom;

use crate::augment::downsample_mask;
use crate::corpus::{AnchoredUtterance, Vocabulary};
use crate::decode::{greedy_decode, ModelScorer};
use crate::eval::{self, RecallAccumulator};
use crate::model::{
    build_forward, build_mask_gates, encode_for_inference, ForwardOptions, ModelConfig, Variant,
};
use crate::numerics::{ParamSet, Tape};
use crate::seeding;

use super::{
    asr_loss_on_tape, mask_loss_on_tape, optim::Adam, optim::FlatGrads, EpochRow, TrainConfig,
    TrainError, TrainReport,
};

/// Mean losses over a batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchStats {
    pub asr: f64,
    pub mask: Option<f64>,
    pub total: f64,
}

fn sample_gradients(
    model_cfg: &ModelConfig,
    params: &ParamSet,
    vocab: &Vocabulary,
    utt: &AnchoredUtterance,
    cfg: &TrainConfig,
) -> Result<(BatchStats, FlatGrads), TrainError> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);

    let gold = if cfg.lambda > 0.0 {
        let mask = utt
            .gold_mask
            .as_ref()
            .ok_or_else(|| TrainError::NoGoldMask(utt.id.clone()))?;
        Some(downsample_mask(mask, model_cfg.time_stride()))
    } else {
        None
    };

    let (asr_value, mask_value, loss) = if cfg.lambda == 1.0 {
        // Pure mask training: the recognizer path would receive an
        // exactly-zero gradient, so it is not built at all.
        let (_, phi_logits) = build_mask_gates(&mut tape, &bound, model_cfg, utt)?;
        let gold = gold.as_ref().expect("lambda > 0");
        let valid = vec![true; phi_logits.len()];
        let mask =
            mask_loss_on_tape(&mut tape, &phi_logits, gold.labels(), cfg.mask_weights, &valid)?;
        (0.0, Some(tape.value(mask).data()[0]), mask)
    } else {
        let targets = vocab.targets(&utt.transcript)?;
        let built = build_forward(
            &mut tape,
            &bound,
            model_cfg,
            utt,
            &targets,
            ForwardOptions::default(),
        )?;
        let asr = asr_loss_on_tape(&mut tape, &built.logits, &targets)?;
        let asr_value = tape.value(asr).data()[0];
        if cfg.lambda == 0.0 {
            (asr_value, None, asr)
        } else {
            let phi_logits = built
                .phi_logits
                .as_ref()
                .ok_or(TrainError::MaskUnavailable(cfg.lambda))?;
            let gold = gold.as_ref().expect("lambda > 0");
            let valid = vec![true; phi_logits.len()];
            let mask =
                mask_loss_on_tape(&mut tape, phi_logits, gold.labels(), cfg.mask_weights, &valid)?;
            let mask_value = tape.value(mask).data()[0];
            let asr_part = tape.scale_const(asr, 1.0 - cfg.lambda);
            let mask_part = tape.scale_const(mask, cfg.lambda);
            let total = tape.add(asr_part, mask_part)?;
            (asr_value, Some(mask_value), total)
        }
    };

    let grads = tape.backward(loss)?;
    let buffers = bound
        .iter()
        .map(|(name, var)| {
            let len = params.get(name).expect("bound from params").len();
            grads.dense(var, len)
        })
        .collect();
    let total = tape.value(loss).data()[0];
    Ok((
        BatchStats { asr: asr_value, mask: mask_value, total },
        FlatGrads::from_buffers(buffers),
    ))
}

fn combine(
    params: &ParamSet,
    results: Vec<Result<(BatchStats, FlatGrads), TrainError>>,
) -> Result<(BatchStats, FlatGrads), TrainError> {
    let n = results.len() as f64;
    let mut grads = FlatGrads::zeros_like(params);
    let mut asr = 0.0;
    let mut mask_sum = 0.0;
    let mut mask_count = 0usize;
    let mut total = 0.0;
    for result in results {
        let (stats, g) = result?;
        grads.add_scaled(&g, 1.0 / n);
        asr += stats.asr / n;
        total += stats.total / n;
        if let Some(m) = stats.mask {
            mask_sum += m;
            mask_count += 1;
        }
    }
    let mask = (mask_count > 0).then(|| mask_sum / mask_count as f64);
    Ok((BatchStats { asr, mask, total }, grads))
}

/// Mean loss and gradient over a batch, parallel across samples when the
/// `parallel` feature is enabled.
pub fn batch_gradients(
    model_cfg: &ModelConfig,
    params: &ParamSet,
    vocab: &Vocabulary,
    batch: &[AnchoredUtterance],
    cfg: &TrainConfig,
) -> Result<(BatchStats, FlatGrads), TrainError> {
    let results = crate::par::map(batch, |utt| sample_gradients(model_cfg, params, vocab, utt, cfg));
    combine(params, results)
}

/// Always-sequential twin of [`batch_gradients`], for benchmarking.
pub fn batch_gradients_seq(
    model_cfg: &ModelConfig,
    params: &ParamSet,
    vocab: &Vocabulary,
    batch: &[AnchoredUtterance],
    cfg: &TrainConfig,
) -> Result<(BatchStats, FlatGrads), TrainError> {
    let results =
        crate::par::map_seq(batch, |utt| sample_gradients(model_cfg, params, vocab, utt, cfg));
    combine(params, results)
}

/// Dev-set word error rate under greedy decoding (or a small beam).
fn dev_wer(
    model_cfg: &ModelConfig,
    params: &ParamSet,
    vocab: &Vocabulary,
    dev: &[AnchoredUtterance],
    beam: usize,
) -> Result<f64, TrainError> {
    let hyps = crate::par::map(dev, |utt| -> Result<(String, String), TrainError> {
        let scorer = ModelScorer::new(model_cfg, params, utt)?;
        let max_len = crate::decode::default_max_len(scorer.frames());
        let best = if beam == 1 {
            greedy_decode(&scorer, max_len)
        } else {
            crate::decode::beam_search(&scorer, beam, max_len)
                .into_iter()
                .next()
                .expect("non-empty beam")
        };
        Ok((utt.transcript.clone(), vocab.decode(&best.symbols)?))
    });
    let mut counts = eval::ErrorCounts::default();
    for pair in hyps {
        let (reference, hypothesis) = pair?;
        counts.accumulate(&eval::align_str(&reference, &hypothesis));
    }
    Ok(eval::wer(&counts))
}

/// Mask diagnostics on the dev set: pooled recalls and mean mask loss.
fn dev_mask_metrics(
    model_cfg: &ModelConfig,
    params: &ParamSet,
    dev: &[AnchoredUtterance],
    cfg: &TrainConfig,
) -> Result<(Option<f64>, Option<f64>, Option<f64>), TrainError> {
    let per_utt = crate::par::map(dev, |utt| -> Result<Option<(Vec<f64>, Vec<u8>)>, TrainError> {
        let Some(mask) = &utt.gold_mask else { return Ok(None) };
        let ctx = encode_for_inference(model_cfg, params, utt)?;
        let phi = ctx.phi.expect("mask-based variant");
        let gold = downsample_mask(mask, model_cfg.time_stride());
        Ok(Some((phi, gold.labels().to_vec())))
    });
    let mut acc = RecallAccumulator::default();
    let mut loss_sum = 0.0;
    let mut loss_count = 0usize;
    for item in per_utt {
        let Some((phi, gold)) = item? else { continue };
        acc.add(&phi, &gold, 0.5).map_err(|_| TrainError::NoValidFrames)?;
        let valid = vec![true; gold.len()];
        loss_sum += super::mask_loss(&phi, &gold, cfg.mask_weights, &valid)?;
        loss_count += 1;
    }
    let mean_loss = (loss_count > 0).then(|| loss_sum / loss_count as f64);
    Ok((acc.recall_0(), acc.recall_1(), mean_loss))
}

/// Trains with Adam under an exponentially decayed learning rate and
/// returns the parameters of the best epoch by dev WER (dev mask loss
/// when training the mask alone at lambda = 1, where WER is untrained
/// noise), together with the per-epoch report.
pub fn fit(
    model_cfg: &ModelConfig,
    mut params: ParamSet,
    vocab: &Vocabulary,
    train: &[AnchoredUtterance],
    cfg: &TrainConfig,
    dev: &[AnchoredUtterance],
) -> Result<(ParamSet, TrainReport), TrainError> {
    cfg.validate()?;
    model_cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::BadConfig("training corpus is empty".into()));
    }
    if cfg.lambda > 0.0 && model_cfg.variant != Variant::MaskBased {
        return Err(TrainError::MaskUnavailable(cfg.lambda));
    }

    let mut adam = Adam::new(&params, cfg);
    let mut rng = seeding::rng(seeding::derive(cfg.seed, 0xf17));
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut report = TrainReport::default();
    let mut best: Option<(f64, usize, ParamSet)> = None;

    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate_at(epoch);
        order.shuffle(&mut rng);

        let mut asr_sum = 0.0;
        let mut mask_sum = 0.0;
        let mut mask_seen = false;
        let mut total_sum = 0.0;
        let mut seen = 0usize;
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<AnchoredUtterance> =
                chunk.iter().map(|&i| train[i].clone()).collect();
            let (stats, mut grads) = batch_gradients(model_cfg, &params, vocab, &batch, cfg)?;
            if !stats.total.is_finite() || !grads.is_finite() {
                return Err(TrainError::Diverged { epoch, batch: batch_idx });
            }
            grads.clip_global_norm(cfg.clip_norm);
            adam.apply(&mut params, &grads, lr);

            let w = batch.len() as f64;
            asr_sum += stats.asr * w;
            total_sum += stats.total * w;
            if let Some(m) = stats.mask {
                mask_sum += m * w;
                mask_seen = true;
            }
            seen += batch.len();
        }
        let denom = seen as f64;

        let wer = dev_wer(model_cfg, &params, vocab, dev, cfg.dev_beam)?;
        let (recall_0, recall_1, dev_mask_loss) = if model_cfg.variant == Variant::MaskBased {
            dev_mask_metrics(model_cfg, &params, dev, cfg)?
        } else {
            (None, None, None)
        };

        report.rows.push(EpochRow {
            epoch,
            asr_loss: asr_sum / denom,
            mask_loss: mask_seen.then_some(mask_sum / denom),
            total_loss: total_sum / denom,
            dev_wer: wer,
            recall_0,
            recall_1,
        });

        let metric = if cfg.lambda == 1.0 {
            dev_mask_loss.unwrap_or(f64::INFINITY)
        } else {
            wer
        };
        if best.as_ref().map_or(true, |(m, _, _)| metric < *m) {
            best = Some((metric, epoch, params.clone()));
        }
    }

    let (_, best_epoch, best_params) = best.expect("at least one epoch");
    report.best_epoch = best_epoch;
    Ok((best_params, report))
}
