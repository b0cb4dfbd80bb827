//! Losses, multi-task interpolation, and the optimization loop.

mod fit;
mod optim;
mod report;

pub use fit::{batch_gradients, batch_gradients_seq, fit, BatchStats};
pub use optim::{Adam, FlatGrads};
pub use report::{EpochRow, TrainReport};

use thiserror::Error;

use crate::corpus::CorpusError;
use crate::model::ModelError;
use crate::numerics::{log_softmax, NumericsError, Tape, Var};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("{got} logit rows for {want} targets")]
    LengthMismatch { got: usize, want: usize },
    #[error("invalid train config: {0}")]
    BadConfig(String),
    #[error("lambda {0} outside [0, 1]")]
    BadLambda(f64),
    #[error("lambda {0} > 0 but the variant produces no mask probabilities")]
    MaskUnavailable(f64),
    #[error("utterance {0} has no gold mask; mask loss needs one")]
    NoGoldMask(String),
    #[error("no valid frames for the mask loss")]
    NoValidFrames,
    #[error("mask probabilities must lie strictly in (0, 1)")]
    BadPhi,
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
}

/// Multi-task training configuration. `lambda` interpolates the
/// recognizer and mask losses; the class weights counteract the 1-heavy
/// label imbalance of synthetic masks (reference values 0.6 for label 1,
/// 1.0 for label 0).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lambda: f64,
    /// (weight on label 1, weight on label 0).
    pub mask_weights: (f64, f64),
    pub learning_rate: f64,
    /// Per-epoch exponential decay factor.
    pub decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
    /// Beam size for the per-epoch dev decoding.
    pub dev_beam: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 0.0,
            mask_weights: (0.6, 1.0),
            learning_rate: 0.0008,
            decay: 0.85,
            epochs: 10,
            batch_size: 16,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: 5.0,
            dev_beam: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(TrainError::BadLambda(self.lambda));
        }
        let bad = |msg: String| Err(TrainError::BadConfig(msg));
        if !(self.mask_weights.0 > 0.0 && self.mask_weights.1 > 0.0) {
            return bad(format!("mask weights {:?} must be positive", self.mask_weights));
        }
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning rate {} must be positive", self.learning_rate));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return bad(format!("decay {} outside (0, 1]", self.decay));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.dev_beam == 0 {
            return bad("epochs, batch_size and dev_beam must be positive".into());
        }
        if self.clip_norm < 0.0 {
            return bad(format!("clip_norm {} must be non-negative", self.clip_norm));
        }
        Ok(())
    }

    /// Learning rate at an epoch: `lr0 * decay^epoch`.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        lr_schedule(self.learning_rate, self.decay, epoch)
    }
}

/// Exponentially decayed learning rate.
pub fn lr_schedule(initial: f64, decay: f64, epoch: usize) -> f64 {
    initial * decay.powi(epoch as i32)
}

/// Mean cross-entropy over target positions: `-log softmax(logits)[target]`
/// averaged over the sequence (teacher forcing supplies the inputs that
/// produced these logits).
pub fn asr_loss(logits: &[Vec<f64>], targets: &[usize]) -> Result<f64, TrainError> {
    if logits.len() != targets.len() {
        return Err(TrainError::LengthMismatch { got: logits.len(), want: targets.len() });
    }
    if targets.is_empty() {
        return Err(TrainError::LengthMismatch { got: 0, want: 0 });
    }
    let mut sum = 0.0;
    for (row, &target) in logits.iter().zip(targets) {
        let lsm = log_softmax(row)?;
        sum += -lsm[target];
    }
    Ok(sum * (1.0 / targets.len() as f64))
}

/// Same objective built on the tape for backpropagation.
pub fn asr_loss_on_tape(
    tape: &mut Tape,
    logits: &[Var],
    targets: &[usize],
) -> Result<Var, TrainError> {
    if logits.len() != targets.len() {
        return Err(TrainError::LengthMismatch { got: logits.len(), want: targets.len() });
    }
    let terms = logits
        .iter()
        .zip(targets)
        .map(|(&l, &t)| tape.nll_softmax(l, t))
        .collect::<Result<Vec<_>, _>>()?;
    let sum = tape.sum_scalars(&terms)?;
    Ok(tape.scale_const(sum, 1.0 / targets.len() as f64))
}

/// Class-weighted binary cross-entropy of mask probabilities against the
/// downsampled gold labels, normalized by the sum of applied weights.
/// Invalid (padded) frames contribute nothing.
pub fn mask_loss(
    phi: &[f64],
    gold: &[u8],
    weights: (f64, f64),
    valid: &[bool],
) -> Result<f64, TrainError> {
    if phi.len() != gold.len() || phi.len() != valid.len() {
        return Err(TrainError::LengthMismatch { got: phi.len(), want: gold.len() });
    }
    let mut loss = 0.0;
    let mut weight_sum = 0.0;
    for ((&p, &label), &ok) in phi.iter().zip(gold).zip(valid) {
        if !ok {
            continue;
        }
        if !(p > 0.0 && p < 1.0) {
            return Err(TrainError::BadPhi);
        }
        let w = if label == 1 { weights.0 } else { weights.1 };
        let bce = if label == 1 { -p.ln() } else { -(1.0 - p).ln() };
        loss += w * bce;
        weight_sum += w;
    }
    if weight_sum == 0.0 {
        return Err(TrainError::NoValidFrames);
    }
    Ok(loss / weight_sum)
}

/// Tape version of [`mask_loss`], computed from pre-sigmoid logits for
/// stability at saturated gates.
pub fn mask_loss_on_tape(
    tape: &mut Tape,
    phi_logits: &[Var],
    gold: &[u8],
    weights: (f64, f64),
    valid: &[bool],
) -> Result<Var, TrainError> {
    if phi_logits.len() != gold.len() || phi_logits.len() != valid.len() {
        return Err(TrainError::LengthMismatch { got: phi_logits.len(), want: gold.len() });
    }
    let mut terms = Vec::with_capacity(gold.len());
    let mut weight_sum = 0.0;
    for ((&z, &label), &ok) in phi_logits.iter().zip(gold).zip(valid) {
        if !ok {
            continue;
        }
        let w = if label == 1 { weights.0 } else { weights.1 };
        let bce = tape.bce_logits(z, label as f64)?;
        terms.push(tape.scale_const(bce, w));
        weight_sum += w;
    }
    if terms.is_empty() {
        return Err(TrainError::NoValidFrames);
    }
    let sum = tape.sum_scalars(&terms)?;
    Ok(tape.scale_const(sum, 1.0 / weight_sum))
}

/// Linear interpolation `(1 - lambda) * asr + lambda * mask`. A positive
/// `lambda` requires a mask loss, which only the mask-based variant
/// produces.
pub fn total_loss(asr: f64, mask: Option<f64>, lambda: f64) -> Result<f64, TrainError> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(TrainError::BadLambda(lambda));
    }
    match mask {
        Some(m) => Ok((1.0 - lambda) * asr + lambda * m),
        None if lambda > 0.0 => Err(TrainError::MaskUnavailable(lambda)),
        None => Ok(asr),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    #[test]
    fn uniform_logits_cost_log_vocab() {
        let logits = vec![vec![0.0; 36]; 5];
        let targets = vec![3, 4, 5, 6, 2];
        let loss = asr_loss(&logits, &targets).unwrap();
        assert!((loss - 36.0_f64.ln()).abs() < 1e-12);
        assert!((loss - 3.5835189384561).abs() < 1e-10);
    }

    #[test]
    fn confident_correct_logits_cost_nothing() {
        // Margin 30 one-hot logits at the targets.
        let mut logits = vec![vec![0.0; 8]; 4];
        let targets = vec![1, 5, 2, 7];
        for (row, &t) in logits.iter_mut().zip(&targets) {
            row[t] = 30.0;
        }
        assert!(asr_loss(&logits, &targets).unwrap() < 1e-9);
    }

    #[test]
    fn empty_transcript_scores_one_position() {
        let logits = vec![vec![0.25; 4]];
        let targets = vec![crate::corpus::EOS];
        let loss = asr_loss(&logits, &targets).unwrap();
        assert!((loss - 4.0_f64.ln()).abs() < 1e-12);
        assert!(matches!(
            asr_loss(&logits, &[1, 2]),
            Err(TrainError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn mask_loss_on_perfect_predictions_is_tiny() {
        let gold = [1u8, 0, 1, 1];
        let phi: Vec<f64> = gold
            .iter()
            .map(|&l| if l == 1 { 1.0 - 1e-7 } else { 1e-7 })
            .collect();
        let valid = [true; 4];
        let loss = mask_loss(&phi, &gold, (0.6, 1.0), &valid).unwrap();
        assert!(loss < 1e-5);
    }

    #[test]
    fn single_class_weight_normalizes_out() {
        let phi = [0.5; 6];
        let gold = [1u8; 6];
        let valid = [true; 6];
        let loss = mask_loss(&phi, &gold, (0.6, 1.0), &valid).unwrap();
        assert!((loss - 2.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn equal_weights_match_plain_bce_mean() {
        let phi = [0.3, 0.8, 0.6, 0.2, 0.55];
        let gold = [0u8, 1, 1, 0, 1];
        let valid = [true; 5];
        let weighted = mask_loss(&phi, &gold, (0.7, 0.7), &valid).unwrap();
        let plain: f64 = phi
            .iter()
            .zip(&gold)
            .map(|(&p, &l)| if l == 1 { -p.ln() } else { -(1.0 - p).ln() })
            .sum::<f64>()
            / 5.0;
        assert!((weighted - plain).abs() < 1e-12);
    }

    #[test]
    fn invalid_frames_are_excluded_and_all_invalid_errors() {
        let phi = [0.9, 0.1];
        let gold = [1u8, 1];
        let partial = mask_loss(&phi, &gold, (1.0, 1.0), &[true, false]).unwrap();
        assert!((partial + 0.9_f64.ln()).abs() < 1e-12);
        assert!(matches!(
            mask_loss(&phi, &gold, (1.0, 1.0), &[false, false]),
            Err(TrainError::NoValidFrames)
        ));
    }

    #[test]
    fn tape_losses_agree_with_value_losses() {
        let mut tape = Tape::new();
        let rows = [
            vec![0.3, -0.2, 1.4, 0.0],
            vec![-1.0, 0.5, 0.25, 2.0],
            vec![0.0, 0.0, -0.5, 0.1],
        ];
        let targets = [2usize, 0, 3];
        let logit_vars: Vec<Var> =
            rows.iter().map(|r| tape.constant(Tensor::vector(r.clone()))).collect();
        let tape_loss = asr_loss_on_tape(&mut tape, &logit_vars, &targets).unwrap();
        let value_loss = asr_loss(&rows.to_vec(), &targets).unwrap();
        assert!((tape.value(tape_loss).data()[0] - value_loss).abs() < 1e-12);

        let zs = [0.3, -1.2, 2.0, 0.0];
        let gold = [1u8, 0, 1, 0];
        let valid = [true, true, false, true];
        let z_vars: Vec<Var> = zs.iter().map(|&z| tape.constant(Tensor::scalar(z))).collect();
        let tape_mask =
            mask_loss_on_tape(&mut tape, &z_vars, &gold, (0.6, 1.0), &valid).unwrap();
        let phi: Vec<f64> = zs.iter().map(|&z| crate::numerics::sigmoid(z)).collect();
        let value_mask = mask_loss(&phi, &gold, (0.6, 1.0), &valid).unwrap();
        assert!((tape.value(tape_mask).data()[0] - value_mask).abs() < 1e-12);
    }

    #[test]
    fn total_loss_interpolates_and_guards() {
        assert_eq!(total_loss(2.0, Some(1.0), 0.0).unwrap(), 2.0);
        assert_eq!(total_loss(2.0, Some(1.0), 1.0).unwrap(), 1.0);
        assert!((total_loss(2.0, Some(1.0), 0.1).unwrap() - 1.9).abs() < 1e-12);
        assert_eq!(total_loss(2.0, None, 0.0).unwrap(), 2.0);
        assert!(matches!(total_loss(2.0, None, 0.1), Err(TrainError::MaskUnavailable(_))));
        assert!(matches!(total_loss(2.0, Some(1.0), 1.5), Err(TrainError::BadLambda(_))));
    }

    #[test]
    fn total_loss_is_linear_in_lambda() {
        let (a, m) = (2.75, 0.4);
        let at = |l: f64| total_loss(a, Some(m), l).unwrap();
        assert_eq!(at(0.0), a);
        assert_eq!(at(1.0), m);
        for k in 0..=16 {
            let l = k as f64 / 16.0;
            let expected = a + l * (m - a);
            assert!((at(l) - expected).abs() <= 4.0 * f64::EPSILON * (a.abs() + m.abs()));
        }
    }

    #[test]
    fn schedule_decays_exponentially() {
        assert_eq!(lr_schedule(0.0008, 0.9, 0), 0.0008);
        assert!((lr_schedule(0.0008, 0.9, 2) - 0.000648).abs() < 1e-12);
        assert_eq!(lr_schedule(0.0008, 1.0, 9), 0.0008);
        let cfg = TrainConfig { decay: 0.5, ..TrainConfig::default() };
        assert!((cfg.learning_rate_at(3) - 0.0008 * 0.125).abs() < 1e-15);
    }
}
