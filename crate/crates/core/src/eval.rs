//! WER scoring with substitution/insertion/deletion decomposition,
//! normalized reporting, relative WER reduction, and mask recall.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("lengths differ: {0} probabilities vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("threshold {0} outside (0, 1)")]
    BadThreshold(f64),
    #[error("normalization divisor must be positive, got {0}")]
    ZeroBaseline(f64),
}

/// Counts from one minimum-cost alignment of a hypothesis against a
/// reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ErrorCounts {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub ref_len: usize,
}

impl ErrorCounts {
    pub fn total_errors(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }

    pub fn accumulate(&mut self, other: &ErrorCounts) {
        self.substitutions += other.substitutions;
        self.insertions += other.insertions;
        self.deletions += other.deletions;
        self.ref_len += other.ref_len;
    }
}

/// Minimum-edit-distance alignment with unit costs. Among minimum-cost
/// alignments the decomposition is pinned by preferring deletions over
/// substitutions over insertions, so reported tables are reproducible.
pub fn align(reference: &[&str], hypothesis: &[&str]) -> ErrorCounts {
    let n = reference.len();
    let m = hypothesis.len();
    // Lexicographic DP value: (cost, -deletions). Maximizing deletions at
    // equal cost realizes the deletion > substitution > insertion
    // preference; insertions and substitutions are then determined by the
    // sequence lengths.
    let mut prev: Vec<(usize, i64)> = (0..=m).map(|j| (j, 0)).collect();
    let mut curr = vec![(0usize, 0i64); m + 1];
    for i in 1..=n {
        curr[0] = (i, -(i as i64));
        for j in 1..=m {
            let del = (prev[j].0 + 1, prev[j].1 - 1);
            let ins = (curr[j - 1].0 + 1, curr[j - 1].1);
            let diag_cost = usize::from(reference[i - 1] != hypothesis[j - 1]);
            let diag = (prev[j - 1].0 + diag_cost, prev[j - 1].1);
            curr[j] = del.min(ins).min(diag);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    let (cost, neg_d) = prev[m];
    let deletions = (-neg_d) as usize;
    // Every complete alignment satisfies insertions - deletions = m - n.
    let insertions = (deletions + m).checked_sub(n).expect("alignment identity");
    let substitutions = cost - insertions - deletions;
    ErrorCounts { substitutions, insertions, deletions, ref_len: n }
}

/// Word-level alignment of whitespace-tokenized strings.
pub fn align_str(reference: &str, hypothesis: &str) -> ErrorCounts {
    let r: Vec<&str> = reference.split_whitespace().collect();
    let h: Vec<&str> = hypothesis.split_whitespace().collect();
    align(&r, &h)
}

/// Word error rate `(S + I + D) / ref_len`. An empty reference scores 0
/// against an empty hypothesis; against a non-empty one every hypothesis
/// word is an insertion and the divisor is 1.
pub fn wer(counts: &ErrorCounts) -> f64 {
    if counts.ref_len == 0 {
        if counts.total_errors() == 0 {
            0.0
        } else {
            counts.total_errors() as f64
        }
    } else {
        counts.total_errors() as f64 / counts.ref_len as f64
    }
}

/// Error rates of one system on one test set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbsoluteMetrics {
    pub wer: f64,
    pub sub_rate: f64,
    pub ins_rate: f64,
    pub del_rate: f64,
}

impl AbsoluteMetrics {
    pub fn from_counts(counts: &ErrorCounts) -> Self {
        let denom = if counts.ref_len == 0 { 1.0 } else { counts.ref_len as f64 };
        AbsoluteMetrics {
            wer: wer(counts),
            sub_rate: counts.substitutions as f64 / denom,
            ins_rate: counts.insertions as f64 / denom,
            del_rate: counts.deletions as f64 / denom,
        }
    }
}

/// Metrics divided by a fixed baseline WER (the baseline system on the
/// clean test set), the paper-table normalization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedMetrics {
    pub wer: f64,
    pub sub_rate: f64,
    pub ins_rate: f64,
    pub del_rate: f64,
}

pub fn normalize_report(
    metrics: &AbsoluteMetrics,
    baseline_normal_wer: f64,
) -> Result<NormalizedMetrics, EvalError> {
    if !(baseline_normal_wer > 0.0) {
        return Err(EvalError::ZeroBaseline(baseline_normal_wer));
    }
    Ok(NormalizedMetrics {
        wer: metrics.wer / baseline_normal_wer,
        sub_rate: metrics.sub_rate / baseline_normal_wer,
        ins_rate: metrics.ins_rate / baseline_normal_wer,
        del_rate: metrics.del_rate / baseline_normal_wer,
    })
}

/// Relative WER reduction in percent: positive means the system improves
/// on the baseline. Scale-invariant, so normalized and absolute WERs give
/// the same value.
pub fn werr(baseline_wer: f64, system_wer: f64) -> f64 {
    assert!(baseline_wer > 0.0, "werr needs a positive baseline");
    100.0 * (baseline_wer - system_wer) / baseline_wer
}

/// Per-class recall of thresholded mask probabilities: a frame is
/// predicted device-directed (1) when its probability reaches the
/// threshold. A class absent from the gold labels has no recall.
pub fn mask_recall(
    phi: &[f64],
    gold: &[u8],
    threshold: f64,
) -> Result<(Option<f64>, Option<f64>), EvalError> {
    let mut acc = RecallAccumulator::default();
    acc.add(phi, gold, threshold)?;
    Ok((acc.recall_0(), acc.recall_1()))
}

/// Pools recall counts over many utterances.
#[derive(Debug, Default, Clone, Copy)]
pub struct RecallAccumulator {
    correct: [usize; 2],
    total: [usize; 2],
}

impl RecallAccumulator {
    pub fn add(&mut self, phi: &[f64], gold: &[u8], threshold: f64) -> Result<(), EvalError> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(EvalError::BadThreshold(threshold));
        }
        if phi.len() != gold.len() {
            return Err(EvalError::LengthMismatch(phi.len(), gold.len()));
        }
        for (&p, &label) in phi.iter().zip(gold) {
            let predicted = u8::from(p >= threshold);
            self.total[label as usize] += 1;
            if predicted == label {
                self.correct[label as usize] += 1;
            }
        }
        Ok(())
    }

    pub fn recall_0(&self) -> Option<f64> {
        (self.total[0] > 0).then(|| self.correct[0] as f64 / self.total[0] as f64)
    }

    pub fn recall_1(&self) -> Option<f64> {
        (self.total[1] > 0).then(|| self.correct[1] as f64 / self.total[1] as f64)
    }
}

/// Sums alignment counts over (reference, hypothesis) text pairs.
pub fn score_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> ErrorCounts {
    let mut total = ErrorCounts::default();
    for (r, h) in pairs {
        total.accumulate(&align_str(r, h));
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Enumerates every alignment and applies the deletion-first
    /// preference, independently of the DP.
    fn brute_force(reference: &[&str], hypothesis: &[&str]) -> ErrorCounts {
        fn recurse(
            r: &[&str],
            h: &[&str],
            i: usize,
            j: usize,
            counts: (usize, usize, usize),
            out: &mut Vec<(usize, usize, usize)>,
        ) {
            if i == r.len() && j == h.len() {
                out.push(counts);
                return;
            }
            if i < r.len() {
                recurse(r, h, i + 1, j, (counts.0, counts.1, counts.2 + 1), out);
            }
            if j < h.len() {
                recurse(r, h, i, j + 1, (counts.0, counts.1 + 1, counts.2), out);
            }
            if i < r.len() && j < h.len() {
                let s = usize::from(r[i] != h[j]);
                recurse(r, h, i + 1, j + 1, (counts.0 + s, counts.1, counts.2), out);
            }
        }
        let mut all = Vec::new();
        recurse(reference, hypothesis, 0, 0, (0, 0, 0), &mut all);
        let min_cost = all.iter().map(|(s, i, d)| s + i + d).min().unwrap();
        let (s, i, d) = all
            .into_iter()
            .filter(|(s, i, d)| s + i + d == min_cost)
            .max_by_key(|&(_, _, d)| d)
            .unwrap();
        ErrorCounts { substitutions: s, insertions: i, deletions: d, ref_len: reference.len() }
    }

    #[test]
    fn perfect_substitution_and_deletion_cases() {
        assert_eq!(
            align_str("a b c", "a b c"),
            ErrorCounts { substitutions: 0, insertions: 0, deletions: 0, ref_len: 3 }
        );
        assert_eq!(
            align_str("a b c", "a x c"),
            ErrorCounts { substitutions: 1, insertions: 0, deletions: 0, ref_len: 3 }
        );
        assert_eq!(
            align_str("a b", ""),
            ErrorCounts { substitutions: 0, insertions: 0, deletions: 2, ref_len: 2 }
        );
    }

    #[test]
    fn matches_brute_force_on_full_enumeration() {
        // Every pair over a 3-word alphabet with lengths <= 4.
        let words = ["a", "b", "c"];
        let mut sequences: Vec<Vec<&str>> = vec![vec![]];
        for len in 1..=4 {
            let mut new = Vec::new();
            for seq in sequences.iter().filter(|s| s.len() == len - 1) {
                for w in words {
                    let mut s = seq.clone();
                    s.push(w);
                    new.push(s);
                }
            }
            sequences.extend(new);
        }
        // Cap references at length 3 to keep the cross product fast; the
        // random-pair test covers longer sequences.
        let refs: Vec<&Vec<&str>> = sequences.iter().filter(|s| s.len() <= 3).collect();
        for r in &refs {
            for h in &sequences {
                assert_eq!(align(r, h), brute_force(r, h), "ref {r:?} hyp {h:?}");
            }
        }
    }

    #[test]
    fn matches_brute_force_on_random_pairs() {
        use rand::Rng;
        let mut rng = crate::seeding::rng(42);
        let words = ["a", "b", "c"];
        for _ in 0..1000 {
            let r: Vec<&str> =
                (0..rng.gen_range(0..=6)).map(|_| words[rng.gen_range(0..3)]).collect();
            let h: Vec<&str> =
                (0..rng.gen_range(0..=6)).map(|_| words[rng.gen_range(0..3)]).collect();
            assert_eq!(align(&r, &h), brute_force(&r, &h), "ref {r:?} hyp {h:?}");
        }
    }

    #[test]
    fn error_total_equals_levenshtein_distance() {
        use rand::Rng;
        let mut rng = crate::seeding::rng(7);
        let words = ["x", "y", "z"];
        for _ in 0..300 {
            let r: Vec<&str> =
                (0..rng.gen_range(0..=6)).map(|_| words[rng.gen_range(0..3)]).collect();
            let h: Vec<&str> =
                (0..rng.gen_range(0..=6)).map(|_| words[rng.gen_range(0..3)]).collect();
            let counts = align(&r, &h);
            assert_eq!(counts.total_errors(), levenshtein(&r, &h));
        }
    }

    fn levenshtein(a: &[&str], b: &[&str]) -> usize {
        let mut prev: Vec<usize> = (0..=b.len()).collect();
        let mut curr = vec![0; b.len() + 1];
        for i in 1..=a.len() {
            curr[0] = i;
            for j in 1..=b.len() {
                let cost = usize::from(a[i - 1] != b[j - 1]);
                curr[j] = (prev[j] + 1).min(curr[j - 1] + 1).min(prev[j - 1] + cost);
            }
            std::mem::swap(&mut prev, &mut curr);
        }
        prev[b.len()]
    }

    #[test]
    fn wer_arithmetic_and_degenerate_cases() {
        let c = ErrorCounts { substitutions: 1, insertions: 1, deletions: 1, ref_len: 10 };
        assert!((wer(&c) - 0.30).abs() < 1e-12);
        assert_eq!(wer(&ErrorCounts::default()), 0.0);
        assert_eq!(wer(&align_str("", "")), 0.0);
        let c = align_str("", "x y");
        assert_eq!(c.insertions, 2);
        assert!((wer(&c) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn normalization_follows_the_reference_example() {
        // Baseline 5.0% on the clean set, 25.0% on the hard set.
        let normal = AbsoluteMetrics { wer: 0.05, sub_rate: 0.0, ins_rate: 0.0, del_rate: 0.0 };
        let hard = AbsoluteMetrics { wer: 0.25, sub_rate: 0.0, ins_rate: 0.0, del_rate: 0.0 };
        assert_eq!(normalize_report(&normal, 0.05).unwrap().wer, 1.000);
        assert_eq!(normalize_report(&hard, 0.05).unwrap().wer, 5.000);
        assert!(matches!(
            normalize_report(&normal, 0.0),
            Err(EvalError::ZeroBaseline(_))
        ));
    }

    #[test]
    fn normalization_preserves_ratios() {
        let m = AbsoluteMetrics { wer: 0.21, sub_rate: 0.1, ins_rate: 0.06, del_rate: 0.05 };
        let n = normalize_report(&m, 0.07).unwrap();
        assert!((n.sub_rate / n.wer - m.sub_rate / m.wer).abs() < 1e-12);
        assert!((n.del_rate / n.ins_rate - m.del_rate / m.ins_rate).abs() < 1e-12);
    }

    #[test]
    fn werr_reproduces_reported_values() {
        let round1 = |x: f64| (x * 10.0).round() / 10.0;
        assert_eq!(round1(werr(3.354, 2.854)), 14.9);
        assert_eq!(round1(werr(3.354, 2.931)), 12.6);
        assert_eq!(round1(werr(1.000, 3.215)), -221.5);
        assert_eq!(werr(0.37, 0.37), 0.0);
    }

    #[test]
    fn werr_is_scale_invariant() {
        for k in [0.01, 1.0, 37.5] {
            let a = werr(0.2, 0.15);
            let b = werr(0.2 * k, 0.15 * k);
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn recall_examples() {
        assert_eq!(
            mask_recall(&[0.9, 0.9, 0.1, 0.2], &[1, 1, 0, 0], 0.5).unwrap(),
            (Some(1.0), Some(1.0))
        );
        // The boundary counts as predicted 1.
        assert_eq!(
            mask_recall(&[0.5, 0.5], &[1, 0], 0.5).unwrap(),
            (Some(0.0), Some(1.0))
        );
        assert_eq!(
            mask_recall(&[0.2, 0.7, 0.9, 0.9], &[0, 0, 1, 1], 0.5).unwrap(),
            (Some(0.5), Some(1.0))
        );
        // Absent class.
        assert_eq!(mask_recall(&[0.9], &[1], 0.5).unwrap(), (None, Some(1.0)));
        assert!(mask_recall(&[0.5], &[1, 0], 0.5).is_err());
        assert!(mask_recall(&[0.5], &[1], 1.0).is_err());
    }
}
