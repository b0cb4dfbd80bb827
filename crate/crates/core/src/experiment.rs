//! End-to-end experiment runs: corpus generation, augmentation, training
//! of the model grid, decoding and scoring into one combined table.
//!
//! The grid follows the reference comparison: {baseline, multi-source}
//! crossed with {device-directed-only, augmented} training data, plus the
//! mask-based model trained on augmented data with and without mask
//! supervision. Scores are reported on a clean ("normal") test set and a
//! segment-corrupted ("hard") one, normalized by the
//! baseline/device-directed-only WER on the normal set.

use thiserror::Error;

use crate::augment::{mix_corpus, synth_method1, AugmentError, MixSpec};
use crate::corpus::{gen_toy_corpus, AnchoredUtterance, Corpus, CorpusError, ToyCorpusConfig, Vocabulary};
use crate::decode::{decode_corpus, DecodeError};
use crate::eval::{self, AbsoluteMetrics, ErrorCounts};
use crate::model::{init_params, ModelConfig, ModelError, Variant};
use crate::numerics::ParamSet;
use crate::seeding;
use crate::train::{fit, TrainConfig, TrainError, TrainReport};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error("experiment config: {0}")]
    BadConfig(String),
    #[error("the table needs the baseline/device-directed-only system")]
    MissingBaseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SystemId {
    BaselineDevOnly,
    BaselineAugmented,
    MultiSourceDevOnly,
    MultiSourceAugmented,
    MaskNoSupervision,
    MaskSupervised,
}

/// The full table grid, in presentation order.
pub const TABLE_SYSTEMS: [SystemId; 6] = [
    SystemId::BaselineDevOnly,
    SystemId::BaselineAugmented,
    SystemId::MultiSourceDevOnly,
    SystemId::MultiSourceAugmented,
    SystemId::MaskNoSupervision,
    SystemId::MaskSupervised,
];

impl SystemId {
    pub fn variant(&self) -> Variant {
        match self {
            SystemId::BaselineDevOnly | SystemId::BaselineAugmented => Variant::Baseline,
            SystemId::MultiSourceDevOnly | SystemId::MultiSourceAugmented => Variant::MultiSource,
            SystemId::MaskNoSupervision | SystemId::MaskSupervised => Variant::MaskBased,
        }
    }

    pub fn trains_on_augmented(&self) -> bool {
        !matches!(self, SystemId::BaselineDevOnly | SystemId::MultiSourceDevOnly)
    }

    pub fn model_label(&self) -> &'static str {
        match self {
            SystemId::BaselineDevOnly | SystemId::BaselineAugmented => "baseline",
            SystemId::MultiSourceDevOnly | SystemId::MultiSourceAugmented => "multi-source",
            SystemId::MaskNoSupervision => "mask-based (no supervision)",
            SystemId::MaskSupervised => "mask-based (supervised)",
        }
    }

    pub fn training_set_label(&self) -> &'static str {
        if self.trains_on_augmented() {
            "augmented"
        } else {
            "device-directed-only"
        }
    }

    fn index(&self) -> u64 {
        TABLE_SYSTEMS.iter().position(|s| s == self).unwrap() as u64
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub corpus: ToyCorpusConfig,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub mix: MixSpec,
    pub seg_len_range: (usize, usize),
    pub train: TrainConfig,
    /// Interpolation weight for the supervised mask-based system.
    pub lambda_supervised: f64,
    /// Beam size for test-set decoding.
    pub beam: usize,
    /// Vocabulary threshold on character counts.
    pub min_count: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            corpus: ToyCorpusConfig {
                speakers: 8,
                n_letters: 6,
                transcript_len: (4, 9),
                body_len_per_grapheme: 4,
                noise_scale: 0.1,
                ..ToyCorpusConfig::default()
            },
            n_train: 500,
            n_dev: 60,
            n_test: 160,
            mix: MixSpec::reference(),
            seg_len_range: (5, 15),
            train: TrainConfig {
                learning_rate: 0.02,
                decay: 0.96,
                epochs: 30,
                batch_size: 16,
                ..TrainConfig::default()
            },
            lambda_supervised: 0.1,
            beam: 4,
            min_count: 1,
        }
    }
}

/// Corpora and vocabulary shared by every system of one run.
pub struct ExperimentData {
    pub vocab: Vocabulary,
    pub train_clean: Corpus,
    pub train_augmented: Corpus,
    /// Half clean, half corrupted, mirroring the mixed test conditions.
    pub dev: Corpus,
    pub test_normal: Corpus,
    pub test_hard: Corpus,
}

/// Corrupts every utterance with a donor segment from its own set.
pub fn harden(
    corpus: &Corpus,
    seg_len_range: (usize, usize),
    seed: u64,
) -> Result<Corpus, AugmentError> {
    let n = corpus.len();
    if n < 2 {
        return Err(AugmentError::CorpusTooSmall(n));
    }
    let indices: Vec<usize> = (0..n).collect();
    let results = crate::par::map(&indices, |&i| {
        let mut rng = seeding::rng(seeding::derive(seed, i as u64));
        let donor_idx = {
            use rand::Rng;
            let d = rng.gen_range(0..n - 1);
            if d >= i {
                d + 1
            } else {
                d
            }
        };
        use rand::Rng;
        let seg_seed: u64 = rng.gen();
        synth_method1(&corpus.utterances[i], &corpus.utterances[donor_idx], seg_len_range, seg_seed)
    });
    let mut utterances = Vec::with_capacity(n);
    for r in results {
        utterances.push(r?);
    }
    Ok(Corpus::new(utterances))
}

pub fn prepare_data(cfg: &ExperimentConfig, seed: u64) -> Result<ExperimentData, ExperimentError> {
    let total = cfg.n_train + cfg.n_dev + cfg.n_test;
    if cfg.n_train == 0 || cfg.n_dev < 2 || cfg.n_test < 2 {
        return Err(ExperimentError::BadConfig(format!(
            "split {}/{}/{} too small",
            cfg.n_train, cfg.n_dev, cfg.n_test
        )));
    }
    let mut corpus_cfg = cfg.corpus.clone();
    corpus_cfg.n_utts = total;
    let corpus = gen_toy_corpus(&corpus_cfg, seeding::derive(seed, 0xc0))?;

    let mut utts = corpus.utterances;
    let test: Vec<AnchoredUtterance> = utts.split_off(cfg.n_train + cfg.n_dev);
    let dev_clean: Vec<AnchoredUtterance> = utts.split_off(cfg.n_train);
    let train_clean = Corpus::new(utts);

    let test_normal = Corpus::new(test);
    let test_hard = harden(&test_normal, cfg.seg_len_range, seeding::derive(seed, 0xa1))?;

    // Dev mirrors the mixed conditions: first half clean, second half
    // corrupted (clean dev utterances keep all-ones masks so mask
    // diagnostics cover both classes).
    let half = dev_clean.len() / 2;
    let dev_clean_corpus = Corpus::new(dev_clean);
    let dev_hard = harden(&dev_clean_corpus, cfg.seg_len_range, seeding::derive(seed, 0xa2))?;
    let mut dev_utts = Vec::with_capacity(dev_clean_corpus.len());
    for (i, utt) in dev_clean_corpus.utterances.iter().enumerate() {
        if i < half {
            let mut clean = utt.clone();
            clean.gold_mask = Some(crate::corpus::GoldMask::all_ones(clean.body.frames()));
            dev_utts.push(clean);
        } else {
            dev_utts.push(dev_hard.utterances[i].clone());
        }
    }
    let dev = Corpus::new(dev_utts);

    let train_augmented =
        mix_corpus(&train_clean, &cfg.mix, cfg.seg_len_range, seeding::derive(seed, 0xa3))?;
    let vocab = Vocabulary::build(train_clean.transcripts(), cfg.min_count)?;

    Ok(ExperimentData { vocab, train_clean, train_augmented, dev, test_normal, test_hard })
}

/// Scores of one trained system on both test sets.
#[derive(Debug, Clone)]
pub struct SystemScores {
    pub system: SystemId,
    pub normal: ErrorCounts,
    pub hard: ErrorCounts,
    pub report: TrainReport,
}

fn score_decodes(
    cfg: &ModelConfig,
    params: &ParamSet,
    vocab: &Vocabulary,
    corpus: &Corpus,
    beam: usize,
) -> Result<ErrorCounts, ExperimentError> {
    let records = decode_corpus(cfg, params, vocab, corpus, beam)?;
    let mut counts = ErrorCounts::default();
    for (utt, record) in corpus.iter().zip(&records) {
        counts.accumulate(&eval::align_str(&utt.transcript, &record.text));
    }
    Ok(counts)
}

/// Trains one grid system and scores it on both test sets.
pub fn run_system(
    data: &ExperimentData,
    cfg: &ExperimentConfig,
    system: SystemId,
    seed: u64,
) -> Result<SystemScores, ExperimentError> {
    let variant = system.variant();
    let model_cfg = ModelConfig::desk_scale(variant, data.vocab.size());
    let params = init_params(&model_cfg, seeding::derive(seed, 0x1000 + system.index()))?;

    let lambda = match system {
        SystemId::MaskSupervised => cfg.lambda_supervised,
        _ => 0.0,
    };
    let train_cfg = TrainConfig {
        lambda,
        seed: seeding::derive(seed, 0x2000 + system.index()),
        ..cfg.train.clone()
    };
    let train_set = if system.trains_on_augmented() {
        &data.train_augmented
    } else {
        &data.train_clean
    };

    let (params, report) = fit(
        &model_cfg,
        params,
        &data.vocab,
        &train_set.utterances,
        &train_cfg,
        &data.dev.utterances,
    )?;

    let normal = score_decodes(&model_cfg, &params, &data.vocab, &data.test_normal, cfg.beam)?;
    let hard = score_decodes(&model_cfg, &params, &data.vocab, &data.test_hard, cfg.beam)?;
    Ok(SystemScores { system, normal, hard, report })
}

pub struct ExperimentRun {
    pub scores: Vec<SystemScores>,
}

/// Runs the requested systems over shared data.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    seed: u64,
    systems: &[SystemId],
) -> Result<ExperimentRun, ExperimentError> {
    let data = prepare_data(cfg, seed)?;
    let mut scores = Vec::with_capacity(systems.len());
    for &system in systems {
        scores.push(run_system(&data, cfg, system, seed)?);
    }
    Ok(ExperimentRun { scores })
}

/// Renders the combined score table: one row per (system, test set),
/// error rates normalized by the baseline/device-directed-only WER on
/// the normal set, relative WER reduction against that baseline on the
/// same test set.
pub fn render_table(run: &ExperimentRun) -> Result<String, ExperimentError> {
    let baseline = run
        .scores
        .iter()
        .find(|s| s.system == SystemId::BaselineDevOnly)
        .ok_or(ExperimentError::MissingBaseline)?;
    let base_normal = AbsoluteMetrics::from_counts(&baseline.normal);
    let base_hard = AbsoluteMetrics::from_counts(&baseline.hard);
    if !(base_normal.wer > 0.0) {
        return Err(ExperimentError::BadConfig(
            "baseline normal WER is zero; nothing to normalize by".into(),
        ));
    }

    let mut out = String::from("model,training_set,test_set,wer,sub,ins,del,werr\n");
    for scores in &run.scores {
        for (test_set, counts, base) in [
            ("normal", &scores.normal, &base_normal),
            ("hard", &scores.hard, &base_hard),
        ] {
            let abs = AbsoluteMetrics::from_counts(counts);
            let norm = eval::normalize_report(&abs, base_normal.wer)
                .expect("baseline WER checked positive");
            let werr = if base.wer > 0.0 {
                eval::werr(base.wer, abs.wer)
            } else {
                0.0
            };
            out.push_str(&format!(
                "{},{},{},{:.3},{:.3},{:.3},{:.3},{:+.1}\n",
                scores.system.model_label(),
                scores.system.training_set_label(),
                test_set,
                norm.wer,
                norm.sub_rate,
                norm.ins_rate,
                norm.del_rate,
                werr,
            ));
        }
    }
    Ok(out)
}
