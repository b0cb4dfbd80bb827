//! Deterministic toy-corpus generation with controllable speaker
//! characteristics.
//!
//! Each speaker carries an additive bias vector; graphemes map to shared
//! emission templates. A frame is `template(grapheme) + bias(speaker) +
//! noise`, so dot-product similarity between segments of the same speaker
//! stands in for the speaker information real filterbank features carry.
//! Every value is rounded through `f32` so corpora survive file
//! round-trips bit-exactly.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::seeding;

use super::{AnchoredUtterance, Corpus, CorpusError, FeatureSequence};

#[derive(Debug, Clone)]
pub struct ToyCorpusConfig {
    pub n_utts: usize,
    pub feat_dim: usize,
    pub speakers: usize,
    /// Transcript length in graphemes, inclusive bounds.
    pub transcript_len: (usize, usize),
    /// Anchor length in frames, inclusive bounds.
    pub anchor_len: (usize, usize),
    pub body_len_per_grapheme: usize,
    pub noise_scale: f64,
    /// Lowercase letters used as graphemes, in addition to space.
    pub n_letters: usize,
}

impl Default for ToyCorpusConfig {
    fn default() -> Self {
        ToyCorpusConfig {
            n_utts: 200,
            feat_dim: 8,
            speakers: 4,
            transcript_len: (6, 12),
            anchor_len: (3, 6),
            body_len_per_grapheme: 3,
            noise_scale: 0.1,
            n_letters: 10,
        }
    }
}

impl ToyCorpusConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |msg: String| Err(CorpusError::BadConfig(msg));
        if self.speakers < 2 {
            return bad(format!("need at least 2 speakers, got {}", self.speakers));
        }
        if self.feat_dim < 2 {
            return bad(format!("need feat_dim >= 2, got {}", self.feat_dim));
        }
        if self.n_utts == 0 {
            return bad("n_utts must be positive".into());
        }
        for (name, (lo, hi)) in [("transcript_len", self.transcript_len), ("anchor_len", self.anchor_len)] {
            if lo == 0 || lo > hi {
                return bad(format!("{name} range [{lo}, {hi}] is empty or inverted"));
            }
        }
        if self.body_len_per_grapheme == 0 {
            return bad("body_len_per_grapheme must be positive".into());
        }
        if !(self.noise_scale > 0.0 && self.noise_scale.is_finite()) {
            return bad(format!("noise_scale {} must be positive", self.noise_scale));
        }
        if self.n_letters == 0 || self.n_letters > 26 {
            return bad(format!("n_letters {} outside 1..=26", self.n_letters));
        }
        Ok(())
    }

    /// The grapheme inventory: `n_letters` lowercase letters plus space.
    pub fn graphemes(&self) -> Vec<char> {
        let mut g: Vec<char> = (0..self.n_letters)
            .map(|i| (b'a' + i as u8) as char)
            .collect();
        g.push(' ');
        g
    }
}

/// Synthetic stand-in for the speaker characteristics acoustic features
/// carry: an additive bias plus the shared per-grapheme templates.
#[derive(Debug, Clone)]
pub struct SpeakerProfile {
    pub id: usize,
    pub bias: Vec<f64>,
    /// Emission template per grapheme, indexed like `ToyCorpusConfig::graphemes`.
    pub templates: Vec<Vec<f64>>,
    pub noise_scale: f64,
}

/// Draws speaker profiles for a config. Bias vectors are re-drawn until
/// every pair differs by at least `4 * noise_scale` in some component.
pub fn speaker_profiles(cfg: &ToyCorpusConfig, seed: u64) -> Result<Vec<SpeakerProfile>, CorpusError> {
    cfg.validate()?;
    let mut rng = seeding::rng(seeding::derive(seed, 0xb1a5));

    // Shared templates, centered per component so no grapheme sequence can
    // shift the body mean systematically. Templates are the dominant
    // signal; speaker biases sit below them so grapheme identity stays
    // decodable without knowing the speaker.
    let n_graphemes = cfg.graphemes().len();
    let mut templates = vec![vec![0.0f64; cfg.feat_dim]; n_graphemes];
    for t in templates.iter_mut() {
        for v in t.iter_mut() {
            *v = rng.gen_range(-1.2..1.2);
        }
    }
    for k in 0..cfg.feat_dim {
        let mean: f64 = templates.iter().map(|t| t[k]).sum::<f64>() / n_graphemes as f64;
        for t in templates.iter_mut() {
            t[k] = round_f32(t[k] - mean);
        }
    }

    let separation = 4.0 * cfg.noise_scale;
    let mut biases: Vec<Vec<f64>> = Vec::with_capacity(cfg.speakers);
    while biases.len() < cfg.speakers {
        let candidate: Vec<f64> =
            (0..cfg.feat_dim).map(|_| round_f32(rng.gen_range(-0.55..0.55))).collect();
        let separable = biases.iter().all(|other| {
            candidate
                .iter()
                .zip(other)
                .any(|(a, b)| (a - b).abs() >= separation)
        });
        if separable {
            biases.push(candidate);
        }
    }

    Ok(biases
        .into_iter()
        .enumerate()
        .map(|(id, bias)| SpeakerProfile {
            id,
            bias,
            templates: templates.clone(),
            noise_scale: cfg.noise_scale,
        })
        .collect())
}

fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

fn random_transcript(rng: &mut impl Rng, cfg: &ToyCorpusConfig, len: usize) -> String {
    let mut s = String::with_capacity(len);
    while s.len() < len {
        let at_edge = s.is_empty() || s.ends_with(' ') || s.len() + 1 == len;
        if !at_edge && rng.gen_bool(0.22) {
            s.push(' ');
        } else {
            s.push((b'a' + rng.gen_range(0..cfg.n_letters) as u8) as char);
        }
    }
    s
}

/// Generates a corpus as a pure function of `(config, seed)`.
pub fn gen_toy_corpus(cfg: &ToyCorpusConfig, seed: u64) -> Result<Corpus, CorpusError> {
    cfg.validate()?;
    let profiles = speaker_profiles(cfg, seed)?;
    let grapheme_index = |ch: char| -> usize {
        if ch == ' ' {
            cfg.n_letters
        } else {
            (ch as u8 - b'a') as usize
        }
    };

    let mut utterances = Vec::with_capacity(cfg.n_utts);
    for i in 0..cfg.n_utts {
        let mut rng = seeding::rng(seeding::derive(seed, i as u64));
        let noise = Normal::new(0.0, cfg.noise_scale).expect("validated scale");
        let profile = &profiles[rng.gen_range(0..cfg.speakers)];

        let anchor_frames = rng.gen_range(cfg.anchor_len.0..=cfg.anchor_len.1);
        let mut anchor = Vec::with_capacity(anchor_frames * cfg.feat_dim);
        for _ in 0..anchor_frames {
            for k in 0..cfg.feat_dim {
                anchor.push(round_f32(profile.bias[k] + noise.sample(&mut rng)));
            }
        }

        let len = rng.gen_range(cfg.transcript_len.0..=cfg.transcript_len.1);
        let transcript = random_transcript(&mut rng, cfg, len);
        let mut body = Vec::with_capacity(transcript.len() * cfg.body_len_per_grapheme * cfg.feat_dim);
        for ch in transcript.chars() {
            let template = &profile.templates[grapheme_index(ch)];
            for _ in 0..cfg.body_len_per_grapheme {
                for k in 0..cfg.feat_dim {
                    body.push(round_f32(template[k] + profile.bias[k] + noise.sample(&mut rng)));
                }
            }
        }

        utterances.push(AnchoredUtterance::new(
            format!("s{:02}-u{:05}", profile.id, i),
            FeatureSequence::new(cfg.feat_dim, anchor)?,
            FeatureSequence::new(cfg.feat_dim, body)?,
            transcript,
            None,
        )?);
    }
    Ok(Corpus::new(utterances))
}

/// Speaker id parsed back out of a generated utterance id.
pub fn speaker_of(utt: &AnchoredUtterance) -> Option<usize> {
    utt.id.strip_prefix('s')?.split('-').next()?.parse().ok()
}
