// Scratch tuning probe (not part of the deliverable test surface).
use anchored_asr::augment::{mix_corpus, MixSpec};
use anchored_asr::corpus::{gen_toy_corpus, Corpus, ToyCorpusConfig, Vocabulary};
use anchored_asr::experiment::harden;
use anchored_asr::model::{init_params, ModelConfig, Variant};
use anchored_asr::train::{fit, TrainConfig};
use std::time::Instant;

fn main() {
    let t0 = Instant::now();
    let args: Vec<String> = std::env::args().collect();
    let lr: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(0.004);
    let epochs: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(8);
    let corpus_cfg = ToyCorpusConfig {
        n_utts: 700,
        speakers: 8,
        n_letters: 6,
        transcript_len: (4, 9),
        body_len_per_grapheme: 4,
        noise_scale: 0.05,
        ..ToyCorpusConfig::default()
    };
    let corpus = gen_toy_corpus(&corpus_cfg, 1).unwrap();
    let mut utts = corpus.utterances;
    let test = Corpus::new(utts.split_off(560));
    let dev = Corpus::new(utts.split_off(500));
    let train = Corpus::new(utts);
    let vocab = Vocabulary::build(train.transcripts(), 1).unwrap();
    println!("vocab {} | prep {:?}", vocab.size(), t0.elapsed());

    let dev_hard = harden(&dev, (5, 15), 99).unwrap();
    let mut dev_mixed = dev.utterances[..30].to_vec();
    dev_mixed.extend(dev_hard.utterances[30..].iter().cloned());

    let test_hard = harden(&test, (5, 15), 123).unwrap();

    let model_cfg = ModelConfig::desk_scale(Variant::Baseline, vocab.size());
    let mut params = init_params(&model_cfg, 7).unwrap();
    let scale: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(1.0);
    if scale != 1.0 {
        let names: Vec<String> = params.names().map(String::from).collect();
        for name in names {
            for v in params.get_mut(&name).unwrap().data_mut() {
                *v *= scale;
            }
        }
    }
    let cfg = TrainConfig {
        learning_rate: lr,
        decay: 0.95,
        epochs,
        batch_size: 16,
        seed: 3,
        ..TrainConfig::default()
    };
    let t1 = Instant::now();
    let (params, report) = fit(&model_cfg, params, &vocab, &train.utterances, &cfg, &dev_mixed).unwrap();
    println!("baseline fit in {:?}", t1.elapsed());
    print!("{}", report.to_csv());

    // Score on clean and hard test sets.
    let t2 = Instant::now();
    for (name, set) in [("normal", &test), ("hard", &test_hard)] {
        let recs = anchored_asr::decode::decode_corpus(&model_cfg, &params, &vocab, set, 4).unwrap();
        let mut counts = anchored_asr::eval::ErrorCounts::default();
        for (u, r) in set.iter().zip(&recs) {
            counts.accumulate(&anchored_asr::eval::align_str(&u.transcript, &r.text));
        }
        println!("{name}: WER {:.4} (S{} I{} D{} / {})", anchored_asr::eval::wer(&counts),
            counts.substitutions, counts.insertions, counts.deletions, counts.ref_len);
        for (u, r) in set.iter().zip(&recs).take(8) {
            println!("  {:22} REF {:14} HYP {:14}", u.id, format!("{:?}", u.transcript), format!("{:?}", r.text));
        }
    }
    println!("decode in {:?}", t2.elapsed());
    let _ = mix_corpus(&train, &MixSpec::reference(), (5, 15), 5).unwrap();
    println!("total {:?}", t0.elapsed());
}
