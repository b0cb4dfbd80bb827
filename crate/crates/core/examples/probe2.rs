// Scratch probe: full experiment grid with timing.
use anchored_asr::eval::wer;
use anchored_asr::experiment::{run_experiment, ExperimentConfig, TABLE_SYSTEMS};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(11);
    let cfg = ExperimentConfig::default();
    let t0 = Instant::now();
    let run = run_experiment(&cfg, seed, &TABLE_SYSTEMS).unwrap();
    println!("grid in {:?}", t0.elapsed());
    for s in &run.scores {
        println!(
            "{:42} normal {:.4} (S{} I{} D{}/{})  hard {:.4} (S{} I{} D{}/{})  best ep {}",
            format!("{}/{}", s.system.model_label(), s.system.training_set_label()),
            wer(&s.normal),
            s.normal.substitutions, s.normal.insertions, s.normal.deletions, s.normal.ref_len,
            wer(&s.hard),
            s.hard.substitutions, s.hard.insertions, s.hard.deletions, s.hard.ref_len,
            s.report.best_epoch,
        );
    }
}
