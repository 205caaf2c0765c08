//! The partial-label protocol: the same users' histories serve train and
//! test, with disjoint observed/unknown label sets. Sweeps the observed
//! ratio to show how more supervision helps.
//!
//!     cargo run --release -p etna --example partial_labels

use etna::corpus::{make_partial_masks, synth_corpus};
use etna::model::{ModelConfig, Variant};
use etna::trainkit::{run_partial, run_partial_sweep, TrainConfig};

fn main() -> etna::Result<()> {
    let (corpus, _) = synth_corpus(3_000, 64, 8.0, 0.7, 5)?;
    let mut model = ModelConfig::standard(corpus.num_companies, Variant::Etna);
    model.k = 24;
    model.d = 24;
    let train = TrainConfig { max_epochs: 30, patience: 5, seed: 5, ..TrainConfig::default() };

    // Single mask at 50% observed.
    let mask = make_partial_masks(&corpus, 0.5, 1, 5)?.remove(0);
    println!(
        "50% mask: {} of {} labels observed",
        mask.observed_count(),
        corpus.num_users() * 3
    );
    let (_, record) = run_partial(&corpus, &mask, &model, &train)?;
    println!(
        "etna at 50% observed: HL {:.4}, macF1 {:.4}, wF1 {:.4} over {} users\n",
        record.test_result.hamming_loss,
        record.test_result.macro_metrics.f1,
        record.test_result.weighted_metrics.f1,
        record.test_result.num_evaluated
    );

    // Ratio sweep, 2 masks per ratio.
    let table = run_partial_sweep(&corpus, &[0.1, 0.3, 0.5, 0.7, 0.9], 2, &model, &train)?;
    println!("ratio  HL(mean)  wF1(mean)  wF1(std)");
    for row in &table.rows {
        println!(
            "{:>5.1}  {:>8.4}  {:>9.4}  {:>8.4}",
            row.ratio, row.mean.hamming_loss, row.mean.weighted_f1, row.std.weighted_f1
        );
    }
    Ok(())
}
