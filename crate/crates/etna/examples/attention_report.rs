//! Train a small attention model and inspect which companies each task
//! attends to. On planted data the top-scoring companies should be the
//! ones whose group encodes that task's classes.
//!
//!     cargo run --release -p etna --example attention_report

use etna::cli::build_attention_report;
use etna::corpus::{make_new_user_split, synth_corpus};
use etna::model::{ModelConfig, Variant};
use etna::trainkit::{run_new_user, TrainConfig};

fn main() -> etna::Result<()> {
    // Strong signal so the attention structure is unambiguous: companies
    // 0..8 cycle through the (task, class) groups, so e.g. companies with
    // id % 8 in {0, 1} carry gender.
    let (corpus, spec) = synth_corpus(3_000, 48, 8.0, 0.9, 13)?;
    let split = make_new_user_split(&corpus, 13)?;
    let mut model = ModelConfig::standard(corpus.num_companies, Variant::Etna);
    model.k = 24;
    model.d = 24;
    let train = TrainConfig { max_epochs: 30, patience: 6, seed: 13, ..TrainConfig::default() };

    let (store, record) = run_new_user(&corpus, &split, &model, &train)?;
    println!(
        "trained etna: test wF1 {:.4}\n",
        record.test_result.weighted_metrics.f1
    );

    let report = build_attention_report(&store, &model, &corpus, 8)?;
    for (task_idx, task) in report.tasks.iter().enumerate() {
        let group_companies: Vec<&Vec<usize>> = spec.groups[task_idx].iter().collect();
        println!("task {} (its groups: {:?})", task.task, group_companies);
        println!("  top companies by attention score:");
        for e in &task.entries {
            println!(
                "    company {:>3} ({}) score {:>9.6} mean weight {:.6}",
                e.company_id, e.category, e.score, e.mean_weight
            );
        }
    }
    Ok(())
}
