//! Generate a planted-signal corpus and sanity-check it against the exact
//! Bayes oracle that the emitted generative spec makes possible.
//!
//!     cargo run --release -p etna --example synthetic_data

use etna::corpus::{synth_corpus, CLASS_COUNTS, NUM_TASKS, TASK_NAMES};

fn main() -> etna::Result<()> {
    let (corpus, spec) = synth_corpus(5_000, 64, 8.0, 0.8, 7)?;

    let transactions: usize = corpus.users.iter().map(|u| u.history.len()).sum();
    println!(
        "corpus: {} users, {transactions} transactions, {} companies",
        corpus.num_users(),
        corpus.num_companies
    );

    // Empirical class priors.
    let n = corpus.num_users() as f64;
    for task in 0..NUM_TASKS {
        let mut counts = vec![0usize; CLASS_COUNTS[task]];
        for user in &corpus.users {
            counts[user.labels.get(task)] += 1;
        }
        let fractions: Vec<String> =
            counts.iter().map(|&c| format!("{:.3}", c as f64 / n)).collect();
        println!("  {:<8} class fractions: [{}]", TASK_NAMES[task], fractions.join(", "));
    }

    // The generative spec is enough to run the Bayes-optimal predictor.
    let mut correct = vec![0usize; NUM_TASKS];
    for user in &corpus.users {
        let bayes = spec.bayes_predict(&user.history);
        for task in 0..NUM_TASKS {
            if bayes.get(task) == user.labels.get(task) {
                correct[task] += 1;
            }
        }
    }
    println!("bayes-optimal per-attribute accuracy (upper bound for any model):");
    for task in 0..NUM_TASKS {
        println!("  {:<8} {:.4}", TASK_NAMES[task], correct[task] as f64 / n);
    }
    Ok(())
}
