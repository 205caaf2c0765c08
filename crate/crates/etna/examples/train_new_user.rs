//! The new-user protocol end to end on synthetic data: disjoint 8:1:1
//! split, attention model training with early stopping, and the
//! majority-class baseline for contrast.
//!
//!     cargo run --release -p etna --example train_new_user

use etna::baselines::{evaluate_baseline, fit_pop, BaselineModel};
use etna::corpus::{make_new_user_split, resolve_ids, synth_corpus, LabelMask};
use etna::model::{ModelConfig, Variant};
use etna::trainkit::{run_new_user, TrainConfig};

fn main() -> etna::Result<()> {
    let (corpus, _) = synth_corpus(4_000, 80, 8.0, 0.7, 11)?;
    let split = make_new_user_split(&corpus, 11)?;
    println!(
        "split: {} train / {} valid / {} test users",
        split.train_ids.len(),
        split.valid_ids.len(),
        split.test_ids.len()
    );

    let mut model = ModelConfig::standard(corpus.num_companies, Variant::Etna);
    model.k = 32;
    model.d = 32;
    let train = TrainConfig { max_epochs: 40, patience: 6, seed: 11, ..TrainConfig::default() };

    let (_, record) = run_new_user(&corpus, &split, &model, &train)?;
    println!(
        "etna: {} epochs (best {}), test HL {:.4}, macF1 {:.4}, wF1 {:.4}",
        record.epochs.len(),
        record.best_epoch,
        record.test_result.hamming_loss,
        record.test_result.macro_metrics.f1,
        record.test_result.weighted_metrics.f1
    );

    // POP fits on the train users and predicts constants.
    let train_idx = resolve_ids(&corpus, &split.train_ids)?;
    let test_idx = resolve_ids(&corpus, &split.test_ids)?;
    let observed = LabelMask::all_observed(corpus.num_users()).observed;
    let pop = BaselineModel::Pop(fit_pop(
        &corpus,
        &train_idx,
        &observed,
        &model.class_counts(),
    )?);
    let unknown = LabelMask::all_unknown(corpus.num_users()).observed;
    let pop_result = evaluate_baseline(
        &pop,
        &corpus,
        &test_idx,
        &unknown,
        &model.class_counts(),
        &model.task_names(),
    )?;
    println!(
        "pop:  test HL {:.4}, macF1 {:.4}, wF1 {:.4}",
        pop_result.hamming_loss,
        pop_result.macro_metrics.f1,
        pop_result.weighted_metrics.f1
    );
    Ok(())
}
