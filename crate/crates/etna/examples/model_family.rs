//! Train the whole model family plus both baselines on one corpus and
//! print a comparison table.
//!
//!     cargo run --release -p etna --example model_family

use etna::baselines::{evaluate_baseline, fit_pop, fit_svd, BaselineModel};
use etna::corpus::{make_new_user_split, resolve_ids, synth_corpus, LabelMask};
use etna::model::{ModelConfig, Variant};
use etna::trainkit::{run_new_user, TrainConfig};

fn main() -> etna::Result<()> {
    let (corpus, _) = synth_corpus(5_000, 100, 8.0, 0.7, 3)?;
    let split = make_new_user_split(&corpus, 3)?;
    let train_idx = resolve_ids(&corpus, &split.train_ids)?;
    let test_idx = resolve_ids(&corpus, &split.test_ids)?;

    println!("model    HL      macF1   wF1");

    let reference = ModelConfig::standard(corpus.num_companies, Variant::Etna);
    let class_counts = reference.class_counts();
    let task_names = reference.task_names();
    let all_observed = LabelMask::all_observed(corpus.num_users()).observed;
    let all_unknown = LabelMask::all_unknown(corpus.num_users()).observed;

    let pop = BaselineModel::Pop(fit_pop(&corpus, &train_idx, &all_observed, &class_counts)?);
    let r = evaluate_baseline(&pop, &corpus, &test_idx, &all_unknown, &class_counts, &task_names)?;
    println!("pop      {:.4}  {:.4}  {:.4}", r.hamming_loss, r.macro_metrics.f1, r.weighted_metrics.f1);

    let svd = BaselineModel::Svd(fit_svd(
        &corpus,
        &train_idx,
        &all_observed,
        &class_counts,
        &task_names,
        64,
        7,
        3,
    )?);
    let r = evaluate_baseline(&svd, &corpus, &test_idx, &all_unknown, &class_counts, &task_names)?;
    println!("svd      {:.4}  {:.4}  {:.4}", r.hamming_loss, r.macro_metrics.f1, r.weighted_metrics.f1);

    for variant in Variant::ALL {
        let mut model = ModelConfig::standard(corpus.num_companies, variant);
        model.k = 32;
        model.d = 32;
        let train =
            TrainConfig { max_epochs: 30, patience: 6, seed: 3, ..TrainConfig::default() };
        let (_, record) = run_new_user(&corpus, &split, &model, &train)?;
        let r = &record.test_result;
        println!(
            "{:<8} {:.4}  {:.4}  {:.4}",
            variant.name(),
            r.hamming_loss,
            r.macro_metrics.f1,
            r.weighted_metrics.f1
        );
    }
    Ok(())
}
