//! The `etna` binary's subcommands: data prep (`synth`, `split`), training
//! and evaluation (`train`, `eval`, `sweep`), gradient checking
//! (`gradcheck`), and attention export (`explain`). Everything here is a
//! thin orchestration layer over the library; each subcommand writes its
//! artifacts under `--out` and is bit-reproducible given identical flags
//! and seed (wall-clock fields live only in `record.json`).
//!
//! Exit codes: 0 success; 2 usage problems (bad flags, missing files);
//! 1 anything else, including a failed gradient check.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::baselines::{
    evaluate_baseline, fit_pop, fit_svd, load_baseline, save_baseline, BaselineModel,
};
use crate::corpus::{
    load_corpus, make_new_user_split, make_partial_masks, resolve_ids, synth_corpus,
    write_corpus_csvs, LabelMask, SplitSpec, TransactionCorpus,
};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalResult, Prf};
use crate::model::{
    attention_scores, forward_user, predict, toy_grad_check, ModelConfig, Variant,
};
use crate::numerics::ParamStore;
use crate::trainkit::{
    new_user_setup, partial_setup, run_partial_sweep, train_with_setup, TrainConfig,
};

#[derive(Parser, Debug)]
#[command(
    name = "etna",
    version,
    about = "Multi-task demographic prediction from transaction histories"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate partial-label masks or a new-user split for a corpus
    Split(SplitArgs),
    /// Generate a planted-signal synthetic corpus with its generative spec
    Synth(SynthArgs),
    /// Train a model or fit a baseline, then evaluate it
    Train(TrainArgs),
    /// Evaluate an existing checkpoint
    Eval(EvalArgs),
    /// Observed-ratio sweep with multi-split averaging
    Sweep(SweepArgs),
    /// Export per-company attention scores and the heatmap matrix
    Explain(ExplainArgs),
    /// Finite-difference gradient check on a toy instance
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Headerless CSV: user_id,company_id,amount
    #[arg(long)]
    transactions: PathBuf,
    /// Headerless CSV: user_id,gender,age,marital
    #[arg(long)]
    labels: PathBuf,
    /// Headerless CSV: company_id,category
    #[arg(long)]
    categories: Option<PathBuf>,
}

impl DataArgs {
    fn load(&self) -> Result<TransactionCorpus> {
        load_corpus(&self.transactions, &self.labels, self.categories.as_deref())
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Mode {
    Partial,
    Newuser,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum VariantArg {
    Pop,
    Svd,
    Jne,
    Sep,
    Etn,
    Etna,
}

impl VariantArg {
    fn neural(self) -> Option<Variant> {
        match self {
            VariantArg::Jne => Some(Variant::Jne),
            VariantArg::Sep => Some(Variant::Sep),
            VariantArg::Etn => Some(Variant::Etn),
            VariantArg::Etna => Some(Variant::Etna),
            VariantArg::Pop | VariantArg::Svd => None,
        }
    }
}

#[derive(Args, Debug)]
struct SplitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum)]
    mode: Mode,
    /// Observed ratio for partial masks
    #[arg(long)]
    ratio: Option<f64>,
    /// Number of partial masks to generate
    #[arg(long, default_value_t = 1)]
    splits: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    users: usize,
    #[arg(long)]
    companies: usize,
    #[arg(long, default_value_t = 8.0)]
    basket_mean: f64,
    /// Fraction of transactions drawn from the attribute-affine groups
    #[arg(long, default_value_t = 0.7)]
    signal: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum)]
    variant: VariantArg,
    #[arg(long, value_enum)]
    mode: Mode,
    /// Partial mode: observed ratio used to generate the mask
    #[arg(long)]
    ratio: Option<f64>,
    /// Partial mode: load a mask JSON instead of generating one
    #[arg(long)]
    mask: Option<PathBuf>,
    /// New-user mode: load a split JSON instead of generating one
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON file overriding model/training defaults
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum)]
    mode: Mode,
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Ratio range as start:end:step, e.g. 0.1:0.9:0.1
    #[arg(long)]
    ratios: String,
    #[arg(long, default_value_t = 10)]
    splits: usize,
    #[arg(long, value_enum)]
    variant: VariantArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ExplainArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 20)]
    top_k: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, value_enum)]
    variant: VariantArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of random toy instances to check
    #[arg(long, default_value_t = 1)]
    instances: usize,
    /// Debug: deliberately corrupt one gradient to exercise the failure path
    #[arg(long, hide = true)]
    corrupt: bool,
}

/// Optional overrides applied on top of the standard model/training
/// defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigOverrides {
    k: Option<usize>,
    d: Option<usize>,
    lambda: Option<f64>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    max_epochs: Option<usize>,
    patience: Option<usize>,
    weight_decay: Option<f64>,
    holdout_fraction: Option<f64>,
    svd_rank: Option<usize>,
    svd_iters: Option<usize>,
}

impl ConfigOverrides {
    fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(ConfigOverrides::default()),
            Some(p) => {
                let json = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                Ok(serde_json::from_str(&json)?)
            }
        }
    }

    fn apply(&self, model: &mut ModelConfig, train: &mut TrainConfig) {
        if let Some(k) = self.k {
            model.k = k;
        }
        if let Some(d) = self.d {
            model.d = d;
        }
        if let Some(lambda) = self.lambda {
            model.lambda = lambda;
        }
        if let Some(v) = self.batch_size {
            train.batch_size = v;
        }
        if let Some(v) = self.learning_rate {
            train.learning_rate = v;
        }
        if let Some(v) = self.max_epochs {
            train.max_epochs = v;
        }
        if let Some(v) = self.patience {
            train.patience = v;
        }
        if let Some(v) = self.weight_decay {
            train.weight_decay = v;
            model.lambda = v;
        }
        if let Some(v) = self.holdout_fraction {
            train.holdout_fraction = v;
        }
    }
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

fn rounded_result(result: &EvalResult) -> EvalResult {
    let r = |p: &Prf| Prf {
        precision: round6(p.precision),
        recall: round6(p.recall),
        f1: round6(p.f1),
    };
    EvalResult {
        hamming_loss: round6(result.hamming_loss),
        macro_metrics: r(&result.macro_metrics),
        weighted_metrics: r(&result.weighted_metrics),
        num_evaluated: result.num_evaluated,
        confusion: result.confusion.clone(),
    }
}

fn write_metrics(result: &EvalResult, task_names: &[String], out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let rounded = rounded_result(result);
    rounded.save_json(&out.join("metrics.json"))?;
    rounded.write_confusion_csv(task_names, &out.join("confusion.csv"))
}

fn parse_ratio_range(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(Error::InvalidArgument(format!(
            "ratio range must be start:end:step, got {spec:?}"
        )));
    }
    let nums: Vec<f64> = parts
        .iter()
        .map(|p| {
            p.parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("bad number {p:?} in {spec:?}")))
        })
        .collect::<Result<_>>()?;
    let (start, end, step) = (nums[0], nums[1], nums[2]);
    if !(start > 0.0 && end < 1.0 && start <= end && step > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need 0 < start <= end < 1 and step > 0, got {spec:?}"
        )));
    }
    let count = ((end - start) / step).round() as usize;
    let mut ratios = Vec::with_capacity(count + 1);
    for i in 0..=count {
        let r = start + i as f64 * step;
        if r < 1.0 {
            ratios.push(round6(r));
        }
    }
    Ok(ratios)
}

/// Per-task attention export: top-k companies by score plus the mean
/// per-user normalized weight of each company.
#[derive(Debug, Clone, Serialize)]
pub struct AttentionEntry {
    pub company_id: usize,
    pub category: String,
    pub score: f64,
    /// Mean of the company's softmax weight over users whose history
    /// contains it; 0 when no user does.
    pub mean_weight: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TaskAttention {
    pub task: String,
    /// True when every company scores identically (e.g. frozen attention).
    pub degenerate: bool,
    pub entries: Vec<AttentionEntry>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AttentionReport {
    pub top_k: usize,
    pub tasks: Vec<TaskAttention>,
}

pub fn build_attention_report(
    store: &ParamStore,
    config: &ModelConfig,
    corpus: &TransactionCorpus,
    top_k: usize,
) -> Result<AttentionReport> {
    let scores = attention_scores(store, config)?;
    let num_tasks = config.tasks.len();
    let histories = corpus.unique_histories();

    // Mean normalized weight per company: average alpha over the users
    // whose unique set contains the company.
    let mut weight_sum = vec![vec![0.0f64; config.num_companies]; num_tasks];
    let mut weight_count = vec![0usize; config.num_companies];
    for ids in &histories {
        let trace = forward_user(store, config, ids)?;
        for (i, &company) in ids.iter().enumerate() {
            weight_count[company] += 1;
            for (task_idx, task) in trace.tasks.iter().enumerate() {
                weight_sum[task_idx][company] += task.alpha[i];
            }
        }
    }

    let mut tasks = Vec::with_capacity(num_tasks);
    for (task_idx, task) in config.tasks.iter().enumerate() {
        let row = scores.row(task_idx);
        let lo = row.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut order: Vec<usize> = (0..config.num_companies).collect();
        order.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b)));
        let entries = order
            .into_iter()
            .take(top_k)
            .map(|company| AttentionEntry {
                company_id: company,
                category: corpus.category(company).to_string(),
                score: round6(row[company]),
                mean_weight: round6(if weight_count[company] > 0 {
                    weight_sum[task_idx][company] / weight_count[company] as f64
                } else {
                    0.0
                }),
            })
            .collect();
        tasks.push(TaskAttention {
            task: task.name.clone(),
            degenerate: hi - lo < 1e-12,
            entries,
        });
    }
    Ok(AttentionReport { top_k, tasks })
}

fn write_attention_artifacts(
    report: &AttentionReport,
    store: &ParamStore,
    config: &ModelConfig,
    out: &Path,
) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let json_path = out.join("attention_report.json");
    let json = serde_json::to_string_pretty(report)?;
    fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;

    let mut topk = String::from("task,company_id,category,score,mean_weight\n");
    for task in &report.tasks {
        for e in &task.entries {
            topk.push_str(&format!(
                "{},{},{},{:.6},{:.6}\n",
                task.task, e.company_id, e.category, e.score, e.mean_weight
            ));
        }
    }
    let topk_path = out.join("attention_topk.csv");
    fs::write(&topk_path, topk).map_err(|e| Error::io(&topk_path, e))?;

    // Full heatmap matrix: rows = tasks, columns = company ids.
    let scores = attention_scores(store, config)?;
    let mut heatmap = String::from("task");
    for c in 0..config.num_companies {
        heatmap.push_str(&format!(",{c}"));
    }
    heatmap.push('\n');
    for (task_idx, task) in config.tasks.iter().enumerate() {
        heatmap.push_str(&task.name);
        for &v in scores.row(task_idx) {
            heatmap.push_str(&format!(",{:.6}", v));
        }
        heatmap.push('\n');
    }
    let heatmap_path = out.join("attention_heatmap.csv");
    fs::write(&heatmap_path, heatmap).map_err(|e| Error::io(&heatmap_path, e))
}

fn cmd_split(args: &SplitArgs) -> Result<()> {
    let corpus = args.data.load()?;
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    match args.mode {
        Mode::Partial => {
            let ratio = args.ratio.ok_or_else(|| {
                Error::InvalidArgument("--mode partial requires --ratio".into())
            })?;
            let masks = make_partial_masks(&corpus, ratio, args.splits, args.seed)?;
            for (i, mask) in masks.iter().enumerate() {
                mask.save(&args.out.join(format!("mask_{i:03}.json")))?;
            }
            println!("wrote {} masks to {}", masks.len(), args.out.display());
        }
        Mode::Newuser => {
            let split = make_new_user_split(&corpus, args.seed)?;
            split.save(&args.out.join("split.json"))?;
            println!(
                "wrote split.json ({}/{}/{} users) to {}",
                split.train_ids.len(),
                split.valid_ids.len(),
                split.test_ids.len(),
                args.out.display()
            );
        }
    }
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let (corpus, spec) =
        synth_corpus(args.users, args.companies, args.basket_mean, args.signal, args.seed)?;
    write_corpus_csvs(&corpus, &args.out)?;
    let spec_path = args.out.join("genspec.json");
    fs::write(&spec_path, spec.to_json()?).map_err(|e| Error::io(&spec_path, e))?;
    let transactions: usize = corpus.users.iter().map(|u| u.history.len()).sum();
    println!(
        "wrote {} users, {transactions} transactions, {} companies to {}",
        corpus.num_users(),
        corpus.num_companies,
        args.out.display()
    );
    Ok(())
}

/// The evaluation context shared by `train` and `eval`: which users are
/// scored and under which mask.
enum EvalPlan {
    Partial { mask: LabelMask },
    NewUser { split: SplitSpec },
}

impl EvalPlan {
    fn eval_view(&self, corpus: &TransactionCorpus) -> Result<(Vec<usize>, Vec<Vec<bool>>)> {
        match self {
            EvalPlan::Partial { mask } => {
                let idx: Vec<usize> = (0..corpus.num_users())
                    .filter(|&i| mask.observed[i].iter().any(|&o| !o))
                    .collect();
                Ok((idx, mask.observed.clone()))
            }
            EvalPlan::NewUser { split } => {
                let idx = resolve_ids(corpus, &split.test_ids)?;
                Ok((idx, LabelMask::all_unknown(corpus.num_users()).observed))
            }
        }
    }

    /// Which users and labels a baseline fit may see.
    fn fit_view(&self, corpus: &TransactionCorpus) -> Result<(Vec<usize>, Vec<Vec<bool>>)> {
        match self {
            EvalPlan::Partial { mask } => {
                Ok(((0..corpus.num_users()).collect(), mask.observed.clone()))
            }
            EvalPlan::NewUser { split } => {
                let idx = resolve_ids(corpus, &split.train_ids)?;
                Ok((idx, LabelMask::all_observed(corpus.num_users()).observed))
            }
        }
    }
}

fn plan_for_train(args: &TrainArgs, corpus: &TransactionCorpus) -> Result<EvalPlan> {
    match args.mode {
        Mode::Partial => {
            let mask = match (&args.mask, args.ratio) {
                (Some(path), _) => LabelMask::load(path)?,
                (None, Some(ratio)) => make_partial_masks(corpus, ratio, 1, args.seed)?.remove(0),
                (None, None) => {
                    return Err(Error::InvalidArgument(
                        "--mode partial needs --ratio or --mask".into(),
                    ))
                }
            };
            Ok(EvalPlan::Partial { mask })
        }
        Mode::Newuser => {
            let split = match &args.split {
                Some(path) => SplitSpec::load(path)?,
                None => make_new_user_split(corpus, args.seed)?,
            };
            Ok(EvalPlan::NewUser { split })
        }
    }
}

fn fit_and_eval_baseline(
    which: VariantArg,
    corpus: &TransactionCorpus,
    plan: &EvalPlan,
    overrides: &ConfigOverrides,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let config = ModelConfig::standard(corpus.num_companies, Variant::Etna);
    let class_counts = config.class_counts();
    let task_names = config.task_names();
    let (fit_idx, fit_observed) = plan.fit_view(corpus)?;
    let model = match which {
        VariantArg::Pop => {
            BaselineModel::Pop(fit_pop(corpus, &fit_idx, &fit_observed, &class_counts)?)
        }
        VariantArg::Svd => {
            let rank =
                overrides.svd_rank.unwrap_or(100).min(fit_idx.len()).min(corpus.num_companies);
            let iters = overrides.svd_iters.unwrap_or(7);
            BaselineModel::Svd(fit_svd(
                corpus,
                &fit_idx,
                &fit_observed,
                &class_counts,
                &task_names,
                rank,
                iters,
                seed,
            )?)
        }
        _ => unreachable!("neural variants handled elsewhere"),
    };
    let (eval_idx, eval_observed) = plan.eval_view(corpus)?;
    let result =
        evaluate_baseline(&model, corpus, &eval_idx, &eval_observed, &class_counts, &task_names)?;
    save_baseline(&model, &class_counts, &task_names, &out.join("checkpoint"))?;
    write_metrics(&result, &task_names, out)?;
    println!(
        "{} test: HL {:.6}, macF1 {:.6}, wF1 {:.6}",
        if which == VariantArg::Pop { "pop" } else { "svd" },
        result.hamming_loss,
        result.macro_metrics.f1,
        result.weighted_metrics.f1
    );
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let corpus = args.data.load()?;
    let overrides = ConfigOverrides::load(args.config.as_deref())?;
    let plan = plan_for_train(args, &corpus)?;
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    match &plan {
        EvalPlan::Partial { mask } => mask.save(&args.out.join("mask.json"))?,
        EvalPlan::NewUser { split } => split.save(&args.out.join("split.json"))?,
    }

    let Some(variant) = args.variant.neural() else {
        return fit_and_eval_baseline(args.variant, &corpus, &plan, &overrides, args.seed, &args.out);
    };

    let mut model_config = ModelConfig::standard(corpus.num_companies, variant);
    let mut train_config = TrainConfig { seed: args.seed, ..TrainConfig::default() };
    overrides.apply(&mut model_config, &mut train_config);

    let setup = match &plan {
        EvalPlan::Partial { mask } => partial_setup(&corpus, mask, &train_config)?,
        EvalPlan::NewUser { split } => new_user_setup(&corpus, split)?,
    };
    let (store, record) = train_with_setup(&corpus, &setup, &model_config, &train_config)?;

    let checkpoint = args.out.join("checkpoint");
    store.save(&checkpoint)?;
    model_config.save(&checkpoint.join("config.json"))?;
    write_metrics(&record.test_result, &model_config.task_names(), &args.out)?;
    let record_path = args.out.join("record.json");
    let json = serde_json::to_string_pretty(&record)?;
    fs::write(&record_path, json).map_err(|e| Error::io(&record_path, e))?;

    println!(
        "{} trained {} epochs (best {}), test: HL {:.6}, macF1 {:.6}, wF1 {:.6}",
        variant.name(),
        record.epochs.len(),
        record.best_epoch,
        record.test_result.hamming_loss,
        record.test_result.macro_metrics.f1,
        record.test_result.weighted_metrics.f1
    );
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let corpus = args.data.load()?;
    let plan = match args.mode {
        Mode::Partial => {
            let path = args
                .mask
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("--mode partial requires --mask".into()))?;
            EvalPlan::Partial { mask: LabelMask::load(path)? }
        }
        Mode::Newuser => {
            let path = args
                .split
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("--mode newuser requires --split".into()))?;
            EvalPlan::NewUser { split: SplitSpec::load(path)? }
        }
    };
    let (eval_idx, eval_observed) = plan.eval_view(&corpus)?;

    let (result, task_names) = if args.checkpoint.join("baseline-config.json").exists() {
        let (model, task_names, class_counts) = load_baseline(&args.checkpoint)?;
        let result = evaluate_baseline(
            &model,
            &corpus,
            &eval_idx,
            &eval_observed,
            &class_counts,
            &task_names,
        )?;
        (result, task_names)
    } else {
        let config = ModelConfig::load(&args.checkpoint.join("config.json"))?;
        let store = ParamStore::load(&args.checkpoint)?;
        let histories = corpus.unique_histories();
        let ids: Vec<String> =
            eval_idx.iter().map(|&i| corpus.users[i].user_id.clone()).collect();
        let hist: Vec<Vec<usize>> = eval_idx.iter().map(|&i| histories[i].clone()).collect();
        let preds = predict(&store, &config, &ids, &hist)?;
        let truths: Vec<Vec<usize>> =
            eval_idx.iter().map(|&i| corpus.users[i].labels.as_array().to_vec()).collect();
        let mask_rows: Vec<Vec<bool>> =
            eval_idx.iter().map(|&i| eval_observed[i].clone()).collect();
        let result = evaluate(&preds.labels, &truths, &mask_rows, &config.class_counts())?;
        (result, config.task_names())
    };

    write_metrics(&result, &task_names, &args.out)?;
    println!(
        "eval: HL {:.6}, macF1 {:.6}, wF1 {:.6} over {} users",
        result.hamming_loss,
        result.macro_metrics.f1,
        result.weighted_metrics.f1,
        result.num_evaluated
    );
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let corpus = args.data.load()?;
    let ratios = parse_ratio_range(&args.ratios)?;
    let variant = args.variant.neural().ok_or_else(|| {
        Error::InvalidArgument("sweep supports the neural variants (jne|sep|etn|etna)".into())
    })?;
    let overrides = ConfigOverrides::load(args.config.as_deref())?;
    let mut model_config = ModelConfig::standard(corpus.num_companies, variant);
    let mut train_config = TrainConfig { seed: args.seed, ..TrainConfig::default() };
    overrides.apply(&mut model_config, &mut train_config);

    let table = run_partial_sweep(&corpus, &ratios, args.splits, &model_config, &train_config)?;
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let csv_path = args.out.join("sweep.csv");
    fs::write(&csv_path, table.to_csv()).map_err(|e| Error::io(&csv_path, e))?;
    let json_path = args.out.join("sweep.json");
    let json = serde_json::to_string_pretty(&table)?;
    fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;
    println!("swept {} ratios x {} splits -> {}", ratios.len(), args.splits, args.out.display());
    Ok(())
}

fn cmd_explain(args: &ExplainArgs) -> Result<()> {
    let corpus = args.data.load()?;
    let config = ModelConfig::load(&args.checkpoint.join("config.json"))?;
    let store = ParamStore::load(&args.checkpoint)?;
    let report = build_attention_report(&store, &config, &corpus, args.top_k)?;
    write_attention_artifacts(&report, &store, &config, &args.out)?;
    for task in &report.tasks {
        if task.degenerate {
            eprintln!(
                "warning: attention for task {} is degenerate (all scores equal)",
                task.task
            );
        }
    }
    println!(
        "wrote attention report ({} tasks, top {}) to {}",
        report.tasks.len(),
        report.top_k,
        args.out.display()
    );
    Ok(())
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<bool> {
    let Some(variant) = args.variant.neural() else {
        return Err(Error::InvalidArgument(
            "gradcheck applies to the neural variants (jne|sep|etn|etna)".into(),
        ));
    };
    let mut all_passed = true;
    for instance in 0..args.instances.max(1) {
        let seed = args.seed + instance as u64;
        let report = toy_grad_check(variant, seed, args.corrupt)?;
        let status = if report.passed() { "pass" } else { "FAIL" };
        println!(
            "{} seed {seed}: max rel err {:.3e} (tolerance {:.0e}) ... {status}",
            variant.name(),
            report.max_rel_err,
            report.tolerance
        );
        if !report.passed() {
            all_passed = false;
            if let Some(worst) = report.worst() {
                println!(
                    "  worst parameter {} [{}]: analytic {:.6e}, numeric {:.6e}",
                    worst.name, worst.worst_index, worst.analytic, worst.numeric
                );
            }
        }
    }
    Ok(all_passed)
}

fn execute(cli: Cli) -> Result<i32> {
    match &cli.command {
        Command::Split(args) => cmd_split(args).map(|()| 0),
        Command::Synth(args) => cmd_synth(args).map(|()| 0),
        Command::Train(args) => cmd_train(args).map(|()| 0),
        Command::Eval(args) => cmd_eval(args).map(|()| 0),
        Command::Sweep(args) => cmd_sweep(args).map(|()| 0),
        Command::Explain(args) => cmd_explain(args).map(|()| 0),
        Command::Gradcheck(args) => cmd_gradcheck(args).map(|ok| if ok { 0 } else { 1 }),
    }
}

/// Entry point for the binary; returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Io { .. } | Error::InvalidArgument(_) => 2,
                _ => 1,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_range_layout() {
        let ratios = parse_ratio_range("0.1:0.9:0.1").unwrap();
        assert_eq!(ratios.len(), 9);
        assert!((ratios[0] - 0.1).abs() < 1e-9);
        assert!((ratios[8] - 0.9).abs() < 1e-9);
        assert!(parse_ratio_range("0:0.9:0.1").is_err());
        assert!(parse_ratio_range("0.5:0.4:0.1").is_err());
        assert!(parse_ratio_range("0.1-0.9-0.1").is_err());
    }

    #[test]
    fn rounding_is_fixed_six_decimals() {
        assert_eq!(round6(0.12345649), 0.123456);
        assert_eq!(round6(0.1234565), 0.123457); // half away from zero
        assert_eq!(round6(1.0), 1.0);
    }
}
