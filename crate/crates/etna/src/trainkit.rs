//! Training loop and experiment protocols: seeded mini-batch Adam, early
//! stopping on validation weighted F1, the partial-label and new-user
//! settings, and observed-ratio sweeps with multi-split averaging.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{make_partial_masks, resolve_ids, LabelMask, SplitSpec, TransactionCorpus};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalResult};
use crate::model::{backward, forward, init_params, masked_loss, predict, ModelConfig};
use crate::numerics::{ParamStore, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Weight-decay coefficient applied per batch loss.
    pub weight_decay: f64,
    /// Fraction of observed labels held out as the early-stopping signal in
    /// the partial-label setting.
    pub holdout_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            learning_rate: 1e-3,
            max_epochs: 100,
            patience: 5,
            seed: 0,
            weight_decay: 1e-5,
            holdout_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.patience == 0 || self.max_epochs == 0 {
            return Err(Error::InvalidArgument(
                "batch_size, patience and max_epochs must be >= 1".into(),
            ));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// Mean per-user training loss over the epoch's batches.
    pub train_loss: f64,
    /// Early-stopping metric after the epoch.
    pub valid_weighted_f1: f64,
    /// Probability clamps hit during the epoch, reported, never silent.
    pub clamp_count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub epochs: Vec<EpochStats>,
    /// Epoch index whose validation metric was the running maximum; the
    /// returned parameters are from this epoch.
    pub best_epoch: usize,
    pub test_result: EvalResult,
    pub wall_clock_seconds: f64,
}

/// Index-level description of one experiment: which users to batch, which
/// labels the training loss may see, and which (user, attribute) pairs the
/// validation and test evaluations cover.
#[derive(Debug, Clone)]
pub struct TrainingSetup {
    pub train_idx: Vec<usize>,
    /// Full-corpus visibility of labels to the training loss.
    pub train_observed: Vec<Vec<bool>>,
    pub valid_idx: Vec<usize>,
    /// Mask for validation evaluation; false entries are evaluated.
    pub valid_observed: Vec<Vec<bool>>,
    pub test_idx: Vec<usize>,
    /// Mask for the final test evaluation; false entries are evaluated.
    pub test_observed: Vec<Vec<bool>>,
}

fn rows<T: Clone>(all: &[Vec<T>], idx: &[usize]) -> Vec<Vec<T>> {
    idx.iter().map(|&i| all[i].clone()).collect()
}

fn weighted_f1_of(
    store: &ParamStore,
    config: &ModelConfig,
    corpus: &TransactionCorpus,
    histories: &[Vec<usize>],
    labels: &[Vec<usize>],
    idx: &[usize],
    observed: &[Vec<bool>],
) -> Result<(f64, EvalResult)> {
    let ids: Vec<String> = idx.iter().map(|&i| corpus.users[i].user_id.clone()).collect();
    let hist = rows(histories, idx);
    let preds = predict(store, config, &ids, &hist)?;
    let truths = rows(labels, idx);
    let mask = rows(observed, idx);
    let result = evaluate(&preds.labels, &truths, &mask, &config.class_counts())?;
    Ok((result.weighted_metrics.f1, result))
}

/// Mini-batch Adam with per-epoch early stopping on validation weighted F1.
/// Batch order is a pure function of (seed, epoch); the returned parameters
/// are the snapshot from the best validation epoch.
pub fn train_with_setup(
    corpus: &TransactionCorpus,
    setup: &TrainingSetup,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
) -> Result<(ParamStore, ExperimentRecord)> {
    model_config.validate()?;
    train_config.validate()?;
    if setup.train_idx.is_empty() {
        return Err(Error::InvalidArgument("no training users".into()));
    }
    let started = Instant::now();
    let histories = corpus.unique_histories();
    let labels = corpus.label_matrix();
    let lambda = train_config.weight_decay;

    let mut store = init_params(model_config, train_config.seed)?;
    let mut epochs: Vec<EpochStats> = Vec::new();
    let mut best_epoch = 0usize;
    let mut best_f1 = f64::NEG_INFINITY;
    let mut best_params = store.values_snapshot();
    let mut stale = 0usize;

    for epoch in 0..train_config.max_epochs {
        let mut order = setup.train_idx.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(train_config.seed);
        rng.set_stream(epoch as u64 + 1);
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        let mut clamp_count = 0usize;
        for (batch_no, batch) in order.chunks(train_config.batch_size).enumerate() {
            let batch_hist = rows(&histories, batch);
            let batch_labels = rows(&labels, batch);
            let batch_observed = rows(&setup.train_observed, batch);

            store.zero_grads();
            let trace = forward(&store, model_config, &batch_hist)?;
            let loss = masked_loss(&trace, &batch_labels, &batch_observed, lambda, &store);
            if !loss.value.is_finite() {
                return Err(Error::Diverged { epoch, batch: batch_no, loss: loss.value });
            }
            epoch_loss += loss.value;
            clamp_count += loss.clamp_count;
            backward(&trace, &batch_labels, &batch_observed, model_config, &mut store, lambda)?;
            store.adam_step(train_config.learning_rate, ADAM_BETA1, ADAM_BETA2, ADAM_EPS);
        }

        let (valid_f1, _) = weighted_f1_of(
            &store,
            model_config,
            corpus,
            &histories,
            &labels,
            &setup.valid_idx,
            &setup.valid_observed,
        )?;
        epochs.push(EpochStats {
            train_loss: epoch_loss / setup.train_idx.len() as f64,
            valid_weighted_f1: valid_f1,
            clamp_count,
        });

        if valid_f1 > best_f1 {
            best_f1 = valid_f1;
            best_epoch = epoch;
            best_params = store.values_snapshot();
            stale = 0;
        } else {
            stale += 1;
            if stale >= train_config.patience {
                break;
            }
        }
    }

    store.restore_values(&best_params);
    let (_, test_result) = weighted_f1_of(
        &store,
        model_config,
        corpus,
        &histories,
        &labels,
        &setup.test_idx,
        &setup.test_observed,
    )?;

    let record = ExperimentRecord {
        model_config: model_config.clone(),
        train_config: train_config.clone(),
        epochs,
        best_epoch,
        test_result,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    Ok((store, record))
}

/// New-user protocol: train on the split's train users with every label
/// observed, early-stop on the validation users, report test-user metrics.
/// Train and test users are disjoint by the split's construction.
pub fn run_new_user(
    corpus: &TransactionCorpus,
    split: &SplitSpec,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
) -> Result<(ParamStore, ExperimentRecord)> {
    let setup = new_user_setup(corpus, split)?;
    train_with_setup(corpus, &setup, model_config, train_config)
}

pub fn new_user_setup(corpus: &TransactionCorpus, split: &SplitSpec) -> Result<TrainingSetup> {
    let train_idx = resolve_ids(corpus, &split.train_ids)?;
    let valid_idx = resolve_ids(corpus, &split.valid_ids)?;
    let test_idx = resolve_ids(corpus, &split.test_ids)?;
    for (name, eval_idx) in [("valid", &valid_idx), ("test", &test_idx)] {
        for i in eval_idx {
            if train_idx.contains(i) {
                return Err(Error::InvalidArgument(format!(
                    "{name} user {:?} also appears in the training split",
                    corpus.users[*i].user_id
                )));
            }
        }
    }
    let n = corpus.num_users();
    Ok(TrainingSetup {
        train_idx,
        train_observed: LabelMask::all_observed(n).observed,
        valid_idx,
        valid_observed: LabelMask::all_unknown(n).observed,
        test_idx,
        test_observed: LabelMask::all_unknown(n).observed,
    })
}

/// Partial-label protocol: every user's history is input; the training loss
/// sees the mask's observed labels minus a held-out fraction, the held-out
/// observed labels drive early stopping, and the mask's unknown labels are
/// the test set. Unknown labels are never touched before the final test
/// evaluation.
pub fn partial_setup(
    corpus: &TransactionCorpus,
    mask: &LabelMask,
    train_config: &TrainConfig,
) -> Result<TrainingSetup> {
    let n = corpus.num_users();
    if mask.num_users() != n {
        return Err(Error::Shape(format!(
            "mask covers {} users, corpus has {n}",
            mask.num_users()
        )));
    }
    let num_tasks = corpus.users[0].labels.as_array().len();

    // Held-out observed pairs, a pure function of the training seed.
    let mut rng = ChaCha8Rng::seed_from_u64(train_config.seed);
    rng.set_stream(u64::MAX); // distinct stream from any epoch shuffle
    let mut holdout = vec![vec![false; num_tasks]; n];
    let mut any_holdout = false;
    let mut first_observed: Option<(usize, usize)> = None;
    for (i, row) in mask.observed.iter().enumerate() {
        for (m, &obs) in row.iter().enumerate() {
            let draw: f64 = rng.random();
            if !obs {
                continue;
            }
            first_observed.get_or_insert((i, m));
            if draw < train_config.holdout_fraction {
                holdout[i][m] = true;
                any_holdout = true;
            }
        }
    }
    if !any_holdout {
        // Degenerate small-corpus case: pin one observed pair for the
        // early-stopping signal.
        let (i, m) = first_observed.ok_or_else(|| {
            Error::InvalidArgument("mask has no observed labels to train on".into())
        })?;
        holdout[i][m] = true;
    }

    let train_observed: Vec<Vec<bool>> = (0..n)
        .map(|i| (0..num_tasks).map(|m| mask.observed[i][m] && !holdout[i][m]).collect())
        .collect();
    // Validation evaluates exactly the held-out observed pairs.
    let valid_observed: Vec<Vec<bool>> = (0..n)
        .map(|i| (0..num_tasks).map(|m| !(mask.observed[i][m] && holdout[i][m])).collect())
        .collect();
    let valid_idx: Vec<usize> =
        (0..n).filter(|&i| valid_observed[i].iter().any(|&o| !o)).collect();
    let train_idx: Vec<usize> =
        (0..n).filter(|&i| train_observed[i].iter().any(|&o| o)).collect();
    // Test evaluates the mask's unknown labels.
    let test_idx: Vec<usize> =
        (0..n).filter(|&i| mask.observed[i].iter().any(|&o| !o)).collect();
    if test_idx.is_empty() {
        return Err(Error::EmptyEvaluation);
    }

    Ok(TrainingSetup {
        train_idx,
        train_observed,
        valid_idx,
        valid_observed,
        test_idx,
        test_observed: mask.observed.clone(),
    })
}

pub fn run_partial(
    corpus: &TransactionCorpus,
    mask: &LabelMask,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
) -> Result<(ParamStore, ExperimentRecord)> {
    let setup = partial_setup(corpus, mask, train_config)?;
    train_with_setup(corpus, &setup, model_config, train_config)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub hamming_loss: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
}

impl MetricSummary {
    pub fn from_eval(result: &EvalResult) -> Self {
        MetricSummary {
            hamming_loss: result.hamming_loss,
            macro_precision: result.macro_metrics.precision,
            macro_recall: result.macro_metrics.recall,
            macro_f1: result.macro_metrics.f1,
            weighted_precision: result.weighted_metrics.precision,
            weighted_recall: result.weighted_metrics.recall,
            weighted_f1: result.weighted_metrics.f1,
        }
    }

    fn fields(&self) -> [f64; 7] {
        [
            self.hamming_loss,
            self.macro_precision,
            self.macro_recall,
            self.macro_f1,
            self.weighted_precision,
            self.weighted_recall,
            self.weighted_f1,
        ]
    }

    fn from_fields(f: [f64; 7]) -> Self {
        MetricSummary {
            hamming_loss: f[0],
            macro_precision: f[1],
            macro_recall: f[2],
            macro_f1: f[3],
            weighted_precision: f[4],
            weighted_recall: f[5],
            weighted_f1: f[6],
        }
    }
}

/// Mean and population standard deviation over splits.
pub fn summarize(results: &[EvalResult]) -> (MetricSummary, MetricSummary) {
    let n = results.len() as f64;
    let mut mean = [0.0f64; 7];
    for r in results {
        for (m, v) in mean.iter_mut().zip(MetricSummary::from_eval(r).fields()) {
            *m += v / n;
        }
    }
    let mut var = [0.0f64; 7];
    for r in results {
        for ((s, v), m) in var.iter_mut().zip(MetricSummary::from_eval(r).fields()).zip(mean) {
            *s += (v - m).powi(2) / n;
        }
    }
    let std = var.map(f64::sqrt);
    (MetricSummary::from_fields(mean), MetricSummary::from_fields(std))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub ratio: f64,
    pub num_splits: usize,
    pub mean: MetricSummary,
    pub std: MetricSummary,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

/// Observed-ratio sweep: for each ratio, trains on `num_splits` masks
/// (mask seeds `train_config.seed + split`) and averages the test metrics.
/// Cell training seeds also vary by split so the average covers both mask
/// and initialization randomness.
pub fn run_partial_sweep(
    corpus: &TransactionCorpus,
    ratios: &[f64],
    num_splits: usize,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
) -> Result<SweepTable> {
    let mut table = SweepTable { rows: Vec::with_capacity(ratios.len()) };
    for &ratio in ratios {
        let masks = make_partial_masks(corpus, ratio, num_splits, train_config.seed)?;
        let mut results = Vec::with_capacity(num_splits);
        for (split, mask) in masks.iter().enumerate() {
            let mut cell_config = train_config.clone();
            cell_config.seed = train_config.seed + split as u64;
            let (_, record) = run_partial(corpus, mask, model_config, &cell_config)?;
            results.push(record.test_result);
        }
        let (mean, std) = summarize(&results);
        table.rows.push(SweepRow { ratio, num_splits, mean, std });
    }
    Ok(table)
}

impl SweepTable {
    /// One line per ratio with 6-decimal fixed formatting.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "ratio,splits,hl_mean,hl_std,macp_mean,macp_std,macr_mean,macr_std,\
             macf1_mean,macf1_std,wp_mean,wp_std,wr_mean,wr_std,wf1_mean,wf1_std\n",
        );
        for row in &self.rows {
            let m = row.mean.fields();
            let s = row.std.fields();
            out.push_str(&format!("{:.6},{}", row.ratio, row.num_splits));
            for i in 0..7 {
                out.push_str(&format!(",{:.6},{:.6}", m[i], s[i]));
            }
            out.push('\n');
        }
        out
    }
}
