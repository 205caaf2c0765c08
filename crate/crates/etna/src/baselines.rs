//! Non-neural reference predictors: POP (per-task majority class) and
//! truncated SVD of the binary user×company incidence matrix with one
//! multinomial logistic head per task.
//!
//! The incidence matrix is binary (purchased at least once), matching the
//! unique-set treatment used everywhere else. The SVD is computed by
//! randomized subspace iteration; the incidence matrix is only ever touched
//! through its sparse per-user id lists.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::TransactionCorpus;
use crate::error::{Error, Result};
use crate::metrics::EvalResult;
use crate::model::{argmax, PredictionSet};
use crate::numerics::{softmax_in_place, Matrix, ParamStore};

/// Always predicts the per-task majority class of the observed training
/// labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PopModel {
    pub majority: Vec<usize>,
}

/// Truncated-SVD company factors plus per-task logistic heads acting on
/// folded-in user factors.
#[derive(Debug, Clone)]
pub struct SvdModel {
    pub rank: usize,
    /// num_companies × rank right-singular factors; a user's factor vector
    /// is the sum of the rows of their distinct companies.
    pub company_factors: Matrix,
    pub singular_values: Vec<f64>,
    pub heads: Vec<LogisticHead>,
    pub task_names: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct LogisticHead {
    /// num_classes × rank.
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone)]
pub enum BaselineModel {
    Pop(PopModel),
    Svd(SvdModel),
}

/// Majority class per task over observed training labels; ties break to the
/// lowest class index.
pub fn fit_pop(
    corpus: &TransactionCorpus,
    train_idx: &[usize],
    observed: &[Vec<bool>],
    class_counts: &[usize],
) -> Result<PopModel> {
    let mut majority = Vec::with_capacity(class_counts.len());
    for (task, &num_classes) in class_counts.iter().enumerate() {
        let mut counts = vec![0usize; num_classes];
        for &i in train_idx {
            if observed[i][task] {
                counts[corpus.users[i].labels.get(task)] += 1;
            }
        }
        if counts.iter().all(|&c| c == 0) {
            return Err(Error::InvalidArgument(format!(
                "task {task} has no observed training labels"
            )));
        }
        let mut best = 0;
        for (c, &count) in counts.iter().enumerate() {
            if count > counts[best] {
                best = c;
            }
        }
        majority.push(best);
    }
    Ok(PopModel { majority })
}

/// `X·M` where X is the sparse binary incidence over `histories`.
fn incidence_mul(histories: &[Vec<usize>], m: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(histories.len(), m.cols());
    for (i, ids) in histories.iter().enumerate() {
        let row = out.row_mut(i);
        for &c in ids {
            for (r, v) in row.iter_mut().zip(m.row(c)) {
                *r += v;
            }
        }
    }
    out
}

/// `Xᵀ·Q` via scatter over the same sparse rows.
fn incidence_t_mul(histories: &[Vec<usize>], q: &Matrix, num_companies: usize) -> Matrix {
    let mut out = Matrix::zeros(num_companies, q.cols());
    for (i, ids) in histories.iter().enumerate() {
        let src = q.row(i);
        for &c in ids {
            let dst = out.row_mut(c);
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }
    out
}

/// In-place modified Gram-Schmidt on columns; numerically rank-deficient
/// columns are zeroed.
fn orthonormalize_columns(m: &mut Matrix) {
    let (rows, cols) = (m.rows(), m.cols());
    for j in 0..cols {
        for prev in 0..j {
            let mut dot = 0.0;
            for r in 0..rows {
                dot += m.get(r, j) * m.get(r, prev);
            }
            for r in 0..rows {
                let v = m.get(r, j) - dot * m.get(r, prev);
                m.set(r, j, v);
            }
        }
        let norm: f64 = (0..rows).map(|r| m.get(r, j).powi(2)).sum::<f64>().sqrt();
        if norm < 1e-12 {
            for r in 0..rows {
                m.set(r, j, 0.0);
            }
        } else {
            for r in 0..rows {
                m.set(r, j, m.get(r, j) / norm);
            }
        }
    }
}

/// Cyclic Jacobi eigendecomposition of a small symmetric matrix; returns
/// eigenpairs sorted by descending eigenvalue.
fn jacobi_eigen(sym: &Matrix) -> (Vec<f64>, Matrix) {
    let n = sym.rows();
    let mut a = sym.clone();
    let mut v = Matrix::identity(n);
    let scale = sym.frobenius_norm().powi(2).max(1e-300);
    for _ in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a.get(p, q).powi(2);
            }
        }
        if off < 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                // Rotation angle zeroing a_pq: tan(2φ) = 2a_pq/(a_pp − a_qq).
                let phi = 0.5 * (2.0 * apq).atan2(app - aqq);
                let (s, c) = phi.sin_cos();
                for r in 0..n {
                    let arp = a.get(r, p);
                    let arq = a.get(r, q);
                    a.set(r, p, c * arp + s * arq);
                    a.set(r, q, -s * arp + c * arq);
                }
                for col in 0..n {
                    let apc = a.get(p, col);
                    let aqc = a.get(q, col);
                    a.set(p, col, c * apc + s * aqc);
                    a.set(q, col, -s * apc + c * aqc);
                }
                for r in 0..n {
                    let vrp = v.get(r, p);
                    let vrq = v.get(r, q);
                    v.set(r, p, c * vrp + s * vrq);
                    v.set(r, q, -s * vrp + c * vrq);
                }
            }
        }
    }
    let mut pairs: Vec<(f64, usize)> = (0..n).map(|i| (a.get(i, i), i)).collect();
    pairs.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap());
    let eigvals: Vec<f64> = pairs.iter().map(|&(e, _)| e).collect();
    let mut eigvecs = Matrix::zeros(n, n);
    for (new_col, &(_, old_col)) in pairs.iter().enumerate() {
        for r in 0..n {
            eigvecs.set(r, new_col, v.get(r, old_col));
        }
    }
    (eigvals, eigvecs)
}

/// Rank-r truncated SVD of the train-user incidence matrix by randomized
/// subspace iteration, followed by per-task logistic heads trained with
/// full-batch gradient descent (lr 0.1, 500 epochs, L2 1e-4) on observed
/// labels.
pub fn fit_svd(
    corpus: &TransactionCorpus,
    train_idx: &[usize],
    observed: &[Vec<bool>],
    class_counts: &[usize],
    task_names: &[String],
    rank: usize,
    iters: usize,
    seed: u64,
) -> Result<SvdModel> {
    let num_companies = corpus.num_companies;
    if rank == 0 || rank > train_idx.len().min(num_companies) {
        return Err(Error::InvalidArgument(format!(
            "rank {rank} out of range for {} train users x {num_companies} companies",
            train_idx.len()
        )));
    }
    let all_histories = corpus.unique_histories();
    let histories: Vec<Vec<usize>> =
        train_idx.iter().map(|&i| all_histories[i].clone()).collect();

    // Range finding with a small oversampling margin.
    let width = (rank + 10).min(num_companies).min(train_idx.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut omega = Matrix::zeros(num_companies, width);
    for v in omega.data_mut() {
        *v = StandardNormal.sample(&mut rng);
    }
    let mut q = incidence_mul(&histories, &omega);
    orthonormalize_columns(&mut q);
    for _ in 0..iters {
        let mut z = incidence_t_mul(&histories, &q, num_companies);
        orthonormalize_columns(&mut z);
        q = incidence_mul(&histories, &z);
        orthonormalize_columns(&mut q);
    }

    // B = QᵀX (width × companies); small eigensolve of BBᵀ gives the
    // singular structure.
    let bt = incidence_t_mul(&histories, &q, num_companies); // companies × width = Bᵀ
    let b = bt.transpose();
    let mut bbt = Matrix::zeros(width, width);
    for i in 0..width {
        for j in 0..width {
            let dot: f64 = b.row(i).iter().zip(b.row(j)).map(|(x, y)| x * y).sum();
            bbt.set(i, j, dot);
        }
    }
    let (eigvals, u_b) = jacobi_eigen(&bbt);
    let singular_values: Vec<f64> =
        eigvals.iter().take(rank).map(|&e| e.max(0.0).sqrt()).collect();

    // Right factors V_r = Bᵀ U_B Σ⁻¹, companies × rank.
    let mut company_factors = Matrix::zeros(num_companies, rank);
    for j in 0..rank {
        let sigma = singular_values[j];
        if sigma < 1e-12 {
            continue;
        }
        for c in 0..num_companies {
            let dot: f64 =
                (0..width).map(|w| bt.get(c, w) * u_b.get(w, j)).sum();
            company_factors.set(c, j, dot / sigma);
        }
    }

    // Fold-in user factors (= U_r Σ_r for the fitted matrix) and train the
    // heads.
    let user_factors = incidence_mul(&histories, &company_factors);
    let mut heads = Vec::with_capacity(class_counts.len());
    for (task, &num_classes) in class_counts.iter().enumerate() {
        let rows: Vec<usize> = (0..train_idx.len())
            .filter(|&row| observed[train_idx[row]][task])
            .collect();
        if rows.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "task {task} has no observed training labels"
            )));
        }
        let labels: Vec<usize> =
            rows.iter().map(|&row| corpus.users[train_idx[row]].labels.get(task)).collect();
        heads.push(train_logistic_head(&user_factors, &rows, &labels, num_classes, rank));
    }

    Ok(SvdModel {
        rank,
        company_factors,
        singular_values,
        heads,
        task_names: task_names.to_vec(),
    })
}

/// Full-batch multinomial logistic regression: mean NLL + ½·1e-4·‖W‖²,
/// 500 epochs at learning rate 0.1, weights initialized to zero.
pub fn train_logistic_head(
    factors: &Matrix,
    rows: &[usize],
    labels: &[usize],
    num_classes: usize,
    rank: usize,
) -> LogisticHead {
    const LR: f64 = 0.1;
    const EPOCHS: usize = 500;
    const L2: f64 = 1e-4;

    let n = rows.len() as f64;
    let mut weights = Matrix::zeros(num_classes, rank);
    let mut bias = vec![0.0; num_classes];
    let mut grad_w = Matrix::zeros(num_classes, rank);
    let mut grad_b = vec![0.0; num_classes];

    for _ in 0..EPOCHS {
        grad_w.fill(0.0);
        grad_b.fill(0.0);
        for (&row, &label) in rows.iter().zip(labels) {
            let f = factors.row(row);
            let mut p: Vec<f64> = (0..num_classes)
                .map(|c| {
                    weights.row(c).iter().zip(f).map(|(w, x)| w * x).sum::<f64>() + bias[c]
                })
                .collect();
            softmax_in_place(&mut p);
            for c in 0..num_classes {
                let delta = p[c] - if c == label { 1.0 } else { 0.0 };
                grad_b[c] += delta;
                let g_row = grad_w.row_mut(c);
                for (g, &x) in g_row.iter_mut().zip(f) {
                    *g += delta * x;
                }
            }
        }
        for c in 0..num_classes {
            let w_row = weights.row_mut(c);
            let g_row = grad_w.row(c);
            for (w, &g) in w_row.iter_mut().zip(g_row) {
                *w -= LR * (g / n + L2 * *w);
            }
            bias[c] -= LR * grad_b[c] / n;
        }
    }
    LogisticHead { weights, bias }
}

fn svd_predict_user(model: &SvdModel, ids: &[usize]) -> Vec<Vec<f64>> {
    let rank = model.rank;
    let mut factor = vec![0.0; rank];
    for &c in ids {
        for (f, v) in factor.iter_mut().zip(model.company_factors.row(c)) {
            *f += v;
        }
    }
    model
        .heads
        .iter()
        .map(|head| {
            let mut p: Vec<f64> = (0..head.weights.rows())
                .map(|c| {
                    head.weights.row(c).iter().zip(&factor).map(|(w, x)| w * x).sum::<f64>()
                        + head.bias[c]
                })
                .collect();
            softmax_in_place(&mut p);
            p
        })
        .collect()
}

/// Predictions for the listed users. POP is a constant function of the
/// user; SVD folds each user's incidence vector through the company
/// factors and applies the logistic heads.
pub fn predict_baseline(
    model: &BaselineModel,
    corpus: &TransactionCorpus,
    user_idx: &[usize],
    class_counts: &[usize],
    task_names: &[String],
) -> Result<PredictionSet> {
    let histories = corpus.unique_histories();
    let user_ids: Vec<String> =
        user_idx.iter().map(|&i| corpus.users[i].user_id.clone()).collect();
    let mut probabilities = Vec::with_capacity(user_idx.len());
    let mut labels = Vec::with_capacity(user_idx.len());
    match model {
        BaselineModel::Pop(pop) => {
            for _ in user_idx {
                let probs: Vec<Vec<f64>> = class_counts
                    .iter()
                    .zip(&pop.majority)
                    .map(|(&c, &m)| {
                        let mut p = vec![0.0; c];
                        p[m] = 1.0;
                        p
                    })
                    .collect();
                labels.push(pop.majority.clone());
                probabilities.push(probs);
            }
        }
        BaselineModel::Svd(svd) => {
            for &i in user_idx {
                let probs = svd_predict_user(svd, &histories[i]);
                labels.push(probs.iter().map(|p| argmax(p)).collect());
                probabilities.push(probs);
            }
        }
    }
    Ok(PredictionSet {
        user_ids,
        task_names: task_names.to_vec(),
        probabilities,
        labels,
    })
}

/// Convenience wrapper: predict and evaluate in one step.
pub fn evaluate_baseline(
    model: &BaselineModel,
    corpus: &TransactionCorpus,
    user_idx: &[usize],
    observed: &[Vec<bool>],
    class_counts: &[usize],
    task_names: &[String],
) -> Result<EvalResult> {
    let preds = predict_baseline(model, corpus, user_idx, class_counts, task_names)?;
    let truths: Vec<Vec<usize>> =
        user_idx.iter().map(|&i| corpus.users[i].labels.as_array().to_vec()).collect();
    let mask: Vec<Vec<bool>> = user_idx.iter().map(|&i| observed[i].clone()).collect();
    crate::metrics::evaluate(&preds.labels, &truths, &mask, class_counts)
}

#[derive(Serialize, Deserialize)]
struct BaselineConfig {
    model_type: String,
    rank: usize,
    majority: Vec<usize>,
    task_names: Vec<String>,
    class_counts: Vec<usize>,
}

/// Saves a baseline as a checkpoint directory: `baseline-config.json` plus
/// tensors in the standard parameter-store format for SVD.
pub fn save_baseline(
    model: &BaselineModel,
    class_counts: &[usize],
    task_names: &[String],
    dir: &Path,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let config = match model {
        BaselineModel::Pop(pop) => BaselineConfig {
            model_type: "pop".into(),
            rank: 0,
            majority: pop.majority.clone(),
            task_names: task_names.to_vec(),
            class_counts: class_counts.to_vec(),
        },
        BaselineModel::Svd(svd) => {
            let mut store = ParamStore::new();
            store.insert("company_factors", svd.company_factors.clone());
            store.insert(
                "singular_values",
                Matrix::from_vec(1, svd.singular_values.len(), svd.singular_values.clone())?,
            );
            for (head, name) in svd.heads.iter().zip(task_names) {
                store.insert(&format!("W.{name}"), head.weights.clone());
                store.insert(
                    &format!("bias.{name}"),
                    Matrix::from_vec(1, head.bias.len(), head.bias.clone())?,
                );
            }
            store.save(dir)?;
            BaselineConfig {
                model_type: "svd".into(),
                rank: svd.rank,
                majority: Vec::new(),
                task_names: task_names.to_vec(),
                class_counts: class_counts.to_vec(),
            }
        }
    };
    let path = dir.join("baseline-config.json");
    let json = serde_json::to_string_pretty(&config)?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

/// Loads a baseline checkpoint; returns the model plus its task names and
/// class counts.
pub fn load_baseline(dir: &Path) -> Result<(BaselineModel, Vec<String>, Vec<usize>)> {
    let path = dir.join("baseline-config.json");
    let json = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let config: BaselineConfig = serde_json::from_str(&json)?;
    let model = match config.model_type.as_str() {
        "pop" => BaselineModel::Pop(PopModel { majority: config.majority.clone() }),
        "svd" => {
            let store = ParamStore::load(dir)?;
            let heads = config
                .task_names
                .iter()
                .map(|name| LogisticHead {
                    weights: store.param(&format!("W.{name}")).clone(),
                    bias: store.param(&format!("bias.{name}")).data().to_vec(),
                })
                .collect();
            BaselineModel::Svd(SvdModel {
                rank: config.rank,
                company_factors: store.param("company_factors").clone(),
                singular_values: store.param("singular_values").data().to_vec(),
                heads,
                task_names: config.task_names.clone(),
            })
        }
        other => {
            return Err(Error::InvalidArgument(format!("unknown baseline type {other:?}")))
        }
    };
    Ok((model, config.task_names, config.class_counts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{AttributeLabels, UserRecord, CLASS_COUNTS, TASK_NAMES};
    use std::collections::BTreeMap;

    fn names() -> Vec<String> {
        TASK_NAMES.iter().map(|s| s.to_string()).collect()
    }

    fn corpus_from(users: Vec<UserRecord>, num_companies: usize) -> TransactionCorpus {
        TransactionCorpus { users, num_companies, company_categories: BTreeMap::new() }
    }

    fn user(id: &str, history: Vec<usize>, labels: (usize, usize, usize)) -> UserRecord {
        UserRecord {
            user_id: id.into(),
            history: history.into_iter().map(|c| (c, 1.0)).collect(),
            labels: AttributeLabels::new(labels.0, labels.1, labels.2).unwrap(),
        }
    }

    fn all_observed(n: usize) -> Vec<Vec<bool>> {
        vec![vec![true; 3]; n]
    }

    #[test]
    fn pop_predicts_prior_majorities() {
        // 6 female / 4 male, adult plurality, single majority.
        let mut users = Vec::new();
        for i in 0..10 {
            let gender = usize::from(i >= 6);
            let age = if i < 5 { 1 } else { i % 4 };
            let marital = usize::from(i >= 2);
            users.push(user(&format!("u{i}"), vec![i % 3], (gender, age, marital)));
        }
        let corpus = corpus_from(users, 3);
        let idx: Vec<usize> = (0..10).collect();
        let pop = fit_pop(&corpus, &idx, &all_observed(10), &CLASS_COUNTS).unwrap();
        assert_eq!(pop.majority, vec![0, 1, 1]);
    }

    #[test]
    fn pop_tie_breaks_low_and_single_user_echoes() {
        let users = vec![
            user("a", vec![0], (0, 2, 1)),
            user("b", vec![1], (1, 2, 0)),
        ];
        let corpus = corpus_from(users, 2);
        let pop = fit_pop(&corpus, &[0, 1], &all_observed(2), &CLASS_COUNTS).unwrap();
        assert_eq!(pop.majority[0], 0, "50/50 gender tie goes to class 0");

        let solo = fit_pop(&corpus, &[1], &all_observed(2), &CLASS_COUNTS).unwrap();
        assert_eq!(solo.majority, vec![1, 2, 0]);
    }

    #[test]
    fn pop_with_no_observed_labels_errors() {
        let corpus = corpus_from(vec![user("a", vec![0], (0, 0, 0))], 1);
        let observed = vec![vec![true, false, true]];
        assert!(fit_pop(&corpus, &[0], &observed, &CLASS_COUNTS).is_err());
    }

    #[test]
    fn pop_predictions_ignore_histories() {
        let users = vec![
            user("a", vec![0, 1, 2], (0, 1, 1)),
            user("b", vec![3], (0, 1, 1)),
            user("c", vec![4, 5], (1, 0, 0)),
        ];
        let corpus = corpus_from(users, 6);
        let idx = [0usize, 1, 2];
        let pop = BaselineModel::Pop(
            fit_pop(&corpus, &idx, &all_observed(3), &CLASS_COUNTS).unwrap(),
        );
        let preds = predict_baseline(&pop, &corpus, &idx, &CLASS_COUNTS, &names()).unwrap();
        assert_eq!(preds.labels[0], preds.labels[1]);
        assert_eq!(preds.labels[1], preds.labels[2]);
    }

    #[test]
    fn pop_weighted_recall_is_majority_tuple_frequency() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let users: Vec<UserRecord> = (0..400)
            .map(|i| {
                user(
                    &format!("u{i}"),
                    vec![rng.random_range(0..5)],
                    (
                        usize::from(rng.random::<f64>() < 0.4),
                        rng.random_range(0..4),
                        usize::from(rng.random::<f64>() < 0.7),
                    ),
                )
            })
            .collect();
        let corpus = corpus_from(users, 5);
        let idx: Vec<usize> = (0..400).collect();
        let observed = all_observed(400);
        let pop_model = fit_pop(&corpus, &idx, &observed, &CLASS_COUNTS).unwrap();
        let majority = pop_model.majority.clone();
        let unknown = vec![vec![false; 3]; 400];
        let result = evaluate_baseline(
            &BaselineModel::Pop(pop_model),
            &corpus,
            &idx,
            &unknown,
            &CLASS_COUNTS,
            &names(),
        )
        .unwrap();
        let frequency = corpus
            .users
            .iter()
            .filter(|u| u.labels.as_array().to_vec() == majority)
            .count() as f64
            / 400.0;
        assert!((result.weighted_metrics.recall - frequency).abs() < 1e-12);
    }

    fn repeated_pattern_corpus(patterns: &[Vec<usize>], reps: usize) -> TransactionCorpus {
        let mut users = Vec::new();
        for r in 0..reps {
            for (p, pattern) in patterns.iter().enumerate() {
                users.push(user(
                    &format!("u{r}_{p}"),
                    pattern.clone(),
                    (p % 2, p % 4, (p + 1) % 2),
                ));
            }
        }
        corpus_from(users, 12)
    }

    #[test]
    fn exact_rank_gives_exact_reconstruction() {
        // Rows live in the span of 3 patterns, so the incidence matrix has
        // rank 3 and the rank-3 projection reproduces it.
        let patterns =
            vec![vec![0, 1, 2, 3], vec![4, 5, 6], vec![0, 7, 8, 9, 10]];
        let corpus = repeated_pattern_corpus(&patterns, 7);
        let idx: Vec<usize> = (0..corpus.num_users()).collect();
        let model = fit_svd(
            &corpus,
            &idx,
            &all_observed(corpus.num_users()),
            &CLASS_COUNTS,
            &names(),
            3,
            7,
            42,
        )
        .unwrap();

        let histories = corpus.unique_histories();
        let mut err = 0.0f64;
        for ids in &histories {
            // Projection of the binary row through V_r V_rᵀ.
            let mut coeffs = vec![0.0; model.rank];
            for &c in ids {
                for (co, v) in coeffs.iter_mut().zip(model.company_factors.row(c)) {
                    *co += v;
                }
            }
            for company in 0..corpus.num_companies {
                let projected: f64 = model
                    .company_factors
                    .row(company)
                    .iter()
                    .zip(&coeffs)
                    .map(|(v, c)| v * c)
                    .sum();
                let original = if ids.contains(&company) { 1.0 } else { 0.0 };
                err += (projected - original).powi(2);
            }
        }
        assert!(err.sqrt() < 1e-8, "Frobenius reconstruction error {}", err.sqrt());
        for w in model.singular_values.windows(2) {
            assert!(w[0] >= w[1] - 1e-12, "singular values must be nonincreasing");
        }
    }

    #[test]
    fn rank_one_matrix_recovers_its_pattern() {
        // Every user shares one pattern: X = 1·bᵀ, so the top right factor
        // is b up to sign.
        let pattern = vec![1usize, 3, 4, 8];
        let corpus = repeated_pattern_corpus(&[pattern.clone()], 20);
        let idx: Vec<usize> = (0..corpus.num_users()).collect();
        let model = fit_svd(
            &corpus,
            &idx,
            &all_observed(corpus.num_users()),
            &CLASS_COUNTS,
            &names(),
            1,
            7,
            1,
        )
        .unwrap();
        let mut b = vec![0.0; corpus.num_companies];
        for &c in &pattern {
            b[c] = 1.0;
        }
        let b_norm = (pattern.len() as f64).sqrt();
        let mut dot = 0.0;
        let mut v_norm = 0.0;
        for c in 0..corpus.num_companies {
            let v = model.company_factors.get(c, 0);
            dot += v * b[c] / b_norm;
            v_norm += v * v;
        }
        let cosine = dot.abs() / v_norm.sqrt();
        assert!(cosine > 0.999, "cosine {cosine}");
        // Singular value should be sqrt(num_users * |pattern|).
        let expected = (corpus.num_users() as f64 * pattern.len() as f64).sqrt();
        assert!((model.singular_values[0] - expected).abs() / expected < 1e-9);
    }

    #[test]
    fn left_factors_are_orthonormal() {
        let patterns = vec![vec![0, 1], vec![2, 3, 4], vec![5, 6, 7, 8], vec![0, 9, 10]];
        let corpus = repeated_pattern_corpus(&patterns, 5);
        let idx: Vec<usize> = (0..corpus.num_users()).collect();
        let model = fit_svd(
            &corpus,
            &idx,
            &all_observed(corpus.num_users()),
            &CLASS_COUNTS,
            &names(),
            4,
            7,
            3,
        )
        .unwrap();
        // U_r = X V_r Σ⁻¹ must have orthonormal columns.
        let histories = corpus.unique_histories();
        let folded = incidence_mul(&histories, &model.company_factors);
        let n = folded.rows();
        for a in 0..model.rank {
            for b in a..model.rank {
                let mut dot = 0.0;
                for i in 0..n {
                    dot += folded.get(i, a) * folded.get(i, b);
                }
                dot /= model.singular_values[a] * model.singular_values[b];
                let expected = if a == b { 1.0 } else { 0.0 };
                assert!(
                    (dot - expected).abs() < 1e-8,
                    "U column dot ({a},{b}) = {dot}"
                );
            }
        }
    }

    #[test]
    fn rank_bounds_are_enforced() {
        let corpus = repeated_pattern_corpus(&[vec![0, 1]], 3);
        let idx: Vec<usize> = (0..3).collect();
        let observed = all_observed(3);
        assert!(fit_svd(&corpus, &idx, &observed, &CLASS_COUNTS, &names(), 0, 7, 0).is_err());
        assert!(fit_svd(&corpus, &idx, &observed, &CLASS_COUNTS, &names(), 4, 7, 0).is_err());
    }

    #[test]
    fn logistic_separates_linearly_separable_factors() {
        let mut factors = Matrix::zeros(20, 2);
        let mut labels = Vec::new();
        for i in 0..20 {
            let class = i % 2;
            factors.set(i, 0, if class == 0 { -1.0 - 0.1 * i as f64 } else { 1.0 + 0.1 * i as f64 });
            factors.set(i, 1, 0.5);
            labels.push(class);
        }
        let rows: Vec<usize> = (0..20).collect();
        let head = train_logistic_head(&factors, &rows, &labels, 2, 2);
        let mut correct = 0;
        for i in 0..20 {
            let f = factors.row(i);
            let scores: Vec<f64> = (0..2)
                .map(|c| {
                    head.weights.row(c).iter().zip(f).map(|(w, x)| w * x).sum::<f64>()
                        + head.bias[c]
                })
                .collect();
            if argmax(&scores) == labels[i] {
                correct += 1;
            }
        }
        assert_eq!(correct, 20, "separable toy must reach training accuracy 1.0");
    }

    #[test]
    fn baseline_checkpoint_round_trip() {
        let patterns = vec![vec![0, 1, 5], vec![2, 3], vec![4, 6, 7]];
        let corpus = repeated_pattern_corpus(&patterns, 4);
        let idx: Vec<usize> = (0..corpus.num_users()).collect();
        let observed = all_observed(corpus.num_users());
        let svd = fit_svd(&corpus, &idx, &observed, &CLASS_COUNTS, &names(), 2, 5, 9).unwrap();
        let model = BaselineModel::Svd(svd);

        let dir = tempfile::tempdir().unwrap();
        save_baseline(&model, &CLASS_COUNTS, &names(), dir.path()).unwrap();
        let (loaded, task_names, class_counts) = load_baseline(dir.path()).unwrap();
        assert_eq!(class_counts, CLASS_COUNTS.to_vec());

        let a = predict_baseline(&model, &corpus, &idx, &class_counts, &task_names).unwrap();
        let b = predict_baseline(&loaded, &corpus, &idx, &class_counts, &task_names).unwrap();
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.probabilities, b.probabilities);
    }
}
