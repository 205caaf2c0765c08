//! Dense re-computation oracle for the randomized SVD baseline: an
//! independent factorization via eigendecomposition of the Gram matrix
//! (nalgebra) must agree with the subspace-iteration implementation, and
//! predictions built from the oracle factors must match.

use std::collections::BTreeMap;

use etna::baselines::{
    fit_svd, predict_baseline, train_logistic_head, BaselineModel, SvdModel,
};
use etna::corpus::{AttributeLabels, TransactionCorpus, UserRecord, CLASS_COUNTS, TASK_NAMES};
use etna::numerics::Matrix;
use nalgebra::{DMatrix, SymmetricEigen};

fn names() -> Vec<String> {
    TASK_NAMES.iter().map(|s| s.to_string()).collect()
}

/// 20 users over 3 patterns with uneven multiplicities so the singular
/// values are well separated.
fn toy_corpus() -> TransactionCorpus {
    let patterns: [&[usize]; 3] = [&[0, 1, 2, 3], &[4, 5, 6], &[7, 8]];
    let reps = [9usize, 7, 4];
    let mut users = Vec::new();
    let mut n = 0;
    for (p, (&pattern, &rep)) in patterns.iter().zip(&reps).enumerate() {
        for _ in 0..rep {
            users.push(UserRecord {
                user_id: format!("u{n}"),
                history: pattern.iter().map(|&c| (c, 1.0)).collect(),
                labels: AttributeLabels::new(p % 2, p, (p + 1) % 2).unwrap(),
            });
            n += 1;
        }
    }
    TransactionCorpus { users, num_companies: 9, company_categories: BTreeMap::new() }
}

/// Right singular factors via eigendecomposition of the Gram matrix
/// G = XᵀX, with each column's sign pinned by its largest-magnitude entry.
fn gram_svd(corpus: &TransactionCorpus, rank: usize) -> (Vec<f64>, Matrix) {
    let histories = corpus.unique_histories();
    let c = corpus.num_companies;
    let mut gram = DMatrix::<f64>::zeros(c, c);
    for ids in &histories {
        for &a in ids {
            for &b in ids {
                gram[(a, b)] += 1.0;
            }
        }
    }
    let eigen = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&i, &j| eigen.eigenvalues[j].partial_cmp(&eigen.eigenvalues[i]).unwrap());

    let mut singular_values = Vec::with_capacity(rank);
    let mut factors = Matrix::zeros(c, rank);
    for (col, &src) in order.iter().take(rank).enumerate() {
        singular_values.push(eigen.eigenvalues[src].max(0.0).sqrt());
        let column = eigen.eigenvectors.column(src);
        let pivot = (0..c).max_by(|&i, &j| {
            column[i].abs().partial_cmp(&column[j].abs()).unwrap()
        });
        let sign = if column[pivot.unwrap()] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..c {
            factors.set(r, col, sign * column[r]);
        }
    }
    (singular_values, factors)
}

fn sign_align(factors: &Matrix) -> Matrix {
    let mut aligned = factors.clone();
    for col in 0..aligned.cols() {
        let pivot = (0..aligned.rows())
            .max_by(|&i, &j| {
                aligned.get(i, col).abs().partial_cmp(&aligned.get(j, col).abs()).unwrap()
            })
            .unwrap();
        if aligned.get(pivot, col) < 0.0 {
            for r in 0..aligned.rows() {
                let v = -aligned.get(r, col);
                aligned.set(r, col, v);
            }
        }
    }
    aligned
}

#[test]
fn randomized_svd_matches_gram_eigendecomposition() {
    let corpus = toy_corpus();
    let idx: Vec<usize> = (0..corpus.num_users()).collect();
    let observed = vec![vec![true; 3]; corpus.num_users()];
    let rank = 3;

    let model =
        fit_svd(&corpus, &idx, &observed, &CLASS_COUNTS, &names(), rank, 7, 5).unwrap();
    let (oracle_sigma, oracle_factors) = gram_svd(&corpus, rank);

    for (mine, theirs) in model.singular_values.iter().zip(&oracle_sigma) {
        assert!(
            (mine - theirs).abs() / theirs < 1e-9,
            "singular values diverge: {mine} vs {theirs}"
        );
    }
    let aligned = sign_align(&model.company_factors);
    for r in 0..aligned.rows() {
        for c in 0..aligned.cols() {
            assert!(
                (aligned.get(r, c) - oracle_factors.get(r, c)).abs() < 1e-8,
                "factor ({r},{c}): {} vs {}",
                aligned.get(r, c),
                oracle_factors.get(r, c)
            );
        }
    }
}

#[test]
fn predictions_match_dense_recomputation() {
    let corpus = toy_corpus();
    let idx: Vec<usize> = (0..corpus.num_users()).collect();
    let observed = vec![vec![true; 3]; corpus.num_users()];
    let rank = 3;

    let mine = fit_svd(&corpus, &idx, &observed, &CLASS_COUNTS, &names(), rank, 7, 5).unwrap();

    // Rebuild the whole model from the oracle factorization through the
    // same public head-training path, then compare predictions.
    let (oracle_sigma, oracle_factors) = gram_svd(&corpus, rank);
    let histories = corpus.unique_histories();
    let mut folded = Matrix::zeros(corpus.num_users(), rank);
    for (i, ids) in histories.iter().enumerate() {
        for &c in ids {
            for j in 0..rank {
                let v = folded.get(i, j) + oracle_factors.get(c, j);
                folded.set(i, j, v);
            }
        }
    }
    let heads = (0..3)
        .map(|task| {
            let labels: Vec<usize> =
                corpus.users.iter().map(|u| u.labels.get(task)).collect();
            train_logistic_head(&folded, &idx, &labels, CLASS_COUNTS[task], rank)
        })
        .collect();
    let oracle_model = BaselineModel::Svd(SvdModel {
        rank,
        company_factors: oracle_factors,
        singular_values: oracle_sigma,
        heads,
        task_names: names(),
    });

    let a = predict_baseline(&BaselineModel::Svd(mine), &corpus, &idx, &CLASS_COUNTS, &names())
        .unwrap();
    let b = predict_baseline(&oracle_model, &corpus, &idx, &CLASS_COUNTS, &names()).unwrap();
    assert_eq!(a.labels, b.labels, "oracle and implementation disagree on labels");
    for (pa, pb) in a.probabilities.iter().zip(&b.probabilities) {
        for (ta, tb) in pa.iter().zip(pb) {
            for (x, y) in ta.iter().zip(tb) {
                assert!((x - y).abs() < 1e-6, "probabilities diverge: {x} vs {y}");
            }
        }
    }
}
