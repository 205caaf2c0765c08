//! Planted-signal synthetic corpus generator.
//!
//! Companies are partitioned into one group per (task, class) pair. Each
//! transaction either carries signal — pick one of the user's attributes
//! uniformly, then a company uniformly from that attribute's group — or is
//! uniform noise. The full generative specification is returned alongside
//! the corpus, so an exact Bayes-optimal oracle can be computed from it.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::corpus::{
    AttributeLabels, TransactionCorpus, UserRecord, CLASS_COUNTS, NUM_TASKS,
};
use crate::error::{Error, Result};

/// Class priors matching the released dataset's distribution table:
/// gender female/male, age young/adult/middle/old, marital married/single.
pub const CLASS_PRIORS: [&[f64]; NUM_TASKS] =
    [&[0.630, 0.370], &[0.223, 0.541, 0.143, 0.094], &[0.199, 0.801]];

/// Everything needed to reproduce the generator's per-transaction
/// distribution, serialized as JSON next to the corpus.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_users: usize,
    pub num_companies: usize,
    pub basket_mean: f64,
    pub signal_strength: f64,
    pub seed: u64,
    /// Normalized class priors per task.
    pub priors: Vec<Vec<f64>>,
    /// groups[task][class] = company ids affine to that attribute class.
    pub groups: Vec<Vec<Vec<usize>>>,
}

impl SyntheticSpec {
    /// Probability the generator emits `company` for a user with the given
    /// labels: signal mass spread over the user's attribute groups plus the
    /// uniform noise floor. Empty groups fall back to uniform.
    pub fn transaction_prob(&self, company: usize, labels: &AttributeLabels) -> f64 {
        let uniform = 1.0 / self.num_companies as f64;
        let mut p = (1.0 - self.signal_strength) * uniform;
        for task in 0..NUM_TASKS {
            let group = &self.groups[task][labels.get(task)];
            let task_weight = self.signal_strength / NUM_TASKS as f64;
            if group.is_empty() {
                p += task_weight * uniform;
            } else if group.binary_search(&company).is_ok() {
                p += task_weight / group.len() as f64;
            }
        }
        p
    }

    /// Enumerates every full label tuple in odometer order.
    pub fn enumerate_tuples() -> Vec<AttributeLabels> {
        let mut tuples = Vec::new();
        for gender in 0..CLASS_COUNTS[0] {
            for age in 0..CLASS_COUNTS[1] {
                for marital in 0..CLASS_COUNTS[2] {
                    tuples.push(AttributeLabels { gender, age, marital });
                }
            }
        }
        tuples
    }

    /// Exact posterior over full label tuples given an observed history,
    /// treating transactions as i.i.d. draws from the mixture.
    pub fn tuple_posterior(&self, history: &[(usize, f64)]) -> Vec<(AttributeLabels, f64)> {
        let tuples = Self::enumerate_tuples();
        let mut log_post: Vec<f64> = tuples
            .iter()
            .map(|labels| {
                let mut lp: f64 = (0..NUM_TASKS)
                    .map(|t| self.priors[t][labels.get(t)].ln())
                    .sum();
                for &(company, _) in history {
                    lp += self.transaction_prob(company, labels).ln();
                }
                lp
            })
            .collect();
        let max = log_post.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for lp in log_post.iter_mut() {
            *lp = (*lp - max).exp();
            sum += *lp;
        }
        tuples.into_iter().zip(log_post.into_iter().map(|p| p / sum)).collect()
    }

    /// Per-task posterior marginals given a history.
    pub fn task_marginals(&self, history: &[(usize, f64)]) -> Vec<Vec<f64>> {
        let mut marginals: Vec<Vec<f64>> =
            CLASS_COUNTS.iter().map(|&c| vec![0.0; c]).collect();
        for (labels, p) in self.tuple_posterior(history) {
            for task in 0..NUM_TASKS {
                marginals[task][labels.get(task)] += p;
            }
        }
        marginals
    }

    /// Bayes-optimal per-attribute prediction: argmax of each marginal,
    /// lowest class index on ties.
    pub fn bayes_predict(&self, history: &[(usize, f64)]) -> AttributeLabels {
        let marginals = self.task_marginals(history);
        let argmax = |v: &[f64]| {
            let mut best = 0;
            for (i, &p) in v.iter().enumerate() {
                if p > v[best] {
                    best = i;
                }
            }
            best
        };
        AttributeLabels {
            gender: argmax(&marginals[0]),
            age: argmax(&marginals[1]),
            marital: argmax(&marginals[2]),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        Ok(serde_json::from_str(json)?)
    }
}

fn normalized_priors() -> Vec<Vec<f64>> {
    CLASS_PRIORS
        .iter()
        .map(|row| {
            let sum: f64 = row.iter().sum();
            row.iter().map(|p| p / sum).collect()
        })
        .collect()
}

fn sample_class(rng: &mut ChaCha8Rng, prior: &[f64]) -> usize {
    let draw: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in prior.iter().enumerate() {
        acc += p;
        if draw < acc {
            return i;
        }
    }
    prior.len() - 1
}

/// Generates a corpus with attribute-conditioned purchase structure.
/// Basket sizes are 1 + Poisson(basket_mean − 1), so the minimum is 1 and
/// the mean is `basket_mean`.
pub fn synth_corpus(
    num_users: usize,
    num_companies: usize,
    basket_mean: f64,
    signal_strength: f64,
    seed: u64,
) -> Result<(TransactionCorpus, SyntheticSpec)> {
    if num_users < 2 || num_companies < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 users and 2 companies, got {num_users} users, {num_companies} companies"
        )));
    }
    if !(0.0..=1.0).contains(&signal_strength) {
        return Err(Error::InvalidArgument(format!(
            "signal strength must be in [0, 1], got {signal_strength}"
        )));
    }
    if !(basket_mean > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "basket mean must be positive, got {basket_mean}"
        )));
    }

    // Round-robin partition of companies over the flattened (task, class)
    // group index; sizes differ by at most one.
    let total_classes: usize = CLASS_COUNTS.iter().sum();
    let mut groups: Vec<Vec<Vec<usize>>> =
        CLASS_COUNTS.iter().map(|&c| vec![Vec::new(); c]).collect();
    let mut offsets = Vec::with_capacity(NUM_TASKS);
    let mut acc = 0;
    for &c in &CLASS_COUNTS {
        offsets.push(acc);
        acc += c;
    }
    for company in 0..num_companies {
        let flat = company % total_classes;
        let task = offsets.iter().rposition(|&o| o <= flat).unwrap();
        groups[task][flat - offsets[task]].push(company);
    }

    let spec = SyntheticSpec {
        num_users,
        num_companies,
        basket_mean,
        signal_strength,
        seed,
        priors: normalized_priors(),
        groups,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lambda = basket_mean - 1.0;
    let poisson = if lambda > 0.0 { Some(Poisson::new(lambda).unwrap()) } else { None };

    let mut users = Vec::with_capacity(num_users);
    for n in 0..num_users {
        let labels = AttributeLabels {
            gender: sample_class(&mut rng, &spec.priors[0]),
            age: sample_class(&mut rng, &spec.priors[1]),
            marital: sample_class(&mut rng, &spec.priors[2]),
        };
        let basket = 1 + poisson.as_ref().map_or(0, |p| p.sample(&mut rng) as usize);
        let mut history = Vec::with_capacity(basket);
        for _ in 0..basket {
            let company = if rng.random::<f64>() < signal_strength {
                let task = rng.random_range(0..NUM_TASKS);
                let group = &spec.groups[task][labels.get(task)];
                if group.is_empty() {
                    rng.random_range(0..num_companies)
                } else {
                    group[rng.random_range(0..group.len())]
                }
            } else {
                rng.random_range(0..num_companies)
            };
            let amount = (rng.random_range(1.0..100.0f64) * 100.0).round() / 100.0;
            history.push((company, amount));
        }
        users.push(UserRecord { user_id: format!("u{n:06}"), history, labels });
    }

    let categories: BTreeMap<usize, String> = (0..num_companies)
        .map(|c| (c, format!("segment{:02}", c % total_classes)))
        .collect();

    let corpus =
        TransactionCorpus { users, num_companies, company_categories: categories };
    Ok((corpus, spec))
}
