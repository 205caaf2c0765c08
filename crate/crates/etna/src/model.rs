//! The model family: a shared company embedding, an optional per-task
//! linear transformation, mean or task-specific attention pooling over the
//! deduplicated history, and per-task softmax heads trained with a masked
//! multi-task negative log-likelihood.
//!
//! Variants:
//! - `JNE`: shared embedding, mean pooling of the raw embedding rows, one
//!   head per task on the k-dim mean.
//! - `SEP`: one embedding table per task, mean pooling, per-task heads —
//!   no sharing at all.
//! - `ETN`: shared embedding, per-task transformation `V = E·T`, mean
//!   pooling of the transformed rows.
//! - `ETNA`: `ETN` plus task-specific attention `α = softmax(f(V·s + b))`
//!   and weighted-sum pooling `u = Σ αᵢ vᵢ`.
//!
//! Every backward formula here is hand-derived; `toy_grad_check` and the
//! test suite verify each variant against central finite differences.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CLASS_COUNTS, TASK_NAMES};
use crate::error::{Error, Result};
use crate::numerics::{
    gather_rows, grad_check, matmul, scatter_add_rows, softmax_in_place, GradCheckReport, Matrix,
    ParamStore,
};

/// Probabilities below this are clamped inside the log; such terms are
/// treated as constants by the backward pass so loss and gradient stay
/// consistent, and occurrences are counted, never silent.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Jne,
    Sep,
    Etn,
    Etna,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Jne, Variant::Sep, Variant::Etn, Variant::Etna];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Jne => "jne",
            Variant::Sep => "sep",
            Variant::Etn => "etn",
            Variant::Etna => "etna",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "jne" => Ok(Variant::Jne),
            "sep" => Ok(Variant::Sep),
            "etn" => Ok(Variant::Etn),
            "etna" => Ok(Variant::Etna),
            other => Err(Error::InvalidArgument(format!("unknown variant {other:?}"))),
        }
    }

    /// Whether a per-task transformation matrix exists.
    pub fn has_transform(self) -> bool {
        matches!(self, Variant::Etn | Variant::Etna)
    }

    /// Whether task-specific attention parameters exist.
    pub fn has_attention(self) -> bool {
        matches!(self, Variant::Etna)
    }

    /// Whether the embedding table is shared across tasks.
    pub fn shares_embedding(self) -> bool {
        !matches!(self, Variant::Sep)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub num_classes: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_companies: usize,
    /// Shared embedding width.
    pub k: usize,
    /// Task-specific embedding width.
    pub d: usize,
    pub tasks: Vec<TaskSpec>,
    pub variant: Variant,
    /// Weight-decay coefficient; the loss adds `½λ‖Θ‖²`.
    pub lambda: f64,
    pub activation: Activation,
}

impl ModelConfig {
    /// Paper-scale defaults: k = d = 100, λ = 1e-5, tanh scoring, the three
    /// standard demographic tasks.
    pub fn standard(num_companies: usize, variant: Variant) -> Self {
        ModelConfig {
            num_companies,
            k: 100,
            d: 100,
            tasks: standard_tasks(),
            variant,
            lambda: 1e-5,
            activation: Activation::Tanh,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_companies == 0 || self.k == 0 || self.d == 0 {
            return Err(Error::InvalidArgument(
                "num_companies, k and d must all be positive".into(),
            ));
        }
        if self.tasks.is_empty() || self.tasks.iter().any(|t| t.num_classes < 2) {
            return Err(Error::InvalidArgument(
                "need at least one task with at least two classes".into(),
            ));
        }
        Ok(())
    }

    /// Width of the pooled user representation a head consumes.
    pub fn head_dim(&self) -> usize {
        if self.variant.has_transform() {
            self.d
        } else {
            self.k
        }
    }

    pub fn task_names(&self) -> Vec<String> {
        self.tasks.iter().map(|t| t.name.clone()).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        self.tasks.iter().map(|t| t.num_classes).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let json = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: ModelConfig = serde_json::from_str(&json)?;
        config.validate()?;
        Ok(config)
    }
}

pub fn standard_tasks() -> Vec<TaskSpec> {
    TASK_NAMES
        .iter()
        .zip(CLASS_COUNTS)
        .map(|(name, num_classes)| TaskSpec { name: name.to_string(), num_classes })
        .collect()
}

fn uniform_init(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize) -> Matrix {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Creates all trainable tensors for the variant, uniformly initialized in
/// `[−1/√fan_in, +1/√fan_in]`; attention biases start at zero.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ParamStore> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    if config.variant.shares_embedding() {
        store.insert("E", uniform_init(&mut rng, config.num_companies, config.k, config.k));
    }
    for task in &config.tasks {
        if !config.variant.shares_embedding() {
            store.insert(
                &format!("E.{}", task.name),
                uniform_init(&mut rng, config.num_companies, config.k, config.k),
            );
        }
        if config.variant.has_transform() {
            store.insert(
                &format!("T.{}", task.name),
                uniform_init(&mut rng, config.k, config.d, config.k),
            );
        }
        if config.variant.has_attention() {
            store.insert(
                &format!("s.{}", task.name),
                uniform_init(&mut rng, config.d, 1, config.d),
            );
            store.insert(&format!("b.{}", task.name), Matrix::zeros(1, 1));
        }
        store.insert(
            &format!("O.{}", task.name),
            uniform_init(&mut rng, task.num_classes, config.head_dim(), config.head_dim()),
        );
    }
    Ok(store)
}

/// Per-task intermediates for one user.
#[derive(Debug, Clone)]
pub struct TaskTrace {
    /// The B×dim rows that get pooled: transformed embeddings for ETN/ETNA,
    /// raw embedding rows for JNE/SEP.
    pub v: Matrix,
    /// Attention scores after the activation; empty for mean pooling.
    pub z: Vec<f64>,
    /// Pooling weights; softmax of `z` under attention, uniform otherwise.
    pub alpha: Vec<f64>,
    /// Pooled user representation for this task.
    pub u: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct UserTrace {
    /// Deduplicated company ids, in the order given to `forward`.
    pub ids: Vec<usize>,
    /// Gathered shared-embedding rows when the transform needs them for the
    /// backward pass (ETN/ETNA); otherwise `v` itself is the gather.
    pub shared_x: Option<Matrix>,
    pub tasks: Vec<TaskTrace>,
}

#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub users: Vec<UserTrace>,
}

impl ForwardTrace {
    /// Largest deviation of any α row or probability row from summing to 1.
    pub fn max_normalization_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for user in &self.users {
            for task in &user.tasks {
                let alpha_sum: f64 = task.alpha.iter().sum();
                let prob_sum: f64 = task.probs.iter().sum();
                worst = worst.max((alpha_sum - 1.0).abs()).max((prob_sum - 1.0).abs());
            }
        }
        worst
    }
}

/// `u = Σᵢ αᵢ vᵢ`; the mean-pooling variants use this same kernel with
/// uniform weights, so freezing attention to uniform reproduces them
/// bit-for-bit.
fn pool_weighted(v: &Matrix, alpha: &[f64]) -> Vec<f64> {
    let dim = v.cols();
    let mut u = vec![0.0; dim];
    for (i, &a) in alpha.iter().enumerate() {
        for (uj, vj) in u.iter_mut().zip(v.row(i)) {
            *uj += a * vj;
        }
    }
    u
}

fn head_forward(o: &Matrix, u: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let logits: Vec<f64> =
        (0..o.rows()).map(|c| o.row(c).iter().zip(u).map(|(w, x)| w * x).sum()).collect();
    let mut probs = logits.clone();
    softmax_in_place(&mut probs);
    (logits, probs)
}

/// Forward pass for one user over all tasks. `ids` must be nonempty and
/// deduplicated upstream; the given order is preserved.
pub fn forward_user(store: &ParamStore, config: &ModelConfig, ids: &[usize]) -> Result<UserTrace> {
    if ids.is_empty() {
        return Err(Error::InvalidArgument("empty deduplicated history".into()));
    }
    let b = ids.len();
    let shared_x = if config.variant.shares_embedding() {
        Some(gather_rows(store.param("E"), ids)?)
    } else {
        None
    };

    let mut tasks = Vec::with_capacity(config.tasks.len());
    for task in &config.tasks {
        let v = match config.variant {
            Variant::Jne => shared_x.clone().unwrap(),
            Variant::Sep => gather_rows(store.param(&format!("E.{}", task.name)), ids)?,
            Variant::Etn | Variant::Etna => {
                matmul(shared_x.as_ref().unwrap(), store.param(&format!("T.{}", task.name)))?
            }
        };

        let (z, alpha) = if config.variant.has_attention() {
            let s = store.param(&format!("s.{}", task.name));
            let bias = store.param(&format!("b.{}", task.name)).get(0, 0);
            let z: Vec<f64> = (0..b)
                .map(|i| {
                    let score: f64 =
                        v.row(i).iter().zip(s.data()).map(|(vj, sj)| vj * sj).sum();
                    config.activation.apply(score + bias)
                })
                .collect();
            let mut alpha = z.clone();
            softmax_in_place(&mut alpha);
            (z, alpha)
        } else {
            (Vec::new(), vec![1.0 / b as f64; b])
        };

        let u = pool_weighted(&v, &alpha);
        let (logits, probs) = head_forward(store.param(&format!("O.{}", task.name)), &u);
        tasks.push(TaskTrace { v, z, alpha, u, logits, probs });
    }

    // Keep the gather only where backward needs it separately from v.
    let shared_x = if config.variant.has_transform() { shared_x } else { None };
    Ok(UserTrace { ids: ids.to_vec(), shared_x, tasks })
}

/// Forward pass over a batch of users.
pub fn forward(
    store: &ParamStore,
    config: &ModelConfig,
    histories: &[Vec<usize>],
) -> Result<ForwardTrace> {
    let users = histories
        .iter()
        .map(|ids| forward_user(store, config, ids))
        .collect::<Result<Vec<_>>>()?;
    Ok(ForwardTrace { users })
}

#[derive(Debug, Clone, Copy)]
pub struct MaskedLoss {
    pub value: f64,
    /// Number of observed labels whose probability hit the clamp floor.
    pub clamp_count: usize,
}

/// Negative log-likelihood summed over observed (user, task) pairs under
/// the mask, plus the `½λ‖Θ‖²` weight-decay term.
pub fn masked_loss(
    trace: &ForwardTrace,
    labels: &[Vec<usize>],
    observed: &[Vec<bool>],
    lambda: f64,
    store: &ParamStore,
) -> MaskedLoss {
    let mut value = 0.0;
    let mut clamp_count = 0;
    for ((user, user_labels), user_observed) in trace.users.iter().zip(labels).zip(observed) {
        for (task_idx, task) in user.tasks.iter().enumerate() {
            if !user_observed[task_idx] {
                continue;
            }
            let p = task.probs[user_labels[task_idx]];
            if p < PROB_CLAMP {
                clamp_count += 1;
                value -= PROB_CLAMP.ln();
            } else {
                value -= p.ln();
            }
        }
    }
    if lambda != 0.0 {
        value += 0.5 * lambda * store.squared_norm();
    }
    MaskedLoss { value, clamp_count }
}

/// Hand-derived backward pass. Accumulates into the store's gradient
/// buffers (the caller zeroes them); adds the weight-decay gradient `λθ`
/// once per call, matching one `masked_loss` evaluation.
///
/// Gradients stay within task scope: only the loss terms of task m touch
/// `T.m`, `s.m`, `b.m`, `O.m` (and `E.m` for SEP), while the shared
/// embedding accumulates from every observed task.
pub fn backward(
    trace: &ForwardTrace,
    labels: &[Vec<usize>],
    observed: &[Vec<bool>],
    config: &ModelConfig,
    store: &mut ParamStore,
    lambda: f64,
) -> Result<()> {
    for ((user, user_labels), user_observed) in trace.users.iter().zip(labels).zip(observed) {
        let b = user.ids.len();
        // dX collects gradients flowing into the shared embedding rows from
        // all tasks of this user.
        let mut d_shared_x: Option<Matrix> =
            config.variant.shares_embedding().then(|| Matrix::zeros(b, config.k));

        for (task_idx, task) in user.tasks.iter().enumerate() {
            if !user_observed[task_idx] {
                continue;
            }
            let label = user_labels[task_idx];
            if task.probs[label] < PROB_CLAMP {
                // The loss used the clamped constant; its gradient is zero.
                continue;
            }
            let task_name = &config.tasks[task_idx].name;
            let dim = config.head_dim();

            // Softmax + NLL head: dlogits = p − onehot(y).
            let mut d_logits = task.probs.clone();
            d_logits[label] -= 1.0;

            // dO += dlogits ⊗ u, du = Oᵀ dlogits.
            let mut du = vec![0.0; dim];
            {
                let o = store.param(&format!("O.{task_name}")).clone();
                let d_o = store.grad_mut(&format!("O.{task_name}"));
                for (c, &dl) in d_logits.iter().enumerate() {
                    let o_row = o.row(c);
                    let g_row = d_o.row_mut(c);
                    for j in 0..dim {
                        g_row[j] += dl * task.u[j];
                        du[j] += dl * o_row[j];
                    }
                }
            }

            // Pooling u = Σ αᵢ vᵢ: dvᵢ = αᵢ du, dαᵢ = vᵢ·du.
            let mut d_v = Matrix::zeros(b, dim);
            for i in 0..b {
                let row = d_v.row_mut(i);
                for (r, &dj) in row.iter_mut().zip(&du) {
                    *r = task.alpha[i] * dj;
                }
            }

            if config.variant.has_attention() {
                let d_alpha: Vec<f64> = (0..b)
                    .map(|i| task.v.row(i).iter().zip(&du).map(|(v, d)| v * d).sum())
                    .collect();
                // Softmax backward: dz = α ⊙ (dα − α·dα).
                let dot: f64 = task.alpha.iter().zip(&d_alpha).map(|(a, d)| a * d).sum();
                // Activation backward through z = f(V·s + b).
                let d_pre: Vec<f64> = (0..b)
                    .map(|i| {
                        let dz = task.alpha[i] * (d_alpha[i] - dot);
                        dz * config.activation.derivative_from_output(task.z[i])
                    })
                    .collect();

                let s = store.param(&format!("s.{task_name}")).clone();
                {
                    let d_b = store.grad_mut(&format!("b.{task_name}"));
                    let sum: f64 = d_pre.iter().sum();
                    d_b.data_mut()[0] += sum;
                }
                {
                    let d_s = store.grad_mut(&format!("s.{task_name}"));
                    for (i, &dp) in d_pre.iter().enumerate() {
                        for (g, vj) in d_s.data_mut().iter_mut().zip(task.v.row(i)) {
                            *g += dp * vj;
                        }
                    }
                }
                for (i, &dp) in d_pre.iter().enumerate() {
                    let row = d_v.row_mut(i);
                    for (r, sj) in row.iter_mut().zip(s.data()) {
                        *r += dp * sj;
                    }
                }
            }

            match config.variant {
                Variant::Jne => {
                    d_shared_x.as_mut().unwrap().add_scaled(&d_v, 1.0)?;
                }
                Variant::Sep => {
                    scatter_add_rows(store.grad_mut(&format!("E.{task_name}")), &user.ids, &d_v)?;
                }
                Variant::Etn | Variant::Etna => {
                    // V = X·T: dT += Xᵀ dV, dX += dV Tᵀ.
                    let x = user.shared_x.as_ref().unwrap();
                    {
                        let d_t = store.grad_mut(&format!("T.{task_name}"));
                        for i in 0..b {
                            let x_row = x.row(i);
                            let dv_row = d_v.row(i);
                            for (a, &xa) in x_row.iter().enumerate() {
                                if xa == 0.0 {
                                    continue;
                                }
                                let g_row = d_t.row_mut(a);
                                for (g, &dv) in g_row.iter_mut().zip(dv_row) {
                                    *g += xa * dv;
                                }
                            }
                        }
                    }
                    let t = store.param(&format!("T.{task_name}"));
                    let dx = d_shared_x.as_mut().unwrap();
                    for i in 0..b {
                        let dv_row = d_v.row(i);
                        let dx_row = dx.row_mut(i);
                        for (a, r) in dx_row.iter_mut().enumerate() {
                            let t_row = t.row(a);
                            *r += dv_row.iter().zip(t_row).map(|(dv, tj)| dv * tj).sum::<f64>();
                        }
                    }
                }
            }
        }

        if let Some(dx) = d_shared_x {
            scatter_add_rows(store.grad_mut("E"), &user.ids, &dx)?;
        }
    }

    store.add_weight_decay_grads(lambda);
    Ok(())
}

/// Per-user, per-task class probabilities and argmax labels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionSet {
    pub user_ids: Vec<String>,
    pub task_names: Vec<String>,
    /// user × task × class.
    pub probabilities: Vec<Vec<Vec<f64>>>,
    /// user × task argmax labels, lowest class index on ties.
    pub labels: Vec<Vec<usize>>,
}

/// Argmax with deterministic lowest-index tie-break.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Predicts every listed user, streaming one user at a time so no trace is
/// retained.
pub fn predict(
    store: &ParamStore,
    config: &ModelConfig,
    user_ids: &[String],
    histories: &[Vec<usize>],
) -> Result<PredictionSet> {
    let mut probabilities = Vec::with_capacity(histories.len());
    let mut labels = Vec::with_capacity(histories.len());
    for ids in histories {
        let trace = forward_user(store, config, ids)?;
        let probs: Vec<Vec<f64>> = trace.tasks.iter().map(|t| t.probs.clone()).collect();
        labels.push(probs.iter().map(|p| argmax(p)).collect());
        probabilities.push(probs);
    }
    Ok(PredictionSet {
        user_ids: user_ids.to_vec(),
        task_names: config.task_names(),
        probabilities,
        labels,
    })
}

/// Per-company attention scores `z = f(E_c·T·s + b)`, one row per task.
/// The score depends only on the company, so rows are comparable across the
/// vocabulary; errors for variants without attention.
pub fn attention_scores(store: &ParamStore, config: &ModelConfig) -> Result<Matrix> {
    if !config.variant.has_attention() {
        return Err(Error::InvalidArgument(format!(
            "variant {} has no attention parameters; only etna scores companies",
            config.variant.name()
        )));
    }
    let e = store.param("E");
    let mut scores = Matrix::zeros(config.tasks.len(), config.num_companies);
    for (task_idx, task) in config.tasks.iter().enumerate() {
        let t = store.param(&format!("T.{}", task.name));
        let s = store.param(&format!("s.{}", task.name));
        let bias = store.param(&format!("b.{}", task.name)).get(0, 0);
        let v = matmul(e, t)?;
        for company in 0..config.num_companies {
            let score: f64 = v.row(company).iter().zip(s.data()).map(|(vj, sj)| vj * sj).sum();
            scores.set(task_idx, company, config.activation.apply(score + bias));
        }
    }
    Ok(scores)
}

/// Builds a deterministic toy instance (6 companies, 4 users, k = d = 5)
/// and runs the finite-difference check for one variant. `corrupt` doubles
/// one gradient entry as a negative control.
pub fn toy_grad_check(variant: Variant, seed: u64, corrupt: bool) -> Result<GradCheckReport> {
    let config = ModelConfig {
        num_companies: 6,
        k: 5,
        d: 5,
        tasks: standard_tasks(),
        variant,
        lambda: 1e-2,
        activation: Activation::Tanh,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let histories: Vec<Vec<usize>> = (0..4)
        .map(|_| {
            let len = rng.random_range(1..=4usize);
            let mut ids: Vec<usize> = (0..len).map(|_| rng.random_range(0..6)).collect();
            ids.sort_unstable();
            ids.dedup();
            ids
        })
        .collect();
    let labels: Vec<Vec<usize>> = (0..4)
        .map(|_| config.tasks.iter().map(|t| rng.random_range(0..t.num_classes)).collect())
        .collect();
    let mut observed: Vec<Vec<bool>> = (0..4)
        .map(|_| (0..config.tasks.len()).map(|_| rng.random::<f64>() < 0.7).collect())
        .collect();
    // Keep the check meaningful: at least one observed label.
    observed[0][0] = true;

    let mut store = init_params(&config, seed)?;
    let trace = forward(&store, &config, &histories)?;
    backward(&trace, &labels, &observed, &config, &mut store, config.lambda)?;
    if corrupt {
        store.grad_mut("O.gender").data_mut()[0] *= 2.0;
    }

    let loss_config = config.clone();
    let loss_histories = histories.clone();
    grad_check(
        &mut store,
        move |s| {
            let trace = forward(s, &loss_config, &loss_histories).expect("toy forward");
            masked_loss(&trace, &labels, &observed, loss_config.lambda, s).value
        },
        1e-5,
        1e-4,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_config(variant: Variant, k: usize, d: usize) -> ModelConfig {
        ModelConfig {
            num_companies: 6,
            k,
            d,
            tasks: standard_tasks(),
            variant,
            lambda: 0.0,
            activation: Activation::Tanh,
        }
    }

    fn all_observed(n: usize) -> Vec<Vec<bool>> {
        vec![vec![true; 3]; n]
    }

    #[test]
    fn zero_params_give_uniform_probabilities() {
        let config = toy_config(Variant::Etna, 4, 4);
        let mut store = init_params(&config, 0).unwrap();
        for name in store.names().map(str::to_string).collect::<Vec<_>>() {
            store.param_mut(&name).fill(0.0);
        }
        let trace = forward(&store, &config, &[vec![0, 2, 5]]).unwrap();
        for (task, spec) in trace.users[0].tasks.iter().zip(&config.tasks) {
            let expect = 1.0 / spec.num_classes as f64;
            for &p in &task.probs {
                assert!((p - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn singleton_history_pools_to_its_own_row() {
        let config = toy_config(Variant::Etna, 3, 3);
        let store = init_params(&config, 1).unwrap();
        let trace = forward(&store, &config, &[vec![4]]).unwrap();
        let task = &trace.users[0].tasks[0];
        assert_eq!(task.alpha, vec![1.0]);
        assert_eq!(task.u, task.v.row(0).to_vec());
    }

    #[test]
    fn zero_query_vector_means_mean_pooling() {
        let config = toy_config(Variant::Etna, 3, 3);
        let mut store = init_params(&config, 2).unwrap();
        store.param_mut("s.gender").fill(0.0);
        store.param_mut("b.gender").fill(0.0);
        let trace = forward(&store, &config, &[vec![0, 1, 5]]).unwrap();
        let task = &trace.users[0].tasks[0];
        for &a in &task.alpha {
            assert!((a - 1.0 / 3.0).abs() < 1e-15);
        }
        let mean: Vec<f64> =
            (0..3).map(|j| (0..3).map(|i| task.v.get(i, j)).sum::<f64>() / 3.0).collect();
        for (u, m) in task.u.iter().zip(&mean) {
            assert!((u - m).abs() < 1e-12);
        }
    }

    #[test]
    fn scalar_attention_matches_hand_evaluation() {
        // d = 1, V = [[1],[2]], s = [1], b = 0: z = [tanh 1, tanh 2],
        // alpha = softmax(z), u = alpha1*1 + alpha2*2.
        let config = ModelConfig {
            num_companies: 2,
            k: 1,
            d: 1,
            tasks: vec![TaskSpec { name: "gender".into(), num_classes: 2 }],
            variant: Variant::Etna,
            lambda: 0.0,
            activation: Activation::Tanh,
        };
        let mut store = init_params(&config, 0).unwrap();
        *store.param_mut("E") = Matrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        *store.param_mut("T.gender") = Matrix::identity(1);
        *store.param_mut("s.gender") = Matrix::from_vec(1, 1, vec![1.0]).unwrap();
        store.param_mut("b.gender").fill(0.0);

        let trace = forward(&store, &config, &[vec![0, 1]]).unwrap();
        let task = &trace.users[0].tasks[0];
        let z1 = 1.0f64.tanh();
        let z2 = 2.0f64.tanh();
        let (e1, e2) = ((z1 - z2).exp(), 1.0);
        let a1 = e1 / (e1 + e2);
        let a2 = e2 / (e1 + e2);
        assert!((task.z[0] - z1).abs() < 1e-15);
        assert!((task.z[1] - z2).abs() < 1e-15);
        assert!((task.alpha[0] - a1).abs() < 1e-15);
        assert!((task.alpha[1] - a2).abs() < 1e-15);
        assert!((task.u[0] - (a1 + 2.0 * a2)).abs() < 1e-15);
    }

    #[test]
    fn identity_transform_is_a_copy() {
        let config = toy_config(Variant::Etn, 4, 4);
        let mut store = init_params(&config, 3).unwrap();
        for task in &config.tasks {
            *store.param_mut(&format!("T.{}", task.name)) = Matrix::identity(4);
        }
        let trace = forward(&store, &config, &[vec![1, 3]]).unwrap();
        let x = gather_rows(store.param("E"), &[1, 3]).unwrap();
        for task in &trace.users[0].tasks {
            assert_eq!(task.v, x);
        }
    }

    #[test]
    fn jne_equals_etn_with_identity_transform() {
        let jne_config = toy_config(Variant::Jne, 4, 4);
        let jne = init_params(&jne_config, 7).unwrap();

        let etn_config = toy_config(Variant::Etn, 4, 4);
        let mut etn = init_params(&etn_config, 7).unwrap();
        *etn.param_mut("E") = jne.param("E").clone();
        for task in &etn_config.tasks {
            *etn.param_mut(&format!("T.{}", task.name)) = Matrix::identity(4);
            *etn.param_mut(&format!("O.{}", task.name)) =
                jne.param(&format!("O.{}", task.name)).clone();
        }

        let histories = vec![vec![0, 2, 3], vec![5], vec![1, 4]];
        let a = forward(&jne, &jne_config, &histories).unwrap();
        let b = forward(&etn, &etn_config, &histories).unwrap();
        for (ua, ub) in a.users.iter().zip(&b.users) {
            for (ta, tb) in ua.tasks.iter().zip(&ub.tasks) {
                for (pa, pb) in ta.probs.iter().zip(&tb.probs) {
                    assert!((pa - pb).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn etna_with_frozen_attention_reproduces_etn_exactly() {
        let etn_config = toy_config(Variant::Etn, 5, 3);
        let etn = init_params(&etn_config, 11).unwrap();

        let etna_config = toy_config(Variant::Etna, 5, 3);
        let mut etna = init_params(&etna_config, 11).unwrap();
        *etna.param_mut("E") = etn.param("E").clone();
        for task in &etna_config.tasks {
            for tensor in ["T", "O"] {
                *etna.param_mut(&format!("{tensor}.{}", task.name)) =
                    etn.param(&format!("{tensor}.{}", task.name)).clone();
            }
            etna.param_mut(&format!("s.{}", task.name)).fill(0.0);
            etna.param_mut(&format!("b.{}", task.name)).fill(0.0);
        }

        let histories = vec![vec![0, 1, 2, 4], vec![3, 5]];
        let a = forward(&etn, &etn_config, &histories).unwrap();
        let b = forward(&etna, &etna_config, &histories).unwrap();
        for (ua, ub) in a.users.iter().zip(&b.users) {
            for (ta, tb) in ua.tasks.iter().zip(&ub.tasks) {
                assert_eq!(ta.u, tb.u, "pooled representations must be bit-identical");
                assert_eq!(ta.probs, tb.probs);
            }
        }
    }

    #[test]
    fn single_company_corpus_collapses_predictions() {
        let config = toy_config(Variant::Etna, 4, 4);
        let store = init_params(&config, 5).unwrap();
        let ids: Vec<String> = (0..3).map(|i| format!("u{i}")).collect();
        let histories = vec![vec![2], vec![2], vec![2]];
        let preds = predict(&store, &config, &ids, &histories).unwrap();
        assert_eq!(preds.labels[0], preds.labels[1]);
        assert_eq!(preds.labels[1], preds.labels[2]);
        assert_eq!(preds.probabilities[0], preds.probabilities[2]);
    }

    #[test]
    fn uniform_probability_loss_is_sum_of_log_class_counts() {
        let config = toy_config(Variant::Etna, 4, 4);
        let mut store = init_params(&config, 0).unwrap();
        for name in store.names().map(str::to_string).collect::<Vec<_>>() {
            store.param_mut(&name).fill(0.0);
        }
        let trace = forward(&store, &config, &[vec![0, 1]]).unwrap();
        let loss = masked_loss(&trace, &[vec![0, 0, 0]], &all_observed(1), 0.0, &store);
        let expected = 2.0f64.ln() + 4.0f64.ln() + 2.0f64.ln();
        assert!((loss.value - expected).abs() < 1e-12, "{} vs {expected}", loss.value);
        assert_eq!(loss.clamp_count, 0);
    }

    #[test]
    fn perfect_predictions_leave_only_the_decay_term() {
        let config = toy_config(Variant::Etna, 2, 2);
        let store = init_params(&config, 1).unwrap();
        let task = |c: usize, label: usize| {
            let mut probs = vec![0.0; c];
            probs[label] = 1.0;
            TaskTrace {
                v: Matrix::zeros(1, 2),
                z: vec![0.0],
                alpha: vec![1.0],
                u: vec![0.0; 2],
                logits: vec![0.0; c],
                probs,
            }
        };
        let trace = ForwardTrace {
            users: vec![UserTrace {
                ids: vec![0],
                shared_x: None,
                tasks: vec![task(2, 1), task(4, 2), task(2, 0)],
            }],
        };
        let lambda = 0.3;
        let loss = masked_loss(&trace, &[vec![1, 2, 0]], &all_observed(1), lambda, &store);
        let expected = 0.5 * lambda * store.squared_norm();
        assert!((loss.value - expected).abs() < 1e-12);
    }

    #[test]
    fn fully_unmasked_user_contributes_nothing() {
        let config = toy_config(Variant::Etn, 4, 4);
        let store = init_params(&config, 9).unwrap();
        let trace = forward(&store, &config, &[vec![0, 3]]).unwrap();
        let loss = masked_loss(&trace, &[vec![1, 3, 0]], &[vec![false; 3]], 0.0, &store);
        assert_eq!(loss.value, 0.0);
    }

    #[test]
    fn zero_probability_label_is_clamped_and_counted() {
        let config = toy_config(Variant::Etna, 2, 2);
        let store = init_params(&config, 1).unwrap();
        let trace = ForwardTrace {
            users: vec![UserTrace {
                ids: vec![0],
                shared_x: None,
                tasks: vec![TaskTrace {
                    v: Matrix::zeros(1, 2),
                    z: vec![0.0],
                    alpha: vec![1.0],
                    u: vec![0.0; 2],
                    logits: vec![0.0; 2],
                    probs: vec![0.0, 1.0],
                }],
            }],
        };
        let loss = masked_loss(&trace, &[vec![0]], &[vec![true]], 0.0, &store);
        assert_eq!(loss.clamp_count, 1);
        assert!((loss.value + PROB_CLAMP.ln()).abs() < 1e-12);
    }

    #[test]
    fn grad_check_passes_for_every_variant() {
        for variant in Variant::ALL {
            for seed in 0..3 {
                let report = toy_grad_check(variant, seed, false).unwrap();
                assert!(
                    report.passed(),
                    "variant {} seed {seed}: max rel err {}",
                    variant.name(),
                    report.max_rel_err
                );
            }
        }
    }

    #[test]
    fn corrupted_gradient_fails_grad_check() {
        let report = toy_grad_check(Variant::Etna, 0, true).unwrap();
        assert!(!report.passed());
    }

    #[test]
    fn hiding_a_task_zeroes_exactly_its_private_gradients() {
        let config = toy_config(Variant::Etna, 5, 5);
        let mut store = init_params(&config, 13).unwrap();
        let histories = vec![vec![0, 2], vec![1, 3, 4]];
        let labels = vec![vec![0, 1, 1], vec![1, 3, 0]];
        // Age (task 1) hidden everywhere.
        let observed = vec![vec![true, false, true]; 2];
        let trace = forward(&store, &config, &histories).unwrap();
        backward(&trace, &labels, &observed, &config, &mut store, 0.0).unwrap();

        for tensor in ["T", "s", "b", "O"] {
            let grad = store.grad(&format!("{tensor}.age"));
            assert!(grad.data().iter().all(|&g| g == 0.0), "{tensor}.age must stay zero");
        }
        assert!(store.grad("O.gender").data().iter().any(|&g| g != 0.0));
        assert!(store.grad("E").data().iter().any(|&g| g != 0.0));
    }

    #[test]
    fn duplicate_transactions_do_not_change_gradients() {
        // Dedup happens upstream; doubled raw histories produce the same
        // unique set, hence identical forward and backward results.
        use crate::corpus::unique_history;
        let once = unique_history(&[(5, 1.0), (2, 3.0)]).unwrap();
        let doubled = unique_history(&[(5, 1.0), (2, 3.0), (5, 9.0), (2, 0.5)]).unwrap();
        assert_eq!(once, doubled);

        let config = toy_config(Variant::Etna, 5, 5);
        let mut a = init_params(&config, 17).unwrap();
        let mut b = a.clone();
        let labels = vec![vec![1, 2, 0]];
        let observed = all_observed(1);
        let trace_a = forward(&a, &config, &[once]).unwrap();
        backward(&trace_a, &labels, &observed, &config, &mut a, 0.0).unwrap();
        let trace_b = forward(&b, &config, &[doubled]).unwrap();
        backward(&trace_b, &labels, &observed, &config, &mut b, 0.0).unwrap();
        for name in a.names().map(str::to_string).collect::<Vec<_>>() {
            assert_eq!(a.grad(&name), b.grad(&name));
        }
    }

    #[test]
    fn permuting_the_history_permutes_alpha_and_preserves_outputs() {
        let config = toy_config(Variant::Etna, 5, 5);
        let store = init_params(&config, 19).unwrap();
        let ids = vec![0, 2, 3, 5];
        let permuted = vec![3, 0, 5, 2];
        let perm_of = [2usize, 0, 3, 1]; // permuted[i] = ids[perm_of[i]]

        let a = forward(&store, &config, &[ids]).unwrap();
        let b = forward(&store, &config, &[permuted]).unwrap();
        for (ta, tb) in a.users[0].tasks.iter().zip(&b.users[0].tasks) {
            for (i, &src) in perm_of.iter().enumerate() {
                assert!((tb.alpha[i] - ta.alpha[src]).abs() < 1e-12);
            }
            for (ua, ub) in ta.u.iter().zip(&tb.u) {
                assert!((ua - ub).abs() < 1e-12);
            }
            for (la, lb) in ta.logits.iter().zip(&tb.logits) {
                assert!((la - lb).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn predict_ties_break_to_lowest_class() {
        assert_eq!(argmax(&[0.25, 0.25, 0.25, 0.25]), 0);
        assert_eq!(argmax(&[0.2, 0.8]), 1);
        // Agreement with a linear-scan oracle on random vectors.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let v: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..1.0)).collect();
            let mut best = 0;
            for i in 0..v.len() {
                if v[i] > v[best] {
                    best = i;
                }
            }
            assert_eq!(argmax(&v), best);
        }
    }

    #[test]
    fn config_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let config = ModelConfig::standard(494, Variant::Etna);
        let path = dir.path().join("config.json");
        config.save(&path).unwrap();
        let back = ModelConfig::load(&path).unwrap();
        assert_eq!(back.variant, Variant::Etna);
        assert_eq!(back.k, 100);
        assert_eq!(back.tasks, config.tasks);
    }
}
