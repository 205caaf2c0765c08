//! Transaction corpus: ingestion of transaction/label/category CSV files,
//! per-user histories, partial-label masks, and train/valid/test splits.
//!
//! File formats are headerless UTF-8 CSV:
//!   transactions.csv  user_id,company_id,amount
//!   labels.csv        user_id,gender,age,marital   (integer class codes)
//!   categories.csv    company_id,category

mod synth;

pub use synth::{synth_corpus, SyntheticSpec};

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Prediction task names, in canonical order.
pub const TASK_NAMES: [&str; 3] = ["gender", "age", "marital"];
/// Classes per task: gender {female, male}, age {young, adult, middle, old},
/// marital {married, single}.
pub const CLASS_COUNTS: [usize; 3] = [2, 4, 2];
pub const NUM_TASKS: usize = 3;

/// One user's demographic attributes as class indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeLabels {
    pub gender: usize,
    pub age: usize,
    pub marital: usize,
}

impl AttributeLabels {
    pub fn new(gender: usize, age: usize, marital: usize) -> Result<Self> {
        let labels = AttributeLabels { gender, age, marital };
        for (task, &value) in labels.as_array().iter().enumerate() {
            if value >= CLASS_COUNTS[task] {
                return Err(Error::InvalidArgument(format!(
                    "{} class {} out of range (< {})",
                    TASK_NAMES[task], value, CLASS_COUNTS[task]
                )));
            }
        }
        Ok(labels)
    }

    pub fn as_array(&self) -> [usize; NUM_TASKS] {
        [self.gender, self.age, self.marital]
    }

    pub fn get(&self, task: usize) -> usize {
        self.as_array()[task]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: String,
    /// (company id, purchased amount) in file order.
    pub history: Vec<(usize, f64)>,
    pub labels: AttributeLabels,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransactionCorpus {
    pub users: Vec<UserRecord>,
    /// Company vocabulary size; every id in any history is below this.
    pub num_companies: usize,
    /// Industrial category per company id; may be empty.
    pub company_categories: BTreeMap<usize, String>,
}

impl TransactionCorpus {
    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    /// Label matrix in task order, one row per user.
    pub fn label_matrix(&self) -> Vec<Vec<usize>> {
        self.users.iter().map(|u| u.labels.as_array().to_vec()).collect()
    }

    /// Deduplicated history ids for every user, in corpus order.
    pub fn unique_histories(&self) -> Vec<Vec<usize>> {
        self.users
            .iter()
            .map(|u| unique_history(&u.history).expect("corpus invariant: nonempty history"))
            .collect()
    }

    pub fn category(&self, company: usize) -> &str {
        self.company_categories.get(&company).map(String::as_str).unwrap_or("")
    }

    /// Index of each user id.
    pub fn id_index(&self) -> HashMap<&str, usize> {
        self.users.iter().enumerate().map(|(i, u)| (u.user_id.as_str(), i)).collect()
    }
}

/// Deduplicates a history into its company-id set, sorted ascending so the
/// order is deterministic. Amounts are discarded.
pub fn unique_history(history: &[(usize, f64)]) -> Result<Vec<usize>> {
    if history.is_empty() {
        return Err(Error::InvalidArgument("empty transaction history".into()));
    }
    let mut ids: Vec<usize> = history.iter().map(|&(c, _)| c).collect();
    ids.sort_unstable();
    ids.dedup();
    Ok(ids)
}

/// Per-user, per-attribute observed flags defining a partial-label
/// experiment. Unknown attributes are exactly the complement.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMask {
    pub observed: Vec<Vec<bool>>,
    pub observed_ratio: f64,
    pub seed: u64,
}

impl LabelMask {
    pub fn all_observed(num_users: usize) -> Self {
        LabelMask {
            observed: vec![vec![true; NUM_TASKS]; num_users],
            observed_ratio: 1.0,
            seed: 0,
        }
    }

    pub fn all_unknown(num_users: usize) -> Self {
        LabelMask {
            observed: vec![vec![false; NUM_TASKS]; num_users],
            observed_ratio: 0.0,
            seed: 0,
        }
    }

    pub fn num_users(&self) -> usize {
        self.observed.len()
    }

    pub fn observed_count(&self) -> usize {
        self.observed.iter().flatten().filter(|&&b| b).count()
    }

    /// Complement mask: observed and unknown swap roles.
    pub fn complement(&self) -> LabelMask {
        LabelMask {
            observed: self
                .observed
                .iter()
                .map(|row| row.iter().map(|b| !b).collect())
                .collect(),
            observed_ratio: 1.0 - self.observed_ratio,
            seed: self.seed,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct MaskFile {
    ratio: f64,
    seed: u64,
    num_users: usize,
    num_attrs: usize,
    /// Run-length encoding of the row-major flattened observed flags:
    /// [run length, flag value] pairs.
    runs: Vec<(usize, bool)>,
}

impl LabelMask {
    pub fn to_json(&self) -> Result<String> {
        let flat: Vec<bool> = self.observed.iter().flatten().copied().collect();
        let mut runs: Vec<(usize, bool)> = Vec::new();
        for &flag in &flat {
            match runs.last_mut() {
                Some((len, value)) if *value == flag => *len += 1,
                _ => runs.push((1, flag)),
            }
        }
        let file = MaskFile {
            ratio: self.observed_ratio,
            seed: self.seed,
            num_users: self.observed.len(),
            num_attrs: NUM_TASKS,
            runs,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let file: MaskFile = serde_json::from_str(json)?;
        let total: usize = file.runs.iter().map(|(len, _)| len).sum();
        if total != file.num_users * file.num_attrs {
            return Err(Error::InvalidArgument(format!(
                "mask runs decode to {total} flags, expected {}",
                file.num_users * file.num_attrs
            )));
        }
        let mut flat = Vec::with_capacity(total);
        for (len, value) in file.runs {
            flat.extend(std::iter::repeat(value).take(len));
        }
        let observed = flat.chunks(file.num_attrs).map(<[bool]>::to_vec).collect();
        Ok(LabelMask { observed, observed_ratio: file.ratio, seed: file.seed })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let json = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&json)
    }
}

/// Draws `num_splits` masks; each attribute of each user is independently
/// observed with probability `observed_ratio`. Split `i` uses seed
/// `base_seed + i`, so identical inputs reproduce identical masks.
pub fn make_partial_masks(
    corpus: &TransactionCorpus,
    observed_ratio: f64,
    num_splits: usize,
    base_seed: u64,
) -> Result<Vec<LabelMask>> {
    if !(observed_ratio > 0.0 && observed_ratio < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "observed ratio must be in (0, 1), got {observed_ratio}"
        )));
    }
    if num_splits == 0 {
        return Err(Error::InvalidArgument("num_splits must be >= 1".into()));
    }
    let mut masks = Vec::with_capacity(num_splits);
    for split in 0..num_splits as u64 {
        let seed = base_seed + split;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let observed = (0..corpus.num_users())
            .map(|_| (0..NUM_TASKS).map(|_| rng.random::<f64>() < observed_ratio).collect())
            .collect();
        masks.push(LabelMask { observed, observed_ratio, seed });
    }
    Ok(masks)
}

/// Disjoint train/valid/test user-id lists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_ids: Vec<String>,
    pub valid_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

impl SplitSpec {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let json = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&json)?)
    }
}

/// 8:1:1 split sizes: valid and test each take a rounded tenth, the
/// remainder goes to train.
pub fn split_counts(num_users: usize) -> (usize, usize, usize) {
    let tenth = (num_users as f64 / 10.0).round() as usize;
    (num_users - 2 * tenth, tenth, tenth)
}

/// Seeded shuffle followed by a contiguous 8:1:1 partition; train and test
/// users are disjoint by construction.
pub fn make_new_user_split(corpus: &TransactionCorpus, seed: u64) -> Result<SplitSpec> {
    let n = corpus.num_users();
    if n < 10 {
        return Err(Error::InvalidArgument(format!(
            "new-user split needs at least 10 users, corpus has {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let (n_train, n_valid, _) = split_counts(n);
    let ids = |slice: &[usize]| slice.iter().map(|&i| corpus.users[i].user_id.clone()).collect();
    Ok(SplitSpec {
        train_ids: ids(&order[..n_train]),
        valid_ids: ids(&order[n_train..n_train + n_valid]),
        test_ids: ids(&order[n_train + n_valid..]),
    })
}

fn split_fields(line: &str) -> Vec<&str> {
    line.split(',').map(str::trim).collect()
}

/// Loads a corpus from CSV files. Histories are grouped per user in file
/// order; every transaction user must have exactly one labels row.
pub fn load_corpus(
    transactions_path: &Path,
    labels_path: &Path,
    categories_path: Option<&Path>,
) -> Result<TransactionCorpus> {
    let tx_text =
        fs::read_to_string(transactions_path).map_err(|e| Error::io(transactions_path, e))?;

    let mut order: Vec<String> = Vec::new();
    let mut histories: HashMap<String, Vec<(usize, f64)>> = HashMap::new();
    let mut max_company = 0usize;

    for (idx, line) in tx_text.lines().enumerate() {
        let line_no = idx + 1;
        if line.is_empty() {
            continue;
        }
        let fields = split_fields(line);
        if fields.len() != 3 {
            return Err(Error::parse(
                transactions_path,
                line_no,
                format!("expected 3 fields (user_id,company_id,amount), got {}", fields.len()),
            ));
        }
        let company: usize = fields[1].parse().map_err(|_| {
            Error::parse(transactions_path, line_no, format!("bad company id {:?}", fields[1]))
        })?;
        let amount: f64 = fields[2].parse().map_err(|_| {
            Error::parse(transactions_path, line_no, format!("bad amount {:?}", fields[2]))
        })?;
        if !amount.is_finite() || amount < 0.0 {
            return Err(Error::parse(
                transactions_path,
                line_no,
                format!("amount must be finite and >= 0, got {amount}"),
            ));
        }
        max_company = max_company.max(company);
        let user = fields[0].to_string();
        histories.entry(user.clone()).or_insert_with(|| {
            order.push(user.clone());
            Vec::new()
        });
        histories.get_mut(&user).unwrap().push((company, amount));
    }

    let labels_text = fs::read_to_string(labels_path).map_err(|e| Error::io(labels_path, e))?;
    let mut labels: HashMap<String, AttributeLabels> = HashMap::new();
    for (idx, line) in labels_text.lines().enumerate() {
        let line_no = idx + 1;
        if line.is_empty() {
            continue;
        }
        let fields = split_fields(line);
        if fields.len() != 1 + NUM_TASKS {
            return Err(Error::parse(
                labels_path,
                line_no,
                format!(
                    "expected {} fields (user_id,gender,age,marital), got {}",
                    1 + NUM_TASKS,
                    fields.len()
                ),
            ));
        }
        let mut codes = [0usize; NUM_TASKS];
        for (task, code) in codes.iter_mut().enumerate() {
            *code = fields[task + 1].parse().map_err(|_| {
                Error::parse(
                    labels_path,
                    line_no,
                    format!("bad {} code {:?}", TASK_NAMES[task], fields[task + 1]),
                )
            })?;
        }
        let user = fields[0].to_string();
        if !histories.contains_key(&user) {
            return Err(Error::parse(
                labels_path,
                line_no,
                format!("label row for user {user:?} absent from transactions"),
            ));
        }
        let attr = AttributeLabels::new(codes[0], codes[1], codes[2])
            .map_err(|e| Error::parse(labels_path, line_no, e.to_string()))?;
        if labels.insert(user.clone(), attr).is_some() {
            return Err(Error::parse(
                labels_path,
                line_no,
                format!("duplicate label row for user {user:?}"),
            ));
        }
    }

    let mut users = Vec::with_capacity(order.len());
    for user_id in order {
        let history = histories.remove(&user_id).unwrap();
        let labels = *labels.get(&user_id).ok_or_else(|| {
            Error::InvalidArgument(format!("user {user_id:?} has transactions but no label row"))
        })?;
        users.push(UserRecord { user_id, history, labels });
    }
    if users.is_empty() {
        return Err(Error::InvalidArgument("transactions file contains no rows".into()));
    }

    let mut company_categories = BTreeMap::new();
    if let Some(path) = categories_path {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            if line.is_empty() {
                continue;
            }
            let fields = split_fields(line);
            if fields.len() != 2 {
                return Err(Error::parse(
                    path,
                    line_no,
                    format!("expected 2 fields (company_id,category), got {}", fields.len()),
                ));
            }
            let company: usize = fields[0].parse().map_err(|_| {
                Error::parse(path, line_no, format!("bad company id {:?}", fields[0]))
            })?;
            max_company = max_company.max(company);
            company_categories.insert(company, fields[1].to_string());
        }
    }

    Ok(TransactionCorpus { users, num_companies: max_company + 1, company_categories })
}

/// Writes a corpus back out in the standard three-file layout. Amounts carry
/// fixed 6-decimal formatting so artifacts diff cleanly.
pub fn write_corpus_csvs(corpus: &TransactionCorpus, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tx = String::new();
    let mut labels = String::new();
    for user in &corpus.users {
        for &(company, amount) in &user.history {
            tx.push_str(&format!("{},{},{:.6}\n", user.user_id, company, amount));
        }
        let l = user.labels;
        labels.push_str(&format!("{},{},{},{}\n", user.user_id, l.gender, l.age, l.marital));
    }
    let tx_path = dir.join("transactions.csv");
    fs::write(&tx_path, tx).map_err(|e| Error::io(&tx_path, e))?;
    let labels_path = dir.join("labels.csv");
    fs::write(&labels_path, labels).map_err(|e| Error::io(&labels_path, e))?;

    if !corpus.company_categories.is_empty() {
        let mut cats = String::new();
        for (company, category) in &corpus.company_categories {
            cats.push_str(&format!("{company},{category}\n"));
        }
        let path = dir.join("categories.csv");
        fs::write(&path, cats).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Resolves user ids to corpus indices, failing on unknown ids.
pub fn resolve_ids(corpus: &TransactionCorpus, ids: &[String]) -> Result<Vec<usize>> {
    let index = corpus.id_index();
    ids.iter()
        .map(|id| {
            index
                .get(id.as_str())
                .copied()
                .ok_or_else(|| Error::InvalidArgument(format!("unknown user id {id:?}")))
        })
        .collect()
}
