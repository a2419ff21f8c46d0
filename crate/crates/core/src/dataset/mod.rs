//! Interaction ingestion, k-core filtering, leave-one-out splits and the
//! embedding-matrix file format.

mod embedding;
mod io;
mod split;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use embedding::{ids_path, read_embedding_matrix, write_embedding_matrix, EmbeddingMatrix, EMB_MAGIC};
pub use io::{load_interactions, write_interactions, InteractionFormat};
pub use split::{leave_one_out_split, SplitExample, SplitKind, SplitView, Splits};

/// Default truncation length for input prefixes.
pub const DEFAULT_MAX_SEQ_LEN: usize = 20;

/// Default core size used for preprocessing.
pub const DEFAULT_CORE_K: usize = 5;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("schema error at line {line}: missing or empty field `{field}`")]
    Schema { line: usize, field: String },
    #[error("dataset is empty after {k}-core filtering")]
    EmptyAfterFiltering { k: usize },
    #[error("core size must be at least 1")]
    InvalidCore,
    #[error("embedding file has bad magic {found:?}, expected \"EMB1\"")]
    BadMagic { found: [u8; 4] },
    #[error("embedding file is truncated: expected {expected} payload bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("embedding header declares {header_rows} rows but the id sidecar lists {ids}")]
    IdsMismatch { header_rows: usize, ids: usize },
    #[error("embedding matrix is invalid: {0}")]
    InvalidMatrix(String),
    #[error("item `{0}` has no row in the embedding matrix")]
    MissingItem(String),
}

impl DatasetError {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        DatasetError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

/// One raw (user, item, timestamp) record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub user_id: String,
    pub item_id: String,
    pub timestamp: i64,
}

impl Interaction {
    pub fn new(user_id: impl Into<String>, item_id: impl Into<String>, timestamp: i64) -> Self {
        Self {
            user_id: user_id.into(),
            item_id: item_id.into(),
            timestamp,
        }
    }
}

/// Per-user, time-ordered item sequences over a densely indexed catalog.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionDataset {
    items: Vec<String>,
    users: Vec<String>,
    sequences: Vec<Vec<u32>>,
    timestamps: Vec<Vec<i64>>,
}

impl InteractionDataset {
    /// Builds a dataset from already-indexed sequences. Timestamps default to
    /// the position within each sequence.
    pub fn from_sequences(
        items: Vec<String>,
        users: Vec<String>,
        sequences: Vec<Vec<u32>>,
    ) -> Result<Self, DatasetError> {
        let timestamps = sequences
            .iter()
            .map(|s| (0..s.len() as i64).collect())
            .collect();
        Self::with_timestamps(items, users, sequences, timestamps)
    }

    fn with_timestamps(
        items: Vec<String>,
        users: Vec<String>,
        sequences: Vec<Vec<u32>>,
        timestamps: Vec<Vec<i64>>,
    ) -> Result<Self, DatasetError> {
        if users.len() != sequences.len() || timestamps.len() != sequences.len() {
            return Err(DatasetError::InvalidMatrix(format!(
                "{} users but {} sequences",
                users.len(),
                sequences.len()
            )));
        }
        let n_items = items.len() as u32;
        if let Some(bad) = sequences.iter().flatten().find(|&&i| i >= n_items) {
            return Err(DatasetError::InvalidMatrix(format!(
                "item index {bad} out of range for {n_items} items"
            )));
        }
        Ok(Self {
            items,
            users,
            sequences,
            timestamps,
        })
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn users(&self) -> &[String] {
        &self.users
    }

    pub fn sequences(&self) -> &[Vec<u32>] {
        &self.sequences
    }

    pub fn sequence(&self, user: usize) -> &[u32] {
        &self.sequences[user]
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn n_interactions(&self) -> usize {
        self.sequences.iter().map(Vec::len).sum()
    }

    /// Flattens back to raw records, user by user in time order.
    pub fn to_interactions(&self) -> Vec<Interaction> {
        let mut out = Vec::with_capacity(self.n_interactions());
        for ((user, seq), ts) in self.users.iter().zip(&self.sequences).zip(&self.timestamps) {
            for (&item, &t) in seq.iter().zip(ts) {
                out.push(Interaction::new(user.clone(), self.items[item as usize].clone(), t));
            }
        }
        out
    }

    pub fn item_index(&self) -> HashMap<&str, u32> {
        self.items
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i as u32))
            .collect()
    }
}

/// Iterative k-core filter over users and items, followed by grouping into
/// time-sorted sequences.
///
/// Users are indexed by first appearance among the surviving records, items
/// by first appearance along the resulting sequences. Timestamp ties keep
/// input order. Duplicate records are kept and count towards the core
/// thresholds.
pub fn core_filter(interactions: &[Interaction], k: usize) -> Result<InteractionDataset, DatasetError> {
    if k == 0 {
        return Err(DatasetError::InvalidCore);
    }
    let mut user_ix: HashMap<&str, usize> = HashMap::new();
    let mut item_ix: HashMap<&str, usize> = HashMap::new();
    let mut records = Vec::with_capacity(interactions.len());
    for r in interactions {
        let n = user_ix.len();
        let u = *user_ix.entry(r.user_id.as_str()).or_insert(n);
        let n = item_ix.len();
        let i = *item_ix.entry(r.item_id.as_str()).or_insert(n);
        records.push((u, i));
    }

    let mut alive = vec![true; records.len()];
    let mut user_count = vec![0usize; user_ix.len()];
    let mut item_count = vec![0usize; item_ix.len()];
    for &(u, i) in &records {
        user_count[u] += 1;
        item_count[i] += 1;
    }
    loop {
        let mut changed = false;
        for (r, &(u, i)) in records.iter().enumerate() {
            if alive[r] && (user_count[u] < k || item_count[i] < k) {
                alive[r] = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        user_count.iter_mut().for_each(|c| *c = 0);
        item_count.iter_mut().for_each(|c| *c = 0);
        for (r, &(u, i)) in records.iter().enumerate() {
            if alive[r] {
                user_count[u] += 1;
                item_count[i] += 1;
            }
        }
    }

    let mut users: Vec<String> = Vec::new();
    let mut new_user: HashMap<usize, usize> = HashMap::new();
    let mut grouped: Vec<Vec<(i64, usize)>> = Vec::new();
    for (r, &(u, _)) in records.iter().enumerate() {
        if !alive[r] {
            continue;
        }
        let rec = &interactions[r];
        let uu = *new_user.entry(u).or_insert_with(|| {
            users.push(rec.user_id.clone());
            grouped.push(Vec::new());
            users.len() - 1
        });
        grouped[uu].push((rec.timestamp, r));
    }
    if users.is_empty() {
        return Err(DatasetError::EmptyAfterFiltering { k });
    }

    // Items are numbered by first appearance walking the time-sorted
    // sequences user by user, so re-filtering the output is the identity.
    let mut items: Vec<String> = Vec::new();
    let mut new_item: HashMap<usize, u32> = HashMap::new();
    let mut sequences = Vec::with_capacity(grouped.len());
    let mut timestamps = Vec::with_capacity(grouped.len());
    for mut g in grouped {
        // stable: equal timestamps keep input order
        g.sort_by_key(|&(t, _)| t);
        timestamps.push(g.iter().map(|&(t, _)| t).collect());
        let seq = g
            .iter()
            .map(|&(_, r)| {
                *new_item.entry(records[r].1).or_insert_with(|| {
                    items.push(interactions[r].item_id.clone());
                    (items.len() - 1) as u32
                })
            })
            .collect();
        sequences.push(seq);
    }
    InteractionDataset::with_timestamps(items, users, sequences, timestamps)
}

/// Counts and split sizes written next to processed data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub n_users: usize,
    pub n_items: usize,
    pub n_interactions: usize,
    pub core_k: Option<usize>,
    pub max_seq_len: usize,
    pub train_pairs: usize,
    pub validation_pairs: usize,
    pub test_pairs: usize,
    pub source_sha256: Option<String>,
}

impl DatasetManifest {
    pub fn new(dataset: &InteractionDataset, splits: &Splits, core_k: Option<usize>) -> Self {
        Self {
            n_users: dataset.n_users(),
            n_items: dataset.n_items(),
            n_interactions: dataset.n_interactions(),
            core_k,
            max_seq_len: splits.max_seq_len,
            train_pairs: splits.train.len(),
            validation_pairs: splits.validation.len(),
            test_pairs: splits.test.len(),
            source_sha256: None,
        }
    }
}
