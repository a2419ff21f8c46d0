//! Full-catalog cosine scoring, ranks under a fixed tie rule, exact top-K,
//! and the part-normalized concatenation that turns a score sum into a single
//! inner-product retrieval.

use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{EmbeddingMatrix, SplitKind, SplitView};
use crate::model::{ModelError, SrModel};
use crate::nn::Real;

/// Added to vector norms before division.
pub const NORM_EPS: f64 = 1e-12;

/// Tolerance of the cosine-range invariant on scores.
pub const SCORE_RANGE_TOL: f64 = 1e-5;

pub const SCORE_DUMP_MAGIC: &[u8; 4] = b"SCD1";

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("score vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("K = {k} outside 1..={n_items}")]
    InvalidK { k: usize, n_items: usize },
    #[error("non-finite input")]
    NonFinite,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed score dump: {0}")]
    Format(String),
}

/// Cosine scores of one user against the whole catalog.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    pub user: u32,
    pub scores: Array1<f64>,
}

impl ScoreVector {
    pub fn rank_of(&self, target: u32) -> u32 {
        rank_of(self.scores.as_slice().expect("contiguous"), target)
    }

    pub fn top_k(&self, k: usize) -> Result<Vec<u32>, RetrievalError> {
        top_k(self.scores.as_slice().expect("contiguous"), k)
    }

    /// Whether every score lies in the cosine range up to [`SCORE_RANGE_TOL`].
    pub fn in_cosine_range(&self) -> bool {
        self.scores.iter().all(|s| s.abs() <= 1.0 + SCORE_RANGE_TOL)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankEntry {
    pub user: u32,
    pub target: u32,
    pub rank: u32,
}

/// Target ranks of one model on one split.
#[derive(Debug, Clone, PartialEq)]
pub struct RankTable {
    pub split: SplitKind,
    pub n_items: usize,
    pub entries: Vec<RankEntry>,
}

impl RankTable {
    /// Builds a table from a score matrix whose row `r` scores `view.examples[r]`.
    pub fn from_scores(view: &SplitView, scores: &Array2<f64>) -> RankTable {
        let entries = view
            .examples
            .iter()
            .zip(scores.rows())
            .map(|(ex, row)| RankEntry {
                user: ex.user,
                target: ex.target,
                rank: rank_of(row.as_slice().expect("contiguous"), ex.target),
            })
            .collect();
        RankTable {
            split: view.kind,
            n_items: scores.ncols(),
            entries,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ranks(&self) -> impl Iterator<Item = u32> + '_ {
        self.entries.iter().map(|e| e.rank)
    }
}

fn norm(v: ArrayView1<f64>) -> f64 {
    v.dot(&v).sqrt()
}

/// Rows divided by `‖row‖ + NORM_EPS`, in f64.
pub fn normalize_rows<F: Real>(m: &ArrayView2<F>) -> Array2<f64> {
    let mut out = m.mapv(|v| v.to_f64().unwrap());
    for mut row in out.rows_mut() {
        let n = norm(row.view()) + NORM_EPS;
        row.mapv_inplace(|v| v / n);
    }
    out
}

fn check_finite<F: Real>(m: &ArrayView2<F>) -> Result<(), RetrievalError> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(RetrievalError::NonFinite)
    }
}

/// `scores[i] = cos(user, items[i])`.
pub fn score_catalog<F: Real>(user: ArrayView1<F>, items: ArrayView2<F>) -> Result<Array1<f64>, RetrievalError> {
    let users = user.insert_axis(Axis(0));
    Ok(score_matrix(&users, &items)?.row(0).to_owned())
}

/// Cosine scores of every user row against every item row, `[users, items]`.
pub fn score_matrix<F: Real>(users: &ArrayView2<F>, items: &ArrayView2<F>) -> Result<Array2<f64>, RetrievalError> {
    if users.ncols() != items.ncols() {
        return Err(RetrievalError::DimensionMismatch {
            expected: items.ncols(),
            found: users.ncols(),
        });
    }
    check_finite(users)?;
    check_finite(items)?;
    Ok(normalize_rows(users).dot(&normalize_rows(items).t()))
}

/// Descending score, then ascending index.
fn before(scores: &[f64], a: usize, b: usize) -> Ordering {
    scores[b].total_cmp(&scores[a]).then(a.cmp(&b))
}

/// 1 + items scored strictly higher + equal-scored items with a smaller index.
pub fn rank_of(scores: &[f64], target: u32) -> u32 {
    let t = target as usize;
    let st = scores[t];
    let mut rank = 1u32;
    for (j, &s) in scores.iter().enumerate() {
        if s > st || (s == st && j < t) {
            rank += 1;
        }
    }
    rank
}

/// The `k` best items in rank order, consistent with [`rank_of`].
pub fn top_k(scores: &[f64], k: usize) -> Result<Vec<u32>, RetrievalError> {
    let n = scores.len();
    if k == 0 || k > n {
        return Err(RetrievalError::InvalidK { k, n_items: n });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    if k < n {
        idx.select_nth_unstable_by(k - 1, |&a, &b| before(scores, a, b));
        idx.truncate(k);
    }
    idx.sort_unstable_by(|&a, &b| before(scores, a, b));
    Ok(idx.into_iter().map(|i| i as u32).collect())
}

/// User vectors for every example of `view`, in example order.
pub fn split_user_embeddings<F: Real>(model: &SrModel<F>, view: &SplitView) -> Result<Array2<F>, RetrievalError> {
    let prefixes: Vec<&[u32]> = view.examples.iter().map(|e| e.prefix.as_slice()).collect();
    Ok(model.user_embeddings(&prefixes)?)
}

/// Catalog scores for every example of `view`, `[examples, n_items]`.
pub fn score_split<F: Real>(model: &SrModel<F>, view: &SplitView) -> Result<Array2<f64>, RetrievalError> {
    let users = split_user_embeddings(model, view)?;
    let items = model.item_embeddings();
    score_matrix(&users.view(), &items.view())
}

pub fn rank_table<F: Real>(model: &SrModel<F>, view: &SplitView) -> Result<RankTable, RetrievalError> {
    Ok(RankTable::from_scores(view, &score_split(model, view)?))
}

/// Normalizes the ID and text parts independently and concatenates them, so
/// that `concat_u · concat_i = s_ID(i) + s_text(i)` and the cosine of the
/// concatenations is half that sum.
pub fn concat_ensemble_embeddings<F: Real>(
    users_id: &ArrayView2<F>,
    users_text: &ArrayView2<F>,
    items_id: &ArrayView2<F>,
    items_text: &ArrayView2<F>,
) -> Result<(Array2<f64>, Array2<f64>), RetrievalError> {
    if users_id.nrows() != users_text.nrows() {
        return Err(RetrievalError::LengthMismatch(users_id.nrows(), users_text.nrows()));
    }
    if items_id.nrows() != items_text.nrows() {
        return Err(RetrievalError::LengthMismatch(items_id.nrows(), items_text.nrows()));
    }
    for (u, i) in [(users_id, items_id), (users_text, items_text)] {
        if u.ncols() != i.ncols() {
            return Err(RetrievalError::DimensionMismatch {
                expected: i.ncols(),
                found: u.ncols(),
            });
        }
    }
    for m in [users_id, users_text, items_id, items_text] {
        check_finite(m)?;
    }
    let cat = |a: &ArrayView2<F>, b: &ArrayView2<F>| {
        let d1 = a.ncols();
        let mut out = Array2::zeros((a.nrows(), d1 + b.ncols()));
        out.slice_mut(s![.., ..d1]).assign(&normalize_rows(a));
        out.slice_mut(s![.., d1..]).assign(&normalize_rows(b));
        out
    };
    Ok((cat(users_id, users_text), cat(items_id, items_text)))
}

/// Exports a concatenated item matrix as an `EMB1` table for external ANN
/// indexing.
pub fn concat_item_matrix(items: &Array2<f64>, ids: &[String]) -> Result<EmbeddingMatrix, crate::dataset::DatasetError> {
    EmbeddingMatrix::new(ids.to_vec(), items.mapv(|v| v as f32))
}

/// One user's record in a score dump.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreDumpRecord {
    pub user_id: String,
    pub target: u32,
    pub rank: u32,
    pub top: Vec<(u32, f64)>,
}

impl ScoreDumpRecord {
    pub fn from_scores(user_id: impl Into<String>, scores: &[f64], target: u32, k: usize) -> Result<Self, RetrievalError> {
        let top = top_k(scores, k)?.into_iter().map(|i| (i, scores[i as usize])).collect();
        Ok(Self {
            user_id: user_id.into(),
            target,
            rank: rank_of(scores, target),
            top,
        })
    }
}

/// Binary dump: `b"SCD1"`, u32 K, u32 record count, then per record a u32
/// length-prefixed UTF-8 user id, u32 target, u32 rank and K pairs of
/// (u32 item, f64 score). Little-endian throughout.
pub fn write_score_dump(path: impl AsRef<Path>, k: usize, records: &[ScoreDumpRecord]) -> Result<(), RetrievalError> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    buf.extend_from_slice(SCORE_DUMP_MAGIC);
    buf.extend_from_slice(&(k as u32).to_le_bytes());
    buf.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for r in records {
        if r.top.len() != k {
            return Err(RetrievalError::Format(format!("record `{}` has {} entries, expected {k}", r.user_id, r.top.len())));
        }
        buf.extend_from_slice(&(r.user_id.len() as u32).to_le_bytes());
        buf.extend_from_slice(r.user_id.as_bytes());
        buf.extend_from_slice(&r.target.to_le_bytes());
        buf.extend_from_slice(&r.rank.to_le_bytes());
        for &(i, s) in &r.top {
            buf.extend_from_slice(&i.to_le_bytes());
            buf.extend_from_slice(&s.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|source| RetrievalError::Io {
        path: path.display().to_string(),
        source,
    })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], RetrievalError> {
        let out = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| RetrievalError::Format("truncated".into()))?;
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, RetrievalError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, RetrievalError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn read_score_dump(path: impl AsRef<Path>) -> Result<(usize, Vec<ScoreDumpRecord>), RetrievalError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| RetrievalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut r = Reader { bytes: &bytes, pos: 0 };
    if r.take(4)? != SCORE_DUMP_MAGIC {
        return Err(RetrievalError::Format("bad magic".into()));
    }
    let k = r.u32()? as usize;
    let n = r.u32()? as usize;
    let mut records = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let len = r.u32()? as usize;
        let user_id = std::str::from_utf8(r.take(len)?)
            .map_err(|e| RetrievalError::Format(e.to_string()))?
            .to_string();
        let target = r.u32()?;
        let rank = r.u32()?;
        let mut top = Vec::with_capacity(k);
        for _ in 0..k {
            top.push((r.u32()?, r.f64()?));
        }
        records.push(ScoreDumpRecord {
            user_id,
            target,
            rank,
            top,
        });
    }
    if r.pos != bytes.len() {
        return Err(RetrievalError::Format("trailing bytes".into()));
    }
    Ok((k, records))
}
