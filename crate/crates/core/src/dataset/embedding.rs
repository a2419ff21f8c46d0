//! `EMB1` embedding files: little-endian `b"EMB1"`, u32 rows, u32 dim, then
//! rows × dim f32 row-major. Item ids live in a `<path>.ids` sidecar, one
//! per line, line i naming row i.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::DatasetError;

pub const EMB_MAGIC: &[u8; 4] = b"EMB1";

/// Dense item-embedding table with an item-id index.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    ids: Vec<String>,
    rows: Array2<f32>,
    index: HashMap<String, usize>,
}

impl EmbeddingMatrix {
    pub fn new(ids: Vec<String>, rows: Array2<f32>) -> Result<Self, DatasetError> {
        if ids.len() != rows.nrows() {
            return Err(DatasetError::IdsMismatch {
                header_rows: rows.nrows(),
                ids: ids.len(),
            });
        }
        if rows.ncols() == 0 {
            return Err(DatasetError::InvalidMatrix("dimension must be positive".into()));
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(DatasetError::InvalidMatrix("non-finite entry".into()));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (row, id) in ids.iter().enumerate() {
            if id.is_empty() || id.contains('\n') {
                return Err(DatasetError::InvalidMatrix(format!("bad item id at row {row}")));
            }
            if index.insert(id.clone(), row).is_some() {
                return Err(DatasetError::InvalidMatrix(format!("duplicate item id `{id}`")));
            }
        }
        Ok(Self { ids, rows, index })
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn rows(&self) -> &Array2<f32> {
        &self.rows
    }

    pub fn row_of(&self, item_id: &str) -> Option<usize> {
        self.index.get(item_id).copied()
    }

    /// Reorders rows to follow `catalog`; every catalog item must be present.
    pub fn aligned_to(&self, catalog: &[String]) -> Result<EmbeddingMatrix, DatasetError> {
        let mut rows = Array2::zeros((catalog.len(), self.dim()));
        for (dst, id) in catalog.iter().enumerate() {
            let src = self.row_of(id).ok_or_else(|| DatasetError::MissingItem(id.clone()))?;
            rows.row_mut(dst).assign(&self.rows.row(src));
        }
        EmbeddingMatrix::new(catalog.to_vec(), rows)
    }
}

pub fn ids_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".ids");
    PathBuf::from(s)
}

pub fn write_embedding_matrix(m: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(12 + 4 * m.rows.len());
    buf.extend_from_slice(EMB_MAGIC);
    buf.extend_from_slice(&(m.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(m.dim() as u32).to_le_bytes());
    for v in m.rows.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| DatasetError::io(path, e))?;
    let mut ids = m.ids.join("\n");
    if !ids.is_empty() {
        ids.push('\n');
    }
    let sidecar = ids_path(path);
    fs::write(&sidecar, ids).map_err(|e| DatasetError::io(&sidecar, e))
}

pub fn read_embedding_matrix(path: impl AsRef<Path>) -> Result<EmbeddingMatrix, DatasetError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| DatasetError::io(path, e))?;
    let (rows, dim, payload) = parse_header(&bytes)?;
    let expected = rows * dim * 4;
    if payload.len() != expected {
        return Err(DatasetError::Truncated {
            expected,
            found: payload.len(),
        });
    }
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let sidecar = ids_path(path);
    let text = fs::read_to_string(&sidecar).map_err(|e| DatasetError::io(&sidecar, e))?;
    let ids: Vec<String> = text.lines().map(str::to_string).collect();
    if ids.len() != rows {
        return Err(DatasetError::IdsMismatch { header_rows: rows, ids: ids.len() });
    }
    let matrix = Array2::from_shape_vec((rows, dim), values).expect("shape checked above");
    EmbeddingMatrix::new(ids, matrix)
}

fn parse_header(bytes: &[u8]) -> Result<(usize, usize, &[u8]), DatasetError> {
    if bytes.len() < 4 {
        return Err(DatasetError::Truncated { expected: 12, found: bytes.len() });
    }
    if &bytes[..4] != EMB_MAGIC {
        let mut found = [0u8; 4];
        found.copy_from_slice(&bytes[..4]);
        return Err(DatasetError::BadMagic { found });
    }
    if bytes.len() < 12 {
        return Err(DatasetError::Truncated { expected: 12, found: bytes.len() });
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    Ok((rows, dim, &bytes[12..]))
}
