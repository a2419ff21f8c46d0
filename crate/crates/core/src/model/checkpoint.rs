//! Checkpoint container: `b"SRCK"`, u32 format version, u32 header length,
//! a JSON header (model config, catalog size, tensor directory, free-form
//! metadata), then every tensor as little-endian f32 row-major in directory
//! order.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelError, SrModel};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SRCK";
pub const CHECKPOINT_VERSION: u32 = 1;

const TEXT_TENSOR: &str = "embedder.text";

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    config: ModelConfig,
    n_items: usize,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    extra_tensors: Vec<TensorEntry>,
    #[serde(default)]
    metadata: serde_json::Value,
}

/// A loaded checkpoint: the model plus whatever the writer attached.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: SrModel<f32>,
    pub metadata: serde_json::Value,
    pub extra_tensors: Vec<(String, Array2<f32>)>,
}

fn err(msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(msg.into())
}

/// Writes parameters, the frozen text matrix (if any), optional extra
/// tensors (e.g. optimizer moments) and JSON metadata.
pub fn save_checkpoint(
    path: impl AsRef<Path>,
    model: &SrModel<f32>,
    metadata: &serde_json::Value,
    extra: &[(String, Array2<f32>)],
) -> Result<(), ModelError> {
    let path = path.as_ref();
    let mut tensors: Vec<(String, &Array2<f32>)> = model.params().into_iter().map(|(n, p)| (n, &p.value)).collect();
    if let Some(text) = model.text_matrix() {
        tensors.push((TEXT_TENSOR.to_string(), text));
    }
    let entry = |(n, a): &(String, &Array2<f32>)| TensorEntry {
        name: n.clone(),
        shape: [a.nrows(), a.ncols()],
    };
    let extra_refs: Vec<(String, &Array2<f32>)> = extra.iter().map(|(n, a)| (n.clone(), a)).collect();
    let header = Header {
        format: "ensrec-checkpoint".to_string(),
        config: model.config().clone(),
        n_items: model.n_items(),
        tensors: tensors.iter().map(entry).collect(),
        extra_tensors: extra_refs.iter().map(entry).collect(),
        metadata: metadata.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| err(e.to_string()))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    for (_, a) in tensors.iter().chain(&extra_refs) {
        for v in a.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, ModelError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    if bytes.len() < 12 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(err("not a checkpoint file (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(err(format!("unsupported checkpoint version {version}")));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = bytes.get(12..12 + hlen).ok_or_else(|| err("truncated header"))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| err(e.to_string()))?;
    let mut cursor = 12 + hlen;
    let mut take = |e: &TensorEntry| -> Result<Array2<f32>, ModelError> {
        let n = e.shape[0] * e.shape[1] * 4;
        let raw = bytes
            .get(cursor..cursor + n)
            .ok_or_else(|| err(format!("truncated tensor `{}`", e.name)))?;
        cursor += n;
        let vals = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Array2::from_shape_vec((e.shape[0], e.shape[1]), vals).expect("sized above"))
    };
    let mut loaded = Vec::with_capacity(header.tensors.len());
    for e in &header.tensors {
        loaded.push((e.name.clone(), take(e)?));
    }
    let mut extra_tensors = Vec::with_capacity(header.extra_tensors.len());
    for e in &header.extra_tensors {
        extra_tensors.push((e.name.clone(), take(e)?));
    }
    if cursor != bytes.len() {
        return Err(err("trailing bytes after tensors"));
    }

    let text = loaded.iter().find(|(n, _)| n == TEXT_TENSOR).map(|(_, a)| a.clone());
    let mut model = SrModel::<f32>::new(header.config, header.n_items, text.as_ref(), 0)?;
    let mut params = model.params_mut();
    let expected = params.len() + usize::from(text.is_some());
    if loaded.len() != expected {
        return Err(err(format!("expected {expected} tensors, found {}", loaded.len())));
    }
    for (name, value) in loaded.into_iter().filter(|(n, _)| n != TEXT_TENSOR) {
        let (_, p) = params
            .iter_mut()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| err(format!("unknown tensor `{name}`")))?;
        if p.value.raw_dim() != value.raw_dim() {
            return Err(err(format!("shape mismatch for `{name}`")));
        }
        p.value = value;
    }
    Ok(Checkpoint {
        model,
        metadata: header.metadata,
        extra_tensors,
    })
}
