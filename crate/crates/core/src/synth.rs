//! Seeded synthetic interaction data with two separable dynamics: semantic
//! users move to items whose latent vectors are close to the current one,
//! collaborative users walk a hidden random item graph. Item text embeddings
//! are noisy copies of the latent vectors, so they carry the semantic signal
//! only.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{write_embedding_matrix, write_interactions, DatasetError, EmbeddingMatrix, InteractionDataset, InteractionFormat};

/// Softmax temperature of semantic transitions.
pub const SEMANTIC_TEMPERATURE: f64 = 0.2;

/// Per-dimension jitter of items around their cluster centroid, relative to
/// `1/sqrt(d_sem)`.
const CLUSTER_JITTER: f64 = 0.15;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub d_sem: usize,
    pub n_clusters: usize,
    pub seq_len_range: (usize, usize),
    pub p_semantic_user: f64,
    pub collab_graph_degree: usize,
    pub noise: f64,
    pub text_noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_users: 2000,
            n_items: 500,
            d_sem: 32,
            n_clusters: 50,
            seq_len_range: (5, 12),
            p_semantic_user: 0.5,
            collab_graph_degree: 4,
            noise: 0.1,
            text_noise_sigma: 0.05,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Config(m));
        if self.n_users == 0 || self.n_items < 2 || self.d_sem == 0 || self.n_clusters == 0 {
            return bad("n_users, d_sem and n_clusters must be positive and n_items at least 2".into());
        }
        if self.n_clusters > self.n_items {
            return bad(format!("n_clusters {} exceeds n_items {}", self.n_clusters, self.n_items));
        }
        let (lo, hi) = self.seq_len_range;
        if lo == 0 || lo > hi {
            return bad(format!("seq_len_range ({lo}, {hi}) must satisfy 1 <= min <= max"));
        }
        if !(0.0..=1.0).contains(&self.p_semantic_user) || !(0.0..=1.0).contains(&self.noise) {
            return bad("p_semantic_user and noise must lie in [0, 1]".into());
        }
        if self.collab_graph_degree == 0 || self.collab_graph_degree >= self.n_items {
            return bad(format!("collab_graph_degree must lie in 1..{}", self.n_items));
        }
        if !(self.text_noise_sigma >= 0.0 && self.text_noise_sigma.is_finite()) {
            return bad("text_noise_sigma must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BehaviorLabel {
    Semantic,
    Collaborative,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub dataset: InteractionDataset,
    pub text: EmbeddingMatrix,
    /// One label per user, in dataset user order. Diagnostics only.
    pub labels: Vec<BehaviorLabel>,
    /// Unit-norm latent vectors, `[n_items, d_sem]`.
    pub semantic: Array2<f64>,
    /// Out-neighbours of every item in the hidden transition graph.
    pub graph: Vec<Vec<u32>>,
}

fn unit(mut v: Array1<f64>) -> Array1<f64> {
    let n = v.dot(&v).sqrt();
    if n > 0.0 {
        v /= n;
    }
    v
}

fn gaussian(rng: &mut ChaCha8Rng, d: usize, std: f64) -> Array1<f64> {
    Array1::from_shape_fn(d, |_| {
        let z: f64 = StandardNormal.sample(rng);
        std * z
    })
}

pub fn generate(config: &SynthConfig) -> Result<SynthOutput, SynthError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (n, d) = (config.n_items, config.d_sem);

    let centroids: Vec<Array1<f64>> = (0..config.n_clusters).map(|_| unit(gaussian(&mut rng, d, 1.0))).collect();
    let jitter = CLUSTER_JITTER / (d as f64).sqrt();
    let mut semantic = Array2::zeros((n, d));
    for i in 0..n {
        let c = &centroids[i % config.n_clusters];
        semantic.row_mut(i).assign(&unit(c + &gaussian(&mut rng, d, jitter)));
    }

    let graph: Vec<Vec<u32>> = (0..n)
        .map(|i| {
            index::sample(&mut rng, n - 1, config.collab_graph_degree)
                .into_iter()
                .map(|j| if j >= i { j + 1 } else { j } as u32)
                .collect()
        })
        .collect();

    // semantic transition weights, self excluded
    let cos = semantic.dot(&semantic.t());
    let weights: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let row = cos.row(i);
            let max = (0..n).filter(|&j| j != i).map(|j| row[j]).fold(f64::MIN, f64::max);
            let mut acc = 0.0;
            (0..n)
                .map(|j| {
                    if j != i {
                        acc += ((row[j] - max) / SEMANTIC_TEMPERATURE).exp();
                    }
                    acc
                })
                .collect()
        })
        .collect();

    let mut labels = Vec::with_capacity(config.n_users);
    let mut sequences = Vec::with_capacity(config.n_users);
    for _ in 0..config.n_users {
        let label = if rng.random::<f64>() < config.p_semantic_user {
            BehaviorLabel::Semantic
        } else {
            BehaviorLabel::Collaborative
        };
        let len = rng.random_range(config.seq_len_range.0..=config.seq_len_range.1);
        let mut seq = Vec::with_capacity(len);
        let mut cur = rng.random_range(0..n);
        seq.push(cur as u32);
        while seq.len() < len {
            cur = if rng.random::<f64>() < config.noise {
                rng.random_range(0..n)
            } else {
                match label {
                    BehaviorLabel::Semantic => {
                        let cdf = &weights[cur];
                        let u = rng.random::<f64>() * cdf[n - 1];
                        cdf.partition_point(|&c| c <= u).min(n - 1)
                    }
                    BehaviorLabel::Collaborative => graph[cur][rng.random_range(0..graph[cur].len())] as usize,
                }
            };
            seq.push(cur as u32);
        }
        labels.push(label);
        sequences.push(seq);
    }

    let noise = Normal::new(0.0, config.text_noise_sigma).map_err(|e| SynthError::Config(e.to_string()))?;
    let mut text = Array2::<f32>::zeros((n, d));
    for i in 0..n {
        let v = semantic.row(i).mapv(|x| x + noise.sample(&mut rng));
        text.row_mut(i).assign(&unit(v).mapv(|x| x as f32));
    }

    let items: Vec<String> = (0..n).map(|i| format!("item{i:05}")).collect();
    let users: Vec<String> = (0..config.n_users).map(|u| format!("user{u:05}")).collect();
    let dataset = InteractionDataset::from_sequences(items.clone(), users, sequences)?;
    let text = EmbeddingMatrix::new(items, text)?;
    Ok(SynthOutput {
        dataset,
        text,
        labels,
        semantic,
        graph,
    })
}

/// Paths written by [`write_synth`].
#[derive(Debug, Clone)]
pub struct SynthFiles {
    pub interactions: PathBuf,
    pub text_embeddings: PathBuf,
    pub provenance: PathBuf,
}

/// Writes `interactions.tsv`, `text.emb` (+ `.ids`) and `provenance.jsonl`.
pub fn write_synth(dir: impl AsRef<Path>, out: &SynthOutput) -> Result<SynthFiles, SynthError> {
    let dir = dir.as_ref();
    let io = |p: &Path, e| SynthError::Io {
        path: p.display().to_string(),
        source: e,
    };
    fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let files = SynthFiles {
        interactions: dir.join("interactions.tsv"),
        text_embeddings: dir.join("text.emb"),
        provenance: dir.join("provenance.jsonl"),
    };
    write_interactions(&files.interactions, InteractionFormat::Tsv, &out.dataset.to_interactions())?;
    write_embedding_matrix(&out.text, &files.text_embeddings)?;
    let mut f = fs::File::create(&files.provenance).map_err(|e| io(&files.provenance, e))?;
    for (user, label) in out.dataset.users().iter().zip(&out.labels) {
        let line = serde_json::json!({"user_id": user, "label": label});
        writeln!(f, "{line}").map_err(|e| io(&files.provenance, e))?;
    }
    Ok(files)
}

pub fn read_provenance(path: impl AsRef<Path>) -> Result<Vec<(String, BehaviorLabel)>, SynthError> {
    #[derive(Deserialize)]
    struct Line {
        user_id: String,
        label: BehaviorLabel,
    }
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| SynthError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let v: Line = serde_json::from_str(l).map_err(|e| SynthError::Config(format!("provenance: {e}")))?;
            Ok((v.user_id, v.label))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            n_users: 300,
            n_items: 80,
            n_clusters: 8,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let a = write_synth(dir_a.path(), &generate(&small()).unwrap()).unwrap();
        let b = write_synth(dir_b.path(), &generate(&small()).unwrap()).unwrap();
        for (x, y) in [
            (&a.interactions, &b.interactions),
            (&a.text_embeddings, &b.text_embeddings),
            (&a.provenance, &b.provenance),
        ] {
            assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap());
        }
        let other = generate(&SynthConfig { seed: 7, ..small() }).unwrap();
        assert_ne!(other.dataset.sequences(), generate(&small()).unwrap().dataset.sequences());
    }

    #[test]
    fn sequences_respect_config() {
        let cfg = small();
        let out = generate(&cfg).unwrap();
        assert_eq!(out.dataset.n_users(), cfg.n_users);
        for s in out.dataset.sequences() {
            assert!((cfg.seq_len_range.0..=cfg.seq_len_range.1).contains(&s.len()));
            assert!(s.iter().all(|&i| (i as usize) < cfg.n_items));
        }
        assert_eq!(out.text.len(), cfg.n_items);
        for row in out.text.rows().rows() {
            assert!((row.dot(&row) - 1.0).abs() < 1e-5);
        }
        for (i, nbrs) in out.graph.iter().enumerate() {
            assert_eq!(nbrs.len(), cfg.collab_graph_degree);
            assert!(!nbrs.contains(&(i as u32)));
            let mut u = nbrs.clone();
            u.sort();
            u.dedup();
            assert_eq!(u.len(), nbrs.len());
        }
    }

    #[test]
    fn dynamics_follow_labels() {
        let cfg = SynthConfig {
            noise: 0.0,
            ..small()
        };
        let out = generate(&cfg).unwrap();
        let (mut sem_steps, mut sem_in_graph, mut col_steps, mut col_in_graph) = (0, 0, 0, 0);
        for (seq, label) in out.dataset.sequences().iter().zip(&out.labels) {
            for w in seq.windows(2) {
                assert_ne!(w[0], w[1]);
                let in_graph = out.graph[w[0] as usize].contains(&w[1]);
                match label {
                    BehaviorLabel::Semantic => {
                        sem_steps += 1;
                        sem_in_graph += in_graph as usize;
                    }
                    BehaviorLabel::Collaborative => {
                        col_steps += 1;
                        col_in_graph += in_graph as usize;
                    }
                }
            }
        }
        assert_eq!(col_in_graph, col_steps);
        assert!((sem_in_graph as f64) < 0.2 * sem_steps as f64);
        let frac = out.labels.iter().filter(|&&l| l == BehaviorLabel::Semantic).count() as f64 / cfg.n_users as f64;
        assert!((frac - 0.5).abs() < 0.1);
    }

    #[test]
    fn all_collaborative_without_text_noise() {
        let out = generate(&SynthConfig {
            p_semantic_user: 0.0,
            text_noise_sigma: 0.0,
            ..small()
        })
        .unwrap();
        assert!(out.labels.iter().all(|&l| l == BehaviorLabel::Collaborative));
        for (i, row) in out.text.rows().rows().into_iter().enumerate() {
            for (a, b) in row.iter().zip(out.semantic.row(i)) {
                assert!((*a as f64 - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn config_errors() {
        for cfg in [
            SynthConfig { n_clusters: 100, n_items: 50, ..small() },
            SynthConfig { seq_len_range: (6, 5), ..small() },
            SynthConfig { noise: 1.5, ..small() },
            SynthConfig { p_semantic_user: -0.1, ..small() },
            SynthConfig { text_noise_sigma: -1.0, ..small() },
        ] {
            assert!(matches!(generate(&cfg), Err(SynthError::Config(_))), "{cfg:?}");
        }
    }

    #[test]
    fn provenance_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let out = generate(&small()).unwrap();
        let files = write_synth(dir.path(), &out).unwrap();
        let prov = read_provenance(&files.provenance).unwrap();
        assert_eq!(prov.len(), out.labels.len());
        assert!(prov.iter().zip(&out.labels).all(|((_, a), b)| a == b));
        assert_eq!(prov[0].0, out.dataset.users()[0]);
    }
}
