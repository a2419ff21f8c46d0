//! Sequential recommendation models: an item embedder composed with a
//! transformer sequence encoder that turns a history prefix into one user
//! vector.

mod checkpoint;

use ndarray::{s, Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{gelu, gelu_backward, Block, BlockCache, LayerNorm, LayerNormCache, Linear, Param, Real, SeqLayout};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

/// Standard deviation of the ID table (and every other weight) at init.
pub const BASE_INIT_STD: f64 = 0.02;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("item index {item} out of range for {n_items} items")]
    ItemOutOfRange { item: u32, n_items: usize },
    #[error("prefix must contain at least one item")]
    EmptyPrefix,
    #[error("prefix length {len} exceeds max_seq_len {max}")]
    PrefixTooLong { len: usize, max: usize },
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("frozen_text embedder requires a text matrix with one row per catalog item")]
    MissingTextMatrix,
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderSource {
    IdTable,
    FrozenText,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionKind {
    Linear,
    Mlp3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedderConfig {
    pub source: EmbedderSource,
    #[serde(default = "default_d_model")]
    pub d_model: usize,
    #[serde(default = "one")]
    pub init_std_multiplier: f64,
    #[serde(default = "default_projection")]
    pub projection: ProjectionKind,
    #[serde(default = "default_dropout")]
    pub embedding_dropout: f64,
}

fn default_d_model() -> usize {
    64
}
fn one() -> f64 {
    1.0
}
fn default_projection() -> ProjectionKind {
    ProjectionKind::Linear
}
fn default_dropout() -> f64 {
    0.1
}

impl EmbedderConfig {
    pub fn id_table(d_model: usize) -> Self {
        Self {
            source: EmbedderSource::IdTable,
            d_model,
            init_std_multiplier: 1.0,
            projection: ProjectionKind::Linear,
            embedding_dropout: default_dropout(),
        }
    }

    pub fn frozen_text(d_model: usize, projection: ProjectionKind) -> Self {
        Self {
            source: EmbedderSource::FrozenText,
            projection,
            ..Self::id_table(d_model)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    BidirectionalEncoder,
    CausalDecoder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    #[default]
    LastPosition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub d_kv: usize,
    pub max_seq_len: usize,
    #[serde(default)]
    pub pooling: Pooling,
}

impl Default for EncoderConfig {
    /// Desk-scale bidirectional encoder.
    fn default() -> Self {
        Self {
            kind: EncoderKind::BidirectionalEncoder,
            n_layers: 2,
            n_heads: 2,
            d_model: 64,
            d_ff: 128,
            d_kv: 32,
            max_seq_len: crate::dataset::DEFAULT_MAX_SEQ_LEN,
            pooling: Pooling::LastPosition,
        }
    }
}

impl EncoderConfig {
    /// 6 layers, 6 heads, width 128, feed-forward 1024, per-head 64.
    pub fn paper_scale() -> Self {
        Self {
            n_layers: 6,
            n_heads: 6,
            d_model: 128,
            d_ff: 1024,
            d_kv: 64,
            ..Self::default()
        }
    }

    /// 2-layer single-head causal decoder in the SASRec style.
    pub fn sasrec_decoder(d_model: usize) -> Self {
        Self {
            kind: EncoderKind::CausalDecoder,
            n_layers: 2,
            n_heads: 1,
            d_model,
            d_ff: d_model,
            d_kv: d_model,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub embedder: EmbedderConfig,
    pub encoder: EncoderConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let e = &self.encoder;
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.embedder.d_model != e.d_model {
            return bad("embedder and encoder d_model differ");
        }
        if [e.n_layers, e.n_heads, e.d_model, e.d_ff, e.d_kv, e.max_seq_len].contains(&0) {
            return bad("encoder dimensions must be positive");
        }
        if !(self.embedder.init_std_multiplier > 0.0 && self.embedder.init_std_multiplier.is_finite()) {
            return bad("init_std_multiplier must be positive");
        }
        if !(0.0..1.0).contains(&self.embedder.embedding_dropout) {
            return bad("embedding_dropout must lie in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Projection<F> {
    Linear(Linear<F>),
    Mlp3([Linear<F>; 3]),
}

#[derive(Debug, Clone, PartialEq)]
enum ItemEmbedder<F> {
    IdTable(Param<F>),
    FrozenText { text: Array2<F>, projection: Projection<F> },
}

#[derive(Debug)]
enum EmbedCache<F> {
    None,
    Mlp { h1_pre: Array2<F>, h1: Array2<F>, h2_pre: Array2<F>, h2: Array2<F> },
}

impl<F: Real> ItemEmbedder<F> {
    fn project_rows(projection: &Projection<F>, rows: &ArrayView2<F>) -> (Array2<F>, EmbedCache<F>) {
        match projection {
            Projection::Linear(l) => (l.forward(rows), EmbedCache::None),
            Projection::Mlp3([a, b, c]) => {
                let h1_pre = a.forward(rows);
                let h1 = gelu(&h1_pre);
                let h2_pre = b.forward(&h1.view());
                let h2 = gelu(&h2_pre);
                let out = c.forward(&h2.view());
                (out, EmbedCache::Mlp { h1_pre, h1, h2_pre, h2 })
            }
        }
    }

    fn forward_all(&self) -> (Array2<F>, EmbedCache<F>) {
        match self {
            ItemEmbedder::IdTable(t) => (t.value.clone(), EmbedCache::None),
            ItemEmbedder::FrozenText { text, projection } => Self::project_rows(projection, &text.view()),
        }
    }

    fn backward_all(&mut self, d_all: &Array2<F>, cache: &EmbedCache<F>) {
        match self {
            ItemEmbedder::IdTable(t) => t.grad += d_all,
            ItemEmbedder::FrozenText { text, projection } => match (projection, cache) {
                (Projection::Linear(l), _) => {
                    l.backward(&text.view(), &d_all.view(), false);
                }
                (Projection::Mlp3([a, b, c]), EmbedCache::Mlp { h1_pre, h1, h2_pre, h2 }) => {
                    let dh2 = c.backward(&h2.view(), &d_all.view(), true).unwrap();
                    let dh2_pre = gelu_backward(h2_pre, &dh2.view());
                    let dh1 = b.backward(&h1.view(), &dh2_pre.view(), true).unwrap();
                    let dh1_pre = gelu_backward(h1_pre, &dh1.view());
                    a.backward(&text.view(), &dh1_pre.view(), false);
                }
                (Projection::Mlp3(_), EmbedCache::None) => unreachable!("mlp forward always caches"),
            },
        }
    }

    fn params<'a>(&'a self, out: &mut Vec<(String, &'a Param<F>)>) {
        match self {
            ItemEmbedder::IdTable(t) => out.push(("embedder.table".into(), t)),
            ItemEmbedder::FrozenText { projection, .. } => match projection {
                Projection::Linear(l) => l.params("embedder.proj", out),
                Projection::Mlp3(ls) => {
                    for (i, l) in ls.iter().enumerate() {
                        l.params(&format!("embedder.mlp{i}"), out);
                    }
                }
            },
        }
    }

    fn params_mut<'a>(&'a mut self, out: &mut Vec<(String, &'a mut Param<F>)>) {
        match self {
            ItemEmbedder::IdTable(t) => out.push(("embedder.table".into(), t)),
            ItemEmbedder::FrozenText { projection, .. } => match projection {
                Projection::Linear(l) => l.params_mut("embedder.proj", out),
                Projection::Mlp3(ls) => {
                    for (i, l) in ls.iter_mut().enumerate() {
                        l.params_mut(&format!("embedder.mlp{i}"), out);
                    }
                }
            },
        }
    }
}

/// Cached activations of one training forward pass.
#[derive(Debug)]
pub struct ForwardPass<F> {
    /// One user vector per prefix, `[batch, d_model]`.
    pub users: Array2<F>,
    /// Embeddings of the whole catalog, `[n_items, d_model]`.
    pub items: Array2<F>,
    prefixes: Vec<Vec<u32>>,
    layout: SeqLayout,
    dropout_mask: Option<Array2<F>>,
    embed_cache: EmbedCache<F>,
    block_caches: Vec<BlockCache<F>>,
    final_cache: LayerNormCache<F>,
}

/// `M = T ∘ E`: item embedder followed by a transformer encoder with learned
/// recency positions (position 0 is the most recent item) and last-position
/// pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct SrModel<F: Real = f32> {
    config: ModelConfig,
    n_items: usize,
    embedder: ItemEmbedder<F>,
    positions: Param<F>,
    blocks: Vec<Block<F>>,
    final_norm: LayerNorm<F>,
}

impl<F: Real> SrModel<F> {
    /// Initializes a model. `text` must hold one row per catalog item when the
    /// embedder is `frozen_text` and is ignored otherwise.
    pub fn new(config: ModelConfig, n_items: usize, text: Option<&Array2<f32>>, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        if n_items == 0 {
            return Err(ModelError::InvalidConfig("catalog is empty".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.encoder.d_model;
        let enc = &config.encoder;
        let emb = &config.embedder;
        let embedder = match emb.source {
            EmbedderSource::IdTable => {
                ItemEmbedder::IdTable(Param::normal(n_items, d, BASE_INIT_STD * emb.init_std_multiplier, &mut rng))
            }
            EmbedderSource::FrozenText => {
                let text = text.ok_or(ModelError::MissingTextMatrix)?;
                if text.nrows() != n_items || text.ncols() == 0 {
                    return Err(ModelError::MissingTextMatrix);
                }
                let t = text.ncols();
                let std = BASE_INIT_STD * emb.init_std_multiplier;
                let projection = match emb.projection {
                    ProjectionKind::Linear => Projection::Linear(Linear::new(t, d, true, std, &mut rng)),
                    ProjectionKind::Mlp3 => Projection::Mlp3([
                        Linear::new(t, enc.d_ff, true, std, &mut rng),
                        Linear::new(enc.d_ff, enc.d_ff, true, std, &mut rng),
                        Linear::new(enc.d_ff, d, true, std, &mut rng),
                    ]),
                };
                ItemEmbedder::FrozenText {
                    text: text.mapv(|v| F::from_f32(v).unwrap()),
                    projection,
                }
            }
        };
        let positions = Param::normal(enc.max_seq_len, d, BASE_INIT_STD, &mut rng);
        let causal = enc.kind == EncoderKind::CausalDecoder;
        let blocks = (0..enc.n_layers)
            .map(|_| Block::new(d, enc.n_heads, enc.d_kv, enc.d_ff, causal, BASE_INIT_STD, &mut rng))
            .collect();
        Ok(Self {
            config,
            n_items,
            embedder,
            positions,
            blocks,
            final_norm: LayerNorm::new(d),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn d_model(&self) -> usize {
        self.config.encoder.d_model
    }

    /// The frozen text matrix, if this is a text model.
    pub fn text_matrix(&self) -> Option<&Array2<F>> {
        match &self.embedder {
            ItemEmbedder::FrozenText { text, .. } => Some(text),
            ItemEmbedder::IdTable(_) => None,
        }
    }

    /// Trainable parameters in a fixed order.
    pub fn params(&self) -> Vec<(String, &Param<F>)> {
        let mut out = Vec::new();
        self.embedder.params(&mut out);
        out.push(("encoder.positions".into(), &self.positions));
        for (i, b) in self.blocks.iter().enumerate() {
            b.params(&format!("encoder.block{i}"), &mut out);
        }
        self.final_norm.params("encoder.final_norm", &mut out);
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Param<F>)> {
        let mut out = Vec::new();
        self.embedder.params_mut(&mut out);
        out.push(("encoder.positions".into(), &mut self.positions));
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.params_mut(&format!("encoder.block{i}"), &mut out);
        }
        self.final_norm.params_mut("encoder.final_norm", &mut out);
        out
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in self.params_mut() {
            p.zero_grad();
        }
    }

    fn check_item(&self, item: u32) -> Result<(), ModelError> {
        if item as usize >= self.n_items {
            return Err(ModelError::ItemOutOfRange {
                item,
                n_items: self.n_items,
            });
        }
        Ok(())
    }

    fn check_prefix(&self, prefix: &[u32]) -> Result<(), ModelError> {
        if prefix.is_empty() {
            return Err(ModelError::EmptyPrefix);
        }
        if prefix.len() > self.config.encoder.max_seq_len {
            return Err(ModelError::PrefixTooLong {
                len: prefix.len(),
                max: self.config.encoder.max_seq_len,
            });
        }
        prefix.iter().try_for_each(|&i| self.check_item(i))
    }

    /// Embeddings of every catalog item, `[n_items, d_model]`.
    pub fn item_embeddings(&self) -> Array2<F> {
        self.embedder.forward_all().0
    }

    pub fn item_embedding(&self, item: u32) -> Result<Array1<F>, ModelError> {
        self.check_item(item)?;
        let i = item as usize;
        Ok(match &self.embedder {
            ItemEmbedder::IdTable(t) => t.value.row(i).to_owned(),
            ItemEmbedder::FrozenText { text, projection } => {
                ItemEmbedder::project_rows(projection, &text.slice(s![i..i + 1, ..]))
                    .0
                    .row(0)
                    .to_owned()
            }
        })
    }

    pub fn user_embedding(&self, prefix: &[u32]) -> Result<Array1<F>, ModelError> {
        Ok(self.user_embeddings(&[prefix])?.row(0).to_owned())
    }

    /// Inference-mode user vectors, `[prefixes.len(), d_model]`.
    pub fn user_embeddings(&self, prefixes: &[&[u32]]) -> Result<Array2<F>, ModelError> {
        prefixes.iter().try_for_each(|p| self.check_prefix(p))?;
        let items = self.item_embeddings();
        let mut out = Array2::zeros((prefixes.len(), self.d_model()));
        for (chunk_ix, chunk) in prefixes.chunks(512).enumerate() {
            let layout = SeqLayout::new(chunk.iter().map(|p| p.len()).collect());
            let x = self.gather(&items, chunk, &layout);
            let (users, _, _) = self.encode(x, &layout);
            out.slice_mut(s![chunk_ix * 512..chunk_ix * 512 + chunk.len(), ..]).assign(&users);
        }
        Ok(out)
    }

    /// Same as [`Self::user_embeddings`] for padded input: each row of
    /// `padded` holds `lens[b]` valid items followed by arbitrary padding.
    pub fn user_embeddings_padded(&self, padded: &[Vec<u32>], lens: &[usize]) -> Result<Array2<F>, ModelError> {
        let prefixes: Vec<&[u32]> = padded.iter().zip(lens).map(|(p, &l)| &p[..l]).collect();
        prefixes.iter().try_for_each(|p| self.check_prefix(p))?;
        let width = padded.iter().map(Vec::len).max().unwrap_or(0);
        let layout = SeqLayout {
            lens: lens.to_vec(),
            width,
        };
        let x = self.gather(&self.item_embeddings(), &prefixes, &layout);
        Ok(self.encode(x, &layout).0)
    }

    fn gather(&self, items: &Array2<F>, prefixes: &[&[u32]], layout: &SeqLayout) -> Array2<F> {
        let mut x = Array2::zeros((layout.rows(), self.d_model()));
        for (b, p) in prefixes.iter().enumerate() {
            for (t, &item) in p.iter().enumerate() {
                x.row_mut(b * layout.width + t).assign(&items.row(item as usize));
            }
        }
        x
    }

    fn add_positions(&self, x: &mut Array2<F>, layout: &SeqLayout) {
        for (b, &len) in layout.lens.iter().enumerate() {
            for t in 0..len {
                let mut row = x.row_mut(b * layout.width + t);
                row += &self.positions.value.row(len - 1 - t);
            }
        }
    }

    fn encode(&self, mut x: Array2<F>, layout: &SeqLayout) -> (Array2<F>, Vec<BlockCache<F>>, LayerNormCache<F>) {
        self.add_positions(&mut x, layout);
        let mut caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (y, cache) = block.forward(x, layout);
            caches.push(cache);
            x = y;
        }
        let pooled = Array2::from_shape_fn((layout.batch(), self.d_model()), |(b, j)| x[[layout.last_row(b), j]]);
        let (users, final_cache) = self.final_norm.forward(&pooled.view());
        (users, caches, final_cache)
    }

    /// Training-mode forward pass. Embedding dropout is applied to input item
    /// embeddings when `rng` is given.
    pub fn forward(&self, prefixes: &[&[u32]], rng: Option<&mut ChaCha8Rng>) -> Result<ForwardPass<F>, ModelError> {
        prefixes.iter().try_for_each(|p| self.check_prefix(p))?;
        let (items, embed_cache) = self.embedder.forward_all();
        let layout = SeqLayout::new(prefixes.iter().map(|p| p.len()).collect());
        let mut x = self.gather(&items, prefixes, &layout);
        let p = self.config.embedder.embedding_dropout;
        let dropout_mask = match rng {
            Some(rng) if p > 0.0 => {
                let keep = F::cst(1.0 / (1.0 - p));
                let mask = Array2::from_shape_fn(x.raw_dim(), |_| if rng.random::<f64>() < p { F::zero() } else { keep });
                x *= &mask;
                Some(mask)
            }
            _ => None,
        };
        let (users, block_caches, final_cache) = self.encode(x, &layout);
        Ok(ForwardPass {
            users,
            items,
            prefixes: prefixes.iter().map(|p| p.to_vec()).collect(),
            layout,
            dropout_mask,
            embed_cache,
            block_caches,
            final_cache,
        })
    }

    /// Accumulates parameter gradients given the loss gradients w.r.t. the
    /// user vectors and the catalog embeddings of `pass`.
    pub fn backward(&mut self, pass: &ForwardPass<F>, d_users: &Array2<F>, d_items: &Array2<F>) {
        let layout = &pass.layout;
        let d_pooled = self.final_norm.backward(&d_users.view(), &pass.final_cache);
        let mut dx = Array2::zeros((layout.rows(), self.d_model()));
        for b in 0..layout.batch() {
            dx.row_mut(layout.last_row(b)).assign(&d_pooled.row(b));
        }
        for (block, cache) in self.blocks.iter_mut().zip(&pass.block_caches).rev() {
            dx = block.backward(dx, cache, layout);
        }
        for (b, &len) in layout.lens.iter().enumerate() {
            for t in 0..len {
                let mut g = self.positions.grad.row_mut(len - 1 - t);
                g += &dx.row(b * layout.width + t);
            }
        }
        if let Some(mask) = &pass.dropout_mask {
            dx *= mask;
        }
        let mut d_all = d_items.clone();
        for (b, p) in pass.prefixes.iter().enumerate() {
            for (t, &item) in p.iter().enumerate() {
                let mut g = d_all.row_mut(item as usize);
                g += &dx.row(b * layout.width + t);
            }
        }
        self.embedder.backward_all(&d_all, &pass.embed_cache);
    }

    /// Converts parameters to another precision.
    pub fn cast<G: Real>(&self) -> SrModel<G> {
        let conv = |a: &Array2<F>| a.mapv(|v| G::from_f64(v.to_f64().unwrap()).unwrap());
        let text = self.text_matrix().map(|t| t.mapv(|v| v.to_f32().unwrap()));
        let mut out = SrModel::<G>::new(self.config.clone(), self.n_items, text.as_ref(), 0).expect("valid config");
        for ((_, dst), (_, src)) in out.params_mut().into_iter().zip(self.params()) {
            dst.value = conv(&src.value);
        }
        out
    }

    /// Squared L2 norm of all accumulated gradients (diagnostics).
    pub fn grad_norm_sq(&self) -> f64 {
        self.params()
            .iter()
            .map(|(_, p)| p.grad.iter().map(|g| g.to_f64().unwrap().powi(2)).sum::<f64>())
            .sum()
    }
}
