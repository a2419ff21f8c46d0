use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::CliError;
use crate::dataset::{InteractionFormat, DEFAULT_MAX_SEQ_LEN};
use crate::ensemble::{default_alpha_grid, default_log10_tau_grid};
use crate::model::{EmbedderConfig, EncoderConfig, ModelConfig, ProjectionKind};
use crate::synth::SynthConfig;
use crate::trainer::{LossMode, TrainConfig};

pub const PRESET_NAMES: [&str; 8] = [
    "id_only", "text_only", "id_T", "id_ell", "id_init", "text_T", "text_ell", "text_E",
];

/// The variant pairs compared against `(id_only, text_only)`.
pub const TABLE2_PAIRS: [(&str, &str); 7] = [
    ("id_only", "text_only"),
    ("id_only", "id_T"),
    ("id_only", "id_ell"),
    ("id_only", "id_init"),
    ("text_only", "text_T"),
    ("text_only", "text_ell"),
    ("text_only", "text_E"),
];

/// Standard deviation multiplier of the `id_init` preset (25x the variance).
pub const ID_INIT_MULTIPLIER: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synth,
    File,
}

/// Which text matrix a frozen-text model reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TextSource {
    #[default]
    Primary,
    Alternate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub source: DataSource,
    pub interactions: Option<PathBuf>,
    pub format: Option<InteractionFormat>,
    pub core_k: Option<usize>,
    pub text_embeddings: Option<PathBuf>,
    pub alt_text_embeddings: Option<PathBuf>,
    pub max_seq_len: usize,
    pub synth: SynthConfig,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            source: DataSource::Synth,
            interactions: None,
            format: None,
            core_k: None,
            text_embeddings: None,
            alt_text_embeddings: None,
            max_seq_len: DEFAULT_MAX_SEQ_LEN,
            synth: SynthConfig::default(),
        }
    }
}

/// A model is either a preset name or a named table overriding a preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelEntry {
    Preset(String),
    Custom(CustomModel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomModel {
    pub name: String,
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub embedder: Option<EmbedderConfig>,
    #[serde(default)]
    pub encoder: Option<EncoderConfig>,
    #[serde(default)]
    pub loss_mode: Option<LossMode>,
    #[serde(default)]
    pub text: Option<TextSource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PairsSpec {
    Preset(String),
    List(Vec<(String, String)>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    pub id_model: String,
    pub text_model: String,
    pub alpha: f64,
    /// `None` is `τ = ∞`.
    pub log10_tau: Option<f64>,
    pub k: usize,
    pub alpha_grid: Vec<f64>,
    pub log10_tau_grid: Vec<f64>,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        Self {
            id_model: "id_only".into(),
            text_model: "text_only".into(),
            alpha: 0.5,
            log10_tau: None,
            k: 10,
            alpha_grid: default_alpha_grid(),
            log10_tau_grid: default_log10_tau_grid(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub trials: usize,
    /// Run directory, relative to the output root unless absolute.
    pub output_dir: PathBuf,
    pub dataset: DatasetSpec,
    /// Base encoder shared by all presets (`*_T` presets swap it for a decoder).
    pub encoder: EncoderConfig,
    pub models: Vec<ModelEntry>,
    pub train: TrainConfig,
    pub cutoffs: Vec<usize>,
    pub pairs: PairsSpec,
    pub ensemble: EnsembleSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            trials: 3,
            output_dir: PathBuf::from("runs/default"),
            dataset: DatasetSpec::default(),
            encoder: EncoderConfig::default(),
            models: vec![ModelEntry::Preset("id_only".into()), ModelEntry::Preset("text_only".into())],
            train: TrainConfig::default(),
            cutoffs: vec![10, 20],
            pairs: PairsSpec::List(vec![("id_only".into(), "text_only".into())]),
            ensemble: EnsembleSection::default(),
        }
    }
}

/// A fully resolved model: architecture, loss and text source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub model: ModelConfig,
    pub loss_mode: LossMode,
    pub text: TextSource,
}

impl ModelSpec {
    pub fn needs_text(&self) -> bool {
        self.model.embedder.source == crate::model::EmbedderSource::FrozenText
    }
}

fn cfg_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// Resolves a preset against the base encoder and train config.
pub fn preset(name: &str, encoder: &EncoderConfig, train: &TrainConfig) -> Result<ModelSpec, CliError> {
    let d = encoder.d_model;
    let decoder = EncoderConfig {
        max_seq_len: encoder.max_seq_len,
        ..EncoderConfig::sasrec_decoder(d)
    };
    let id = EmbedderConfig::id_table(d);
    let text = EmbedderConfig::frozen_text(d, ProjectionKind::Linear);
    let (embedder, enc, loss, src) = match name {
        "id_only" => (id, encoder.clone(), train.loss_mode, TextSource::Primary),
        "text_only" => (text, encoder.clone(), train.loss_mode, TextSource::Primary),
        "id_T" => (id, decoder, train.loss_mode, TextSource::Primary),
        "text_T" => (text, decoder, train.loss_mode, TextSource::Primary),
        "id_ell" => (id, encoder.clone(), LossMode::InBatch, TextSource::Primary),
        "text_ell" => (text, encoder.clone(), LossMode::InBatch, TextSource::Primary),
        "id_init" => (
            EmbedderConfig {
                init_std_multiplier: ID_INIT_MULTIPLIER,
                ..id
            },
            encoder.clone(),
            train.loss_mode,
            TextSource::Primary,
        ),
        "text_E" => (text, encoder.clone(), train.loss_mode, TextSource::Alternate),
        other => {
            return Err(cfg_err(format!(
                "unknown model `{other}`; valid names: {}",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    Ok(ModelSpec {
        name: name.to_string(),
        model: ModelConfig { embedder, encoder: enc },
        loss_mode: loss,
        text: src,
    })
}

impl ExperimentConfig {
    pub fn trial_seeds(&self) -> Vec<u64> {
        (0..self.trials as u64).map(|t| self.seed + t).collect()
    }

    pub fn model_specs(&self) -> Result<Vec<ModelSpec>, CliError> {
        let mut out = Vec::with_capacity(self.models.len());
        for entry in &self.models {
            let spec = match entry {
                ModelEntry::Preset(name) => preset(name, &self.encoder, &self.train)?,
                ModelEntry::Custom(c) => {
                    let base = preset(c.preset.as_deref().unwrap_or("id_only"), &self.encoder, &self.train)?;
                    let mut model = base.model;
                    if let Some(e) = &c.embedder {
                        model.embedder = e.clone();
                    }
                    if let Some(e) = &c.encoder {
                        model.encoder = e.clone();
                    }
                    ModelSpec {
                        name: c.name.clone(),
                        model,
                        loss_mode: c.loss_mode.unwrap_or(base.loss_mode),
                        text: c.text.unwrap_or(base.text),
                    }
                }
            };
            spec.model.validate().map_err(|e| cfg_err(format!("model `{}`: {e}", spec.name)))?;
            out.push(spec);
        }
        Ok(out)
    }

    /// The configured pairs, expanding the `table2` preset.
    pub fn pair_list(&self) -> Result<Vec<(String, String)>, CliError> {
        match &self.pairs {
            PairsSpec::Preset(p) if p == "table2" => {
                Ok(TABLE2_PAIRS.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect())
            }
            PairsSpec::Preset(p) => Err(cfg_err(format!("unknown pairs preset `{p}` (table2)"))),
            PairsSpec::List(l) => Ok(l.clone()),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.trials == 0 {
            return Err(cfg_err("trials must be at least 1"));
        }
        if self.cutoffs.is_empty() || self.cutoffs.contains(&0) {
            return Err(cfg_err("cutoffs must be a non-empty list of positive integers"));
        }
        if self.dataset.max_seq_len == 0 {
            return Err(cfg_err("dataset.max_seq_len must be positive"));
        }
        self.train.validate().map_err(|e| cfg_err(e.to_string()))?;
        let specs = self.model_specs()?;
        let mut names = BTreeSet::new();
        for s in &specs {
            if !names.insert(s.name.as_str()) {
                return Err(cfg_err(format!("duplicate model name `{}`", s.name)));
            }
            if s.model.encoder.max_seq_len < self.dataset.max_seq_len {
                return Err(cfg_err(format!(
                    "model `{}` has max_seq_len {} below dataset.max_seq_len {}",
                    s.name, s.model.encoder.max_seq_len, self.dataset.max_seq_len
                )));
            }
        }
        let ds = &self.dataset;
        match ds.source {
            DataSource::Synth => ds.synth.validate().map_err(|e| cfg_err(e.to_string()))?,
            DataSource::File => {
                let p = ds.interactions.as_ref().ok_or_else(|| cfg_err("dataset.interactions is required"))?;
                require_file(p)?;
                if specs.iter().any(|s| s.needs_text() && s.text == TextSource::Primary) {
                    require_file(ds.text_embeddings.as_ref().ok_or_else(|| cfg_err("dataset.text_embeddings is required by text models"))?)?;
                }
            }
        }
        if specs.iter().any(|s| s.needs_text() && s.text == TextSource::Alternate) {
            let p = ds
                .alt_text_embeddings
                .as_ref()
                .ok_or_else(|| cfg_err("dataset.alt_text_embeddings is required by models using the alternate text source"))?;
            require_file(p)?;
        }
        let e = &self.ensemble;
        if !(0.0..=1.0).contains(&e.alpha) || e.log10_tau.is_some_and(|t| !t.is_finite()) || e.k == 0 {
            return Err(cfg_err("ensemble needs alpha in [0, 1], a finite log10_tau (or none) and k >= 1"));
        }
        if e.alpha_grid.is_empty() || e.log10_tau_grid.is_empty() {
            return Err(cfg_err("sweep grids must be non-empty"));
        }
        Ok(())
    }

    /// Makes relative input paths relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let ds = &mut self.dataset;
        for p in [&mut ds.interactions, &mut ds.text_embeddings, &mut ds.alt_text_embeddings]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

fn require_file(p: &Path) -> Result<(), CliError> {
    if p.is_file() {
        Ok(())
    } else {
        Err(cfg_err(format!("input file {} does not exist", p.display())))
    }
}

/// Recursively merges `patch` into `base`; tables merge, everything else
/// replaces.
pub fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parses `a.b.c=value`, reading the value as TOML when possible and as a
/// bare string otherwise.
pub fn parse_override(s: &str) -> Result<Value, CliError> {
    let (key, raw) = s
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override `{s}` is not of the form key=value")))?;
    let value: Value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(t) => serde_json::to_value(&t["v"]).map_err(|e| cfg_err(e.to_string()))?,
        Err(_) => Value::String(raw.to_string()),
    };
    let mut out = value;
    for part in key.trim().rsplit('.') {
        if part.is_empty() {
            return Err(CliError::Usage(format!("override `{s}` has an empty key")));
        }
        out = serde_json::json!({ part: out });
    }
    Ok(out)
}

/// Reads a TOML or JSON config file into a JSON value.
pub fn read_config_file(path: &Path) -> Result<Value, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| cfg_err(format!("cannot read config {}: {e}", path.display())))?;
    let is_json = path.extension().is_some_and(|e| e == "json");
    if is_json {
        serde_json::from_str(&text).map_err(|e| cfg_err(format!("{}: {e}", path.display())))
    } else {
        let t: toml::Table = toml::from_str(&text).map_err(|e| cfg_err(format!("{}: {e}", path.display())))?;
        serde_json::to_value(t).map_err(|e| cfg_err(e.to_string()))
    }
}

/// Defaults, then the file, then `--set` overrides.
pub fn load_config(file: Option<&Path>, overrides: &[Value]) -> Result<ExperimentConfig, CliError> {
    let mut v = serde_json::to_value(ExperimentConfig::default()).expect("serializable");
    if let Some(f) = file {
        merge(&mut v, read_config_file(f)?);
    }
    for o in overrides {
        merge(&mut v, o.clone());
    }
    let mut cfg: ExperimentConfig = serde_json::from_value(v).map_err(|e| cfg_err(e.to_string()))?;
    if let Some(dir) = file.and_then(Path::parent) {
        cfg.resolve_paths(dir);
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_resolve_and_unknown_lists_names() {
        let c = ExperimentConfig::default();
        for n in PRESET_NAMES {
            let s = preset(n, &c.encoder, &c.train).unwrap();
            s.model.validate().unwrap();
        }
        let init = preset("id_init", &c.encoder, &c.train).unwrap();
        assert_eq!(init.model.embedder.init_std_multiplier.powi(2), 25.0);
        assert_eq!(preset("id_ell", &c.encoder, &c.train).unwrap().loss_mode, LossMode::InBatch);
        let msg = preset("id_X", &c.encoder, &c.train).unwrap_err().to_string();
        for n in PRESET_NAMES {
            assert!(msg.contains(n), "{msg}");
        }
    }

    #[test]
    fn overrides_merge_into_defaults() {
        let o = [
            parse_override("train.max_epochs=3").unwrap(),
            parse_override("dataset.synth.n_users=50").unwrap(),
            parse_override("output_dir=runs/x").unwrap(),
            parse_override("models=[\"id_only\"]").unwrap(),
        ];
        let c = load_config(None, &o).unwrap();
        assert_eq!(c.train.max_epochs, 3);
        assert_eq!(c.train.batch_size, TrainConfig::default().batch_size);
        assert_eq!(c.dataset.synth.n_users, 50);
        assert_eq!(c.output_dir, PathBuf::from("runs/x"));
        assert_eq!(c.models, vec![ModelEntry::Preset("id_only".into())]);
        assert!(parse_override("novalue").is_err());
    }

    #[test]
    fn toml_and_json_files_agree() {
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("c.toml");
        std::fs::write(&t, "seed = 7\npairs = \"table2\"\n[train]\nlearning_rate = 0.0003\n").unwrap();
        let j = dir.path().join("c.json");
        std::fs::write(&j, r#"{"seed": 7, "pairs": "table2", "train": {"learning_rate": 0.0003}}"#).unwrap();
        let a = load_config(Some(&t), &[]).unwrap();
        let b = load_config(Some(&j), &[]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.trial_seeds(), vec![7, 8, 9]);
        assert_eq!(a.pair_list().unwrap().len(), 7);
    }

    #[test]
    fn custom_models_and_validation() {
        let mut c = ExperimentConfig::default();
        c.models.push(ModelEntry::Custom(CustomModel {
            name: "wide".into(),
            preset: Some("text_only".into()),
            embedder: Some(EmbedderConfig::frozen_text(64, ProjectionKind::Mlp3)),
            encoder: None,
            loss_mode: None,
            text: None,
        }));
        c.validate().unwrap();
        assert_eq!(c.model_specs().unwrap()[2].model.embedder.projection, ProjectionKind::Mlp3);

        c.models.push(ModelEntry::Preset("id_only".into()));
        assert!(matches!(c.validate(), Err(CliError::Config(m)) if m.contains("duplicate")));

        let mut c = ExperimentConfig::default();
        c.models.push(ModelEntry::Preset("text_E".into()));
        assert!(matches!(c.validate(), Err(CliError::Config(m)) if m.contains("alt_text_embeddings")));

        let mut c = ExperimentConfig::default();
        c.dataset.source = DataSource::File;
        c.dataset.interactions = Some("/nonexistent/x.tsv".into());
        assert!(matches!(c.validate(), Err(CliError::Config(m)) if m.contains("does not exist")));
    }
}
