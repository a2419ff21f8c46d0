use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use super::config::{DataSource, ExperimentConfig, ModelSpec, TextSource, PRESET_NAMES};
use super::CliError;
use crate::dataset::{
    core_filter, leave_one_out_split, load_interactions, read_embedding_matrix, write_embedding_matrix,
    DatasetManifest, InteractionDataset, InteractionFormat, SplitKind, Splits,
};
use crate::ensemble::{ensemble_rank_table, sweep, sweep_examples, EnsembleParams, SweepSummary};
use crate::metrics::{
    complementarity, correct_set, ndcg_at_k, per_user_recall, recall_at_k, render_model_table, render_pair_table,
    significance, universe, ModelSummary, PairReport, Significance, TrialMetrics,
};
use crate::model::{load_checkpoint, SrModel};
use crate::retrieval::{score_split, RankTable};
use crate::synth::{generate, write_synth};
use crate::trainer::{load_state, save_state, write_history, TrainConfig, Trainer, BEST_CHECKPOINT, HISTORY_FILE, LAST_CHECKPOINT};

pub const CONFIG_SNAPSHOT: &str = "config.json";
pub const INPUTS_FILE: &str = "inputs.json";
pub const RUN_LOG: &str = "run_log.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    write_bytes(path, s.as_bytes())
}

/// Content hashes that identify a run's inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputHashes {
    pub config_sha256: String,
    pub inputs: BTreeMap<String, String>,
    pub trial_seeds: Vec<u64>,
    /// Hash over the config hash and every input hash.
    pub run_hash: String,
}

/// A run directory and its resolved config.
#[derive(Debug, Clone)]
pub struct Run {
    pub dir: PathBuf,
    pub config: ExperimentConfig,
    pub hashes: InputHashes,
}

impl Run {
    /// Validates the config, creates the run directory and writes the config
    /// snapshot and input hashes.
    pub fn open(config: ExperimentConfig, output_root: &Path) -> Result<Run, CliError> {
        config.validate()?;
        let dir = output_root.join(&config.output_dir);
        fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        let mut snapshot = serde_json::to_string_pretty(&config).expect("serializable");
        snapshot.push('\n');
        let ds = &config.dataset;
        let mut inputs = BTreeMap::new();
        let files = [
            ("interactions", ds.interactions.as_ref().filter(|_| ds.source == DataSource::File)),
            ("text_embeddings", ds.text_embeddings.as_ref().filter(|_| ds.source == DataSource::File)),
            ("alt_text_embeddings", ds.alt_text_embeddings.as_ref()),
        ];
        for (name, path) in files {
            if let Some(p) = path {
                inputs.insert(name.to_string(), sha256_file(p)?);
            }
        }
        let config_sha256 = sha256_hex(snapshot.as_bytes());
        let mut all = config_sha256.clone();
        for (k, v) in &inputs {
            all.push_str(&format!("\n{k} {v}"));
        }
        let hashes = InputHashes {
            run_hash: sha256_hex(all.as_bytes()),
            config_sha256,
            inputs,
            trial_seeds: config.trial_seeds(),
        };
        write_bytes(&dir.join(CONFIG_SNAPSHOT), snapshot.as_bytes())?;
        write_json(&dir.join(INPUTS_FILE), &hashes)?;
        Ok(Run { dir, config, hashes })
    }

    pub fn data_dir(&self) -> PathBuf {
        self.dir.join("data")
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.dir.join("reports")
    }

    pub fn model_dir(&self, name: &str, seed: u64) -> PathBuf {
        self.dir.join("models").join(name).join(format!("seed{seed}"))
    }

    /// Appends a timestamped line to the run log. Timestamps appear nowhere
    /// else except `history.jsonl`.
    pub fn log(&self, command: &str, event: serde_json::Value) {
        let t = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64());
        let line = json!({"unix_time": t, "command": command, "event": event});
        let path = self.dir.join(RUN_LOG);
        if let Ok(mut f) = fs::OpenOptions::new().create(true).append(true).open(path) {
            let _ = writeln!(f, "{line}");
        }
    }
}

/// Processed data loaded back from a run directory.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub dataset: InteractionDataset,
    pub splits: Splits,
    pub text: Option<Array2<f32>>,
    pub alt_text: Option<Array2<f32>>,
}

impl PreparedData {
    pub fn text_for(&self, spec: &ModelSpec) -> Result<Option<&Array2<f32>>, CliError> {
        if !spec.needs_text() {
            return Ok(None);
        }
        let t = match spec.text {
            TextSource::Primary => self.text.as_ref(),
            TextSource::Alternate => self.alt_text.as_ref(),
        };
        t.map(Some)
            .ok_or_else(|| CliError::Data(format!("model `{}` needs text embeddings but none were prepared", spec.name)))
    }
}

const TEXT_FILE: &str = "text.emb";
const ALT_TEXT_FILE: &str = "text_alt.emb";
const INTERACTIONS_FILE: &str = "interactions.tsv";

/// Writes the processed dataset, aligned text matrices and manifest into
/// `data/`.
pub fn cmd_prepare(run: &Run) -> Result<DatasetManifest, CliError> {
    let cfg = &run.config.dataset;
    let data = run.data_dir();
    fs::create_dir_all(&data).map_err(|e| CliError::io(&data, e))?;
    let (source_sha256, core_k) = match cfg.source {
        DataSource::Synth => {
            let out = generate(&cfg.synth)?;
            write_synth(&data, &out)?;
            (None, None)
        }
        DataSource::File => {
            let path = cfg.interactions.as_ref().expect("validated");
            let format = cfg
                .format
                .or_else(|| InteractionFormat::from_path(path))
                .ok_or_else(|| CliError::Config(format!("cannot infer the format of {}; set dataset.format", path.display())))?;
            let raw = load_interactions(path, format)?;
            let k = cfg.core_k.unwrap_or(1);
            let ds = core_filter(&raw, k)?;
            crate::dataset::write_interactions(data.join(INTERACTIONS_FILE), InteractionFormat::Tsv, &ds.to_interactions())?;
            if let Some(t) = &cfg.text_embeddings {
                let m = read_embedding_matrix(t)?.aligned_to(ds.items())?;
                write_embedding_matrix(&m, data.join(TEXT_FILE))?;
            }
            (Some(sha256_file(path)?), cfg.core_k)
        }
    };
    if let Some(t) = &cfg.alt_text_embeddings {
        let ds = read_processed(&data)?;
        let m = read_embedding_matrix(t)?.aligned_to(ds.items())?;
        write_embedding_matrix(&m, data.join(ALT_TEXT_FILE))?;
    }
    let ds = read_processed(&data)?;
    let splits = leave_one_out_split(&ds, cfg.max_seq_len);
    let mut manifest = DatasetManifest::new(&ds, &splits, core_k);
    manifest.source_sha256 = source_sha256;
    write_json(&data.join(MANIFEST_FILE), &manifest)?;
    run.log("prepare", json!({"n_users": manifest.n_users, "n_items": manifest.n_items}));
    Ok(manifest)
}

fn read_processed(data: &Path) -> Result<InteractionDataset, CliError> {
    let raw = load_interactions(data.join(INTERACTIONS_FILE), InteractionFormat::Tsv)?;
    Ok(core_filter(&raw, 1)?)
}

/// Loads `data/`, preparing it first if absent.
pub fn load_prepared(run: &Run) -> Result<PreparedData, CliError> {
    let data = run.data_dir();
    if !data.join(MANIFEST_FILE).is_file() {
        cmd_prepare(run)?;
    }
    let dataset = read_processed(&data)?;
    let splits = leave_one_out_split(&dataset, run.config.dataset.max_seq_len);
    let text_of = |name: &str| -> Result<Option<Array2<f32>>, CliError> {
        let p = data.join(name);
        if !p.is_file() {
            return Ok(None);
        }
        Ok(Some(read_embedding_matrix(&p)?.aligned_to(dataset.items())?.rows().clone()))
    };
    let text = text_of(TEXT_FILE)?;
    let alt_text = text_of(ALT_TEXT_FILE)?;
    Ok(PreparedData {
        dataset,
        splits,
        text,
        alt_text,
    })
}

/// Writes a synthetic dataset to `out` (interactions, text embeddings,
/// provenance and the generator config).
pub fn cmd_synth(config: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    let synth = &config.dataset.synth;
    let generated = generate(synth)?;
    write_synth(out, &generated)?;
    write_json(&out.join("synth_config.json"), synth)
}

fn select_models(run: &Run, names: Option<&[String]>) -> Result<Vec<ModelSpec>, CliError> {
    let specs = run.config.model_specs()?;
    let Some(names) = names else { return Ok(specs) };
    names
        .iter()
        .map(|n| {
            specs.iter().find(|s| &s.name == n).cloned().ok_or_else(|| {
                let configured: Vec<&str> = specs.iter().map(|s| s.name.as_str()).collect();
                CliError::Config(format!(
                    "unknown model `{n}`; configured models: {}; presets: {}",
                    configured.join(", "),
                    PRESET_NAMES.join(", ")
                ))
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub model: String,
    pub seed: u64,
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_val_recall: f64,
    pub stop_reason: crate::trainer::StopReason,
}

/// Trains every selected model for every trial seed. With `resume`, runs
/// with a `last.ckpt` continue from it.
pub fn cmd_train(run: &Run, models: Option<&[String]>, resume: bool) -> Result<Vec<TrainSummary>, CliError> {
    let data = load_prepared(run)?;
    let specs = select_models(run, models)?;
    let jobs: Vec<(&ModelSpec, u64)> = specs
        .iter()
        .flat_map(|s| run.config.trial_seeds().into_iter().map(move |seed| (s, seed)))
        .collect();
    run.log("train", json!({"event": "start", "jobs": jobs.len()}));
    let results: Vec<Result<TrainSummary, CliError>> = jobs
        .par_iter()
        .map(|&(spec, seed)| train_one(run, &data, spec, seed, resume))
        .collect();
    let summaries = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    write_json(&run.reports_dir().join("train.json"), &summaries)?;
    run.log("train", json!({"event": "done"}));
    Ok(summaries)
}

fn train_one(run: &Run, data: &PreparedData, spec: &ModelSpec, seed: u64, resume: bool) -> Result<TrainSummary, CliError> {
    let dir = run.model_dir(&spec.name, seed);
    let config = TrainConfig {
        seed,
        loss_mode: spec.loss_mode,
        ..run.config.train.clone()
    };
    let trainer = if resume && dir.join(LAST_CHECKPOINT).is_file() {
        let state = load_state(&dir)?;
        if state.model.config() != &spec.model {
            return Err(CliError::Config(format!(
                "checkpoint in {} was trained with a different model config",
                dir.display()
            )));
        }
        run.log("train", json!({"model": spec.name, "seed": seed, "resumed_at_epoch": state.epoch}));
        Trainer::resume(state, &data.splits, config)?
    } else {
        let model = SrModel::new(spec.model.clone(), data.dataset.n_items(), data.text_for(spec)?, seed)?;
        Trainer::new(model, &data.splits, config)?
    };
    let outcome = trainer.run_with(|state| {
        save_state(&dir, state)?;
        write_history(dir.join(HISTORY_FILE), &state.history)?;
        let last = state.history.last().expect("an epoch ran");
        run.log(
            "train",
            json!({"model": spec.name, "seed": seed, "epoch": last.epoch, "loss": last.loss, "val_recall@10": last.val_recall_at_10, "wall_time": last.wall_time}),
        );
        Ok(())
    })?;
    save_state(&dir, &outcome.final_state)?;
    Ok(TrainSummary {
        model: spec.name.clone(),
        seed,
        epochs: outcome.history.len(),
        best_epoch: outcome.best.epoch,
        best_val_recall: outcome.best.val_recall,
        stop_reason: outcome.stop_reason,
    })
}

/// Best checkpoint of one trial.
pub fn load_best(run: &Run, spec: &ModelSpec, seed: u64) -> Result<SrModel<f32>, CliError> {
    let path = run.model_dir(&spec.name, seed).join(BEST_CHECKPOINT);
    if !path.is_file() {
        return Err(CliError::Data(format!(
            "no trained checkpoint for `{}` seed {seed} at {}; run `train` first",
            spec.name,
            path.display()
        )));
    }
    let ck = load_checkpoint(&path)?;
    if ck.model.config() != &spec.model {
        return Err(CliError::Data(format!("checkpoint {} does not match the configured model", path.display())));
    }
    Ok(ck.model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSummary {
    pub k: usize,
    pub report: PairReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub run_hash: String,
    pub split: SplitKind,
    pub trial_seeds: Vec<u64>,
    /// One entry per cutoff, each listing every model.
    pub models: Vec<Vec<ModelSummary>>,
    pub pairs: Vec<PairSummary>,
}

fn trial_metrics(seed: u64, table: &RankTable, k: usize) -> TrialMetrics {
    TrialMetrics {
        seed,
        recall: recall_at_k(table, k),
        ndcg: ndcg_at_k(table, k),
    }
}

/// Test-split metrics per model and trial. With `pairs`, also the
/// complementarity of every configured pair with a paired t-test on
/// per-user recall pooled over trials.
pub fn cmd_evaluate(run: &Run, pairs: bool) -> Result<EvaluationReport, CliError> {
    let data = load_prepared(run)?;
    let specs = run.config.model_specs()?;
    let seeds = run.config.trial_seeds();
    let pair_list = if pairs { run.config.pair_list()? } else { Vec::new() };
    for (a, b) in &pair_list {
        for n in [a, b] {
            if !specs.iter().any(|s| &s.name == n) {
                return Err(CliError::Config(format!("pair model `{n}` is not among the configured models")));
            }
        }
    }
    let jobs: Vec<(&ModelSpec, u64)> = specs.iter().flat_map(|s| seeds.iter().map(move |&t| (s, t))).collect();
    let tables: Vec<Result<RankTable, CliError>> = jobs
        .par_iter()
        .map(|&(spec, seed)| {
            let model = load_best(run, spec, seed)?;
            Ok(RankTable::from_scores(&data.splits.test, &score_split(&model, &data.splits.test)?))
        })
        .collect();
    let mut by_key: BTreeMap<(String, u64), RankTable> = BTreeMap::new();
    for ((spec, seed), t) in jobs.iter().zip(tables) {
        by_key.insert((spec.name.clone(), *seed), t?);
    }
    let table = |name: &str, seed: u64| &by_key[&(name.to_string(), seed)];

    let cutoffs = &run.config.cutoffs;
    let models: Vec<Vec<ModelSummary>> = cutoffs
        .iter()
        .map(|&k| {
            specs
                .iter()
                .map(|s| ModelSummary::new(&s.name, k, seeds.iter().map(|&t| trial_metrics(t, table(&s.name, t), k)).collect()))
                .collect()
        })
        .collect();

    let mut pair_reports = Vec::new();
    for &k in cutoffs {
        for (a, b) in &pair_list {
            let mut per_trial = Vec::with_capacity(seeds.len());
            let (mut ua, mut ub) = (Vec::new(), Vec::new());
            for &t in &seeds {
                let (ta, tb) = (table(a, t), table(b, t));
                per_trial.push(complementarity(&correct_set(ta, k)?, &correct_set(tb, k)?, &universe(ta))?);
                ua.extend(per_user_recall(ta, k));
                ub.extend(per_user_recall(tb, k));
            }
            let mut report = PairReport::new(a, b, per_trial);
            report.significance = Some(significance(&ua, &ub)?);
            pair_reports.push(PairSummary { k, report });
        }
    }

    let report = EvaluationReport {
        run_hash: run.hashes.run_hash.clone(),
        split: SplitKind::Test,
        trial_seeds: seeds.clone(),
        models,
        pairs: pair_reports,
    };
    let dir = run.reports_dir();
    write_json(&dir.join("metrics.json"), &report)?;
    let mut text = format!("test split, trial seeds {seeds:?}, run {}\n", run.hashes.run_hash);
    for m in &report.models {
        text.push('\n');
        text.push_str(&render_model_table(m));
    }
    write_bytes(&dir.join("metrics.txt"), text.as_bytes())?;
    if pairs {
        let mut text = String::new();
        for &k in cutoffs {
            let ps: Vec<PairReport> = report.pairs.iter().filter(|p| p.k == k).map(|p| p.report.clone()).collect();
            text.push_str(&format!("@{k}\n{}\n", render_pair_table(&ps)));
        }
        write_bytes(&dir.join("pairs.txt"), text.as_bytes())?;
        write_json(&dir.join("pairs.json"), &report.pairs)?;
    }
    run.log("evaluate", json!({"pairs": pairs}));
    Ok(report)
}

fn ensemble_specs(run: &Run) -> Result<(ModelSpec, ModelSpec), CliError> {
    let e = &run.config.ensemble;
    let picked = select_models(run, Some(&[e.id_model.clone(), e.text_model.clone()]))?;
    Ok((picked[0].clone(), picked[1].clone()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub run_hash: String,
    pub id_model: String,
    pub text_model: String,
    pub alpha: f64,
    /// `None` is `τ = ∞`.
    pub log10_tau: Option<f64>,
    /// Per cutoff: the two members and the ensemble.
    pub models: Vec<Vec<ModelSummary>>,
    /// Ensemble vs. the stronger member at `ensemble.k`, per-user recall
    /// pooled over trials.
    pub significance_vs_best: Significance,
}

/// Test metrics of the `(α, τ)` ensemble of the configured ID and text
/// models next to both members.
pub fn cmd_ensemble(run: &Run) -> Result<EnsembleReport, CliError> {
    let data = load_prepared(run)?;
    let (id_spec, text_spec) = ensemble_specs(run)?;
    let e = &run.config.ensemble;
    let tau = e.log10_tau.map_or(f64::INFINITY, |t| 10f64.powf(t));
    let params = EnsembleParams::new(e.alpha, tau)?;
    let seeds = run.config.trial_seeds();
    let test = &data.splits.test;
    let mut tables = Vec::with_capacity(seeds.len());
    for &seed in &seeds {
        let s_id = score_split(&load_best(run, &id_spec, seed)?, test)?;
        let s_text = score_split(&load_best(run, &text_spec, seed)?, test)?;
        let ens = ensemble_rank_table(test, &s_id, &s_text, params)?;
        tables.push([RankTable::from_scores(test, &s_id), RankTable::from_scores(test, &s_text), ens]);
    }
    let label = match e.log10_tau {
        None if e.alpha == 0.5 => "ensrec".to_string(),
        None => format!("ens(a={},tau=inf)", e.alpha),
        Some(t) => format!("ens(a={},tau=1e{t})", e.alpha),
    };
    let names = [id_spec.name.clone(), text_spec.name.clone(), label];
    let models: Vec<Vec<ModelSummary>> = run
        .config
        .cutoffs
        .iter()
        .map(|&k| {
            (0..3)
                .map(|m| ModelSummary::new(&names[m], k, seeds.iter().zip(&tables).map(|(&s, t)| trial_metrics(s, &t[m], k)).collect()))
                .collect()
        })
        .collect();
    let mean = |m: usize| tables.iter().map(|t| recall_at_k(&t[m], e.k)).sum::<f64>();
    let best = if mean(0) >= mean(1) { 0 } else { 1 };
    let pooled = |m: usize| tables.iter().flat_map(|t| per_user_recall(&t[m], e.k)).collect::<Vec<_>>();
    let report = EnsembleReport {
        run_hash: run.hashes.run_hash.clone(),
        id_model: id_spec.name.clone(),
        text_model: text_spec.name.clone(),
        alpha: e.alpha,
        log10_tau: e.log10_tau,
        models,
        significance_vs_best: significance(&pooled(2), &pooled(best))?,
    };
    let dir = run.reports_dir();
    write_json(&dir.join("ensemble.json"), &report)?;
    let mut text = format!("test split, trial seeds {seeds:?}, run {}\n", run.hashes.run_hash);
    for m in &report.models {
        text.push('\n');
        text.push_str(&render_model_table(m));
    }
    let s = &report.significance_vs_best;
    text.push_str(&format!(
        "\nensemble vs {} at @{}: mean diff {:.5}, t {:.4}, p {:.4}{}\n",
        names[best],
        e.k,
        s.mean_difference,
        s.t_statistic,
        s.p_value,
        if s.p_value < 0.05 { " *" } else { "" }
    ));
    write_bytes(&dir.join("ensemble.txt"), text.as_bytes())?;
    run.log("ensemble", json!({"alpha": e.alpha, "log10_tau": e.log10_tau}));
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSweep {
    pub seed: u64,
    pub csv: String,
    pub summary: SweepSummary,
    /// Variance of test recall over alpha, one value per tau grid point.
    pub test_alpha_variance: Vec<f64>,
}

/// `(α, log10 τ)` grid sweep over all three splits for every trial; one CSV
/// per seed plus a JSON summary of the per-split selections.
pub fn cmd_sweep(run: &Run) -> Result<Vec<SeedSweep>, CliError> {
    let data = load_prepared(run)?;
    let (id_spec, text_spec) = ensemble_specs(run)?;
    let e = &run.config.ensemble;
    let mut out = Vec::new();
    for seed in run.config.trial_seeds() {
        let id = load_best(run, &id_spec, seed)?;
        let text = load_best(run, &text_spec, seed)?;
        let mut inputs = Vec::with_capacity(3);
        for kind in SplitKind::ALL {
            let view = data.splits.get(kind);
            let (s_id, s_text) = (score_split(&id, view)?, score_split(&text, view)?);
            inputs.push((kind, sweep_examples(view, &s_id.view(), &s_text.view(), e.k)));
        }
        let result = sweep(&inputs, &e.alpha_grid, &e.log10_tau_grid, e.k)?;
        let csv = result.to_csv();
        let name = format!("sweep_seed{seed}.csv");
        write_bytes(&run.reports_dir().join(&name), csv.as_bytes())?;
        let provenance = json!({
            "run_hash": run.hashes.run_hash,
            "seed": seed,
            "id_model": id_spec.name,
            "text_model": text_spec.name,
            "csv": name,
        });
        let test_alpha_variance = (0..result.log10_tau_grid.len())
            .map(|t| result.alpha_variance(SplitKind::Test, t).expect("test split swept"))
            .collect();
        out.push(SeedSweep {
            seed,
            summary: result.summary(provenance),
            csv,
            test_alpha_variance,
        });
    }
    let summaries: Vec<serde_json::Value> = out
        .iter()
        .map(|s| json!({"seed": s.seed, "summary": s.summary, "test_alpha_variance": s.test_alpha_variance}))
        .collect();
    write_json(&run.reports_dir().join("sweep.json"), &summaries)?;
    run.log("sweep", json!({"seeds": run.config.trial_seeds()}));
    Ok(out)
}
