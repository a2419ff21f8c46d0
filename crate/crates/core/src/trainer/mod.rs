//! Mini-batch training with the InfoNCE next-item objective, Adam, and
//! early stopping on validation Recall@10.

mod loss;

use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Splits;
use crate::metrics::{recall_at_k, DEFAULT_K};
use crate::model::{load_checkpoint, save_checkpoint, ModelError, SrModel};
use crate::retrieval::{rank_table, RetrievalError};

pub use loss::{infonce_loss, InfoNceOutput, LossError, LossMode};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid train config: {0}")]
    Config(String),
    #[error("train split is empty")]
    EmptyTrainSplit,
    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad training state: {0}")]
    State(String),
}

fn io_err(path: &Path, source: std::io::Error) -> TrainError {
    TrainError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub loss_mode: LossMode,
    pub loss_temperature: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 256,
            loss_mode: LossMode::FullBatch,
            loss_temperature: 0.05,
            max_epochs: 200,
            patience: 10,
            seed: 0,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.loss_temperature > 0.0 && self.loss_temperature.is_finite()) {
            return bad("loss_temperature must be positive");
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 || self.eval_every == 0 {
            return bad("batch_size, max_epochs, patience and eval_every must be at least 1");
        }
        Ok(())
    }
}

/// One line of the training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    #[serde(rename = "val_recall@10")]
    pub val_recall_at_10: Option<f64>,
    /// Seconds since the run (or resumed run) started.
    pub wall_time: f64,
}

/// Adam with the usual moment constants and no weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub step: u64,
    m: Vec<Array2<f32>>,
    v: Vec<Array2<f32>>,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Adam {
    pub fn new(model: &SrModel<f32>, learning_rate: f64) -> Self {
        let zeros: Vec<Array2<f32>> = model.params().iter().map(|(_, p)| Array2::zeros(p.value.raw_dim())).collect();
        Self {
            learning_rate,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn update(&mut self, model: &mut SrModel<f32>) {
        self.step += 1;
        let c1 = 1.0 - BETA1.powi(self.step as i32);
        let c2 = 1.0 - BETA2.powi(self.step as i32);
        let lr = (self.learning_rate * c2.sqrt() / c1) as f32;
        let eps = (ADAM_EPS * c2.sqrt()) as f32;
        let (b1, b2) = (BETA1 as f32, BETA2 as f32);
        for (((_, p), m), v) in model.params_mut().into_iter().zip(&mut self.m).zip(&mut self.v) {
            ndarray::Zip::from(&mut p.value)
                .and(&p.grad)
                .and(m)
                .and(v)
                .for_each(|w, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *w -= lr * *m / (v.sqrt() + eps);
                });
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestModel {
    pub epoch: usize,
    pub val_recall: f64,
    pub model: SrModel<f32>,
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub model: SrModel<f32>,
    pub adam: Adam,
    /// Completed epochs.
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
    pub best: Option<BestModel>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: BestModel,
    pub history: Vec<EpochRecord>,
    pub stop_reason: StopReason,
    pub final_state: TrainState,
}

pub struct Trainer<'a> {
    splits: &'a Splits,
    config: TrainConfig,
    state: TrainState,
    started: Instant,
}

impl<'a> Trainer<'a> {
    pub fn new(model: SrModel<f32>, splits: &'a Splits, config: TrainConfig) -> Result<Self, TrainError> {
        let adam = Adam::new(&model, config.learning_rate);
        let state = TrainState {
            model,
            adam,
            epoch: 0,
            history: Vec::new(),
            best: None,
        };
        Self::resume(state, splits, config)
    }

    pub fn resume(state: TrainState, splits: &'a Splits, config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        if splits.train.is_empty() {
            return Err(TrainError::EmptyTrainSplit);
        }
        let max = state.model.config().encoder.max_seq_len;
        if splits.max_seq_len > max {
            return Err(TrainError::Config(format!(
                "split prefixes up to {} items exceed the encoder's max_seq_len {max}",
                splits.max_seq_len
            )));
        }
        let mut state = state;
        state.adam.learning_rate = config.learning_rate;
        Ok(Self {
            splits,
            config,
            state,
            started: Instant::now(),
        })
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn into_state(self) -> TrainState {
        self.state
    }

    /// Trains one epoch and validates if due; returns the new history line.
    pub fn run_epoch(&mut self) -> Result<EpochRecord, TrainError> {
        let epoch = self.state.epoch + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(epoch as u64);
        let train = &self.splits.train.examples;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (bi, chunk) in order.chunks(self.config.batch_size).enumerate() {
            let prefixes: Vec<&[u32]> = chunk.iter().map(|&i| train[i].prefix.as_slice()).collect();
            let targets: Vec<u32> = chunk.iter().map(|&i| train[i].target).collect();
            let model = &mut self.state.model;
            let pass = model.forward(&prefixes, Some(&mut rng))?;
            let users = pass.users.mapv(f64::from);
            let items = pass.items.mapv(f64::from);
            let candidates = match self.config.loss_mode {
                LossMode::FullBatch => items,
                LossMode::InBatch => items.select(Axis(0), &targets.iter().map(|&t| t as usize).collect::<Vec<_>>()),
            };
            let out = infonce_loss(
                &users.view(),
                &targets,
                &candidates.view(),
                self.config.loss_mode,
                self.config.loss_temperature,
            )?;
            if !out.loss.is_finite() {
                return Err(TrainError::Diverged {
                    epoch,
                    batch: bi,
                    loss: out.loss,
                });
            }
            total += out.loss * chunk.len() as f64;
            let d_users = out.d_users.mapv(|v| v as f32);
            let d_items = match self.config.loss_mode {
                LossMode::FullBatch => out.d_items.mapv(|v| v as f32),
                LossMode::InBatch => {
                    let mut d = Array2::<f32>::zeros(pass.items.raw_dim());
                    for (row, &t) in out.d_items.rows().into_iter().zip(&targets) {
                        let mut dst = d.row_mut(t as usize);
                        dst += &row.mapv(|v| v as f32);
                    }
                    d
                }
            };
            model.zero_grad();
            model.backward(&pass, &d_users, &d_items);
            self.state.adam.update(model);
        }
        self.state.model.zero_grad();
        let loss = total / train.len() as f64;
        let due = epoch % self.config.eval_every == 0 || epoch == self.config.max_epochs;
        let val_recall = if due { Some(self.validation_recall()?) } else { None };
        if let Some(r) = val_recall {
            if self.state.best.as_ref().is_none_or(|b| r > b.val_recall) {
                self.state.best = Some(BestModel {
                    epoch,
                    val_recall: r,
                    model: self.state.model.clone(),
                });
            }
        }
        let record = EpochRecord {
            epoch,
            loss,
            val_recall_at_10: val_recall,
            wall_time: self.started.elapsed().as_secs_f64(),
        };
        self.state.epoch = epoch;
        self.state.history.push(record.clone());
        Ok(record)
    }

    /// Recall@10 of the current parameters on the validation split.
    pub fn validation_recall(&self) -> Result<f64, TrainError> {
        if self.splits.validation.is_empty() {
            return Ok(0.0);
        }
        Ok(recall_at_k(&rank_table(&self.state.model, &self.splits.validation)?, DEFAULT_K))
    }

    /// Why training should stop now, if it should.
    pub fn stop_reason(&self) -> Option<StopReason> {
        if let Some(b) = &self.state.best {
            if self.state.epoch - b.epoch >= self.config.patience {
                return Some(StopReason::Patience);
            }
        }
        (self.state.epoch >= self.config.max_epochs).then_some(StopReason::MaxEpochs)
    }

    /// Trains until a stop condition, calling `on_epoch` after every epoch.
    pub fn run_with(
        mut self,
        mut on_epoch: impl FnMut(&TrainState) -> Result<(), TrainError>,
    ) -> Result<TrainOutcome, TrainError> {
        let stop_reason = loop {
            if let Some(r) = self.stop_reason() {
                break r;
            }
            self.run_epoch()?;
            on_epoch(&self.state)?;
        };
        let best = self
            .state
            .best
            .clone()
            .ok_or_else(|| TrainError::State("no validation was run".into()))?;
        Ok(TrainOutcome {
            best,
            history: self.state.history.clone(),
            stop_reason,
            final_state: self.state,
        })
    }

    pub fn run(self) -> Result<TrainOutcome, TrainError> {
        self.run_with(|_| Ok(()))
    }
}

pub fn train(model: SrModel<f32>, splits: &Splits, config: TrainConfig) -> Result<TrainOutcome, TrainError> {
    Trainer::new(model, splits, config)?.run()
}

pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const HISTORY_FILE: &str = "history.jsonl";

/// Writes `last.ckpt` (model, optimizer moments, history) and `best.ckpt`.
pub fn save_state(dir: impl AsRef<Path>, state: &TrainState) -> Result<(), TrainError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let names: Vec<String> = state.model.params().into_iter().map(|(n, _)| n).collect();
    let mut extra = Vec::with_capacity(2 * names.len());
    for (n, m) in names.iter().zip(&state.adam.m) {
        extra.push((format!("adam.m.{n}"), m.clone()));
    }
    for (n, v) in names.iter().zip(&state.adam.v) {
        extra.push((format!("adam.v.{n}"), v.clone()));
    }
    let meta = serde_json::json!({
        "epoch": state.epoch,
        "adam_step": state.adam.step,
        "learning_rate": state.adam.learning_rate,
        "history": state.history,
        "best_epoch": state.best.as_ref().map(|b| b.epoch),
        "best_val_recall": state.best.as_ref().map(|b| b.val_recall),
    });
    save_checkpoint(dir.join(LAST_CHECKPOINT), &state.model, &meta, &extra)?;
    if let Some(b) = &state.best {
        let meta = serde_json::json!({"epoch": b.epoch, "val_recall@10": b.val_recall});
        save_checkpoint(dir.join(BEST_CHECKPOINT), &b.model, &meta, &[])?;
    }
    Ok(())
}

pub fn load_state(dir: impl AsRef<Path>) -> Result<TrainState, TrainError> {
    let dir = dir.as_ref();
    let last = load_checkpoint(dir.join(LAST_CHECKPOINT))?;
    let meta = &last.metadata;
    let field = |k: &str| meta.get(k).ok_or_else(|| TrainError::State(format!("missing `{k}`")));
    let parse = |k: &str| -> Result<serde_json::Value, TrainError> { field(k).cloned() };
    let epoch = parse("epoch")?.as_u64().ok_or_else(|| TrainError::State("epoch".into()))? as usize;
    let step = parse("adam_step")?.as_u64().ok_or_else(|| TrainError::State("adam_step".into()))?;
    let lr = parse("learning_rate")?.as_f64().ok_or_else(|| TrainError::State("learning_rate".into()))?;
    let history: Vec<EpochRecord> =
        serde_json::from_value(parse("history")?).map_err(|e| TrainError::State(e.to_string()))?;
    let names: Vec<String> = last.model.params().into_iter().map(|(n, _)| n).collect();
    let find = |prefix: &str, n: &str| {
        last.extra_tensors
            .iter()
            .find(|(k, _)| *k == format!("{prefix}{n}"))
            .map(|(_, a)| a.clone())
            .ok_or_else(|| TrainError::State(format!("missing optimizer tensor for `{n}`")))
    };
    let m = names.iter().map(|n| find("adam.m.", n)).collect::<Result<Vec<_>, _>>()?;
    let v = names.iter().map(|n| find("adam.v.", n)).collect::<Result<Vec<_>, _>>()?;
    let best = match field("best_epoch")?.as_u64() {
        Some(be) => {
            let ck = load_checkpoint(dir.join(BEST_CHECKPOINT))?;
            Some(BestModel {
                epoch: be as usize,
                val_recall: field("best_val_recall")?.as_f64().unwrap_or(0.0),
                model: ck.model,
            })
        }
        None => None,
    };
    Ok(TrainState {
        model: last.model,
        adam: Adam {
            learning_rate: lr,
            step,
            m,
            v,
        },
        epoch,
        history,
        best,
    })
}

/// One JSON object per line: epoch, loss, val_recall@10, wall_time.
pub fn write_history(path: impl AsRef<Path>, history: &[EpochRecord]) -> Result<(), TrainError> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| io_err(path, e))?;
    for r in history {
        let line = serde_json::to_string(r).expect("serializable");
        writeln!(f, "{line}").map_err(|e| io_err(path, e))?;
    }
    Ok(())
}

pub fn read_history(path: impl AsRef<Path>) -> Result<Vec<EpochRecord>, TrainError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| TrainError::State(e.to_string())))
        .collect()
}
