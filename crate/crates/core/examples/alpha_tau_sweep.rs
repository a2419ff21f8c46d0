//! Sweeps the (alpha, log10 tau) grid on all three splits and selects the
//! parameters per split.

use ensrec::dataset::{leave_one_out_split, SplitKind};
use ensrec::ensemble::{default_alpha_grid, default_log10_tau_grid, sweep, sweep_examples};
use ensrec::model::{EmbedderConfig, EncoderConfig, ModelConfig, ProjectionKind, SrModel};
use ensrec::retrieval::score_split;
use ensrec::synth::{generate, SynthConfig};
use ensrec::trainer::{train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let synth = generate(&SynthConfig {
        n_users: 600,
        n_items: 150,
        n_clusters: 15,
        ..SynthConfig::default()
    })?;
    let encoder = EncoderConfig::default();
    let splits = leave_one_out_split(&synth.dataset, encoder.max_seq_len);
    let text = synth.text.rows().clone();
    let fit = |embedder| -> Result<SrModel, Box<dyn std::error::Error>> {
        let cfg = ModelConfig {
            embedder,
            encoder: encoder.clone(),
        };
        let model = SrModel::new(cfg, synth.dataset.n_items(), Some(&text), 3)?;
        Ok(train(model, &splits, TrainConfig { max_epochs: 15, patience: 3, seed: 3, ..TrainConfig::default() })?.best.model)
    };
    let id = fit(EmbedderConfig::id_table(encoder.d_model))?;
    let tx = fit(EmbedderConfig::frozen_text(encoder.d_model, ProjectionKind::Linear))?;

    let k = 10;
    let mut inputs = Vec::new();
    for kind in SplitKind::ALL {
        let view = splits.get(kind);
        let (s_id, s_text) = (score_split(&id, view)?, score_split(&tx, view)?);
        inputs.push((kind, sweep_examples(view, &s_id.view(), &s_text.view(), k)));
    }
    let result = sweep(&inputs, &default_alpha_grid(), &default_log10_tau_grid(), k)?;
    let summary = result.summary(serde_json::json!({"example": "alpha_tau_sweep"}));
    println!("{}", serde_json::to_string_pretty(&summary.selections)?);
    let last = result.log10_tau_grid.len() - 1;
    println!(
        "test variance over alpha: {:.3e} at tau 1e-2, {:.3e} at tau 1e3",
        result.alpha_variance(SplitKind::Test, 0).unwrap(),
        result.alpha_variance(SplitKind::Test, last).unwrap()
    );
    let csv = result.to_csv();
    println!("{} CSV rows, first: {}", csv.lines().count() - 1, csv.lines().nth(1).unwrap());
    Ok(())
}
