//! Correct-user sets, Jaccard, Genie and a paired t-test for an ID model, a
//! text model and a reseeded ID model.

use ensrec::dataset::leave_one_out_split;
use ensrec::metrics::{complementarity, correct_set, per_user_recall, render_pair_table, significance, universe, PairReport};
use ensrec::model::{EmbedderConfig, EncoderConfig, ModelConfig, ProjectionKind, SrModel};
use ensrec::retrieval::rank_table;
use ensrec::synth::{generate, SynthConfig};
use ensrec::trainer::{train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let synth = generate(&SynthConfig {
        n_users: 800,
        n_items: 200,
        n_clusters: 20,
        ..SynthConfig::default()
    })?;
    let encoder = EncoderConfig::default();
    let d = encoder.d_model;
    let splits = leave_one_out_split(&synth.dataset, encoder.max_seq_len);
    let text = synth.text.rows().clone();
    let fit = |embedder: EmbedderConfig, seed: u64| -> Result<_, Box<dyn std::error::Error>> {
        let cfg = ModelConfig {
            embedder,
            encoder: encoder.clone(),
        };
        let model = SrModel::new(cfg, synth.dataset.n_items(), Some(&text), seed)?;
        let out = train(model, &splits, TrainConfig { max_epochs: 20, patience: 4, seed, ..TrainConfig::default() })?;
        Ok(rank_table(&out.best.model, &splits.test)?)
    };
    let id = fit(EmbedderConfig::id_table(d), 1)?;
    let tx = fit(EmbedderConfig::frozen_text(d, ProjectionKind::Linear), 1)?;
    let id2 = fit(EmbedderConfig::id_table(d), 2)?;

    let u = universe(&id);
    let k = 10;
    let mut reports = Vec::new();
    for (name, other) in [("text", &tx), ("id reseeded", &id2)] {
        let r = complementarity(&correct_set(&id, k)?, &correct_set(other, k)?, &u)?;
        assert!(r.identity_holds() && r.bounds_hold());
        let mut p = PairReport::new("id", name, vec![r]);
        p.significance = Some(significance(&per_user_recall(&id, k), &per_user_recall(other, k))?);
        reports.push(p);
    }
    print!("{}", render_pair_table(&reports));
    Ok(())
}
