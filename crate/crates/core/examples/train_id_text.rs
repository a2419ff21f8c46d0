//! Trains an ID-based and a text-based model on synthetic data, then saves and
//! reloads the best checkpoint.

use ensrec::dataset::leave_one_out_split;
use ensrec::model::{load_checkpoint, save_checkpoint, EmbedderConfig, EncoderConfig, ModelConfig, ProjectionKind, SrModel};
use ensrec::retrieval::rank_table;
use ensrec::metrics::recall_at_k;
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
    let config = TrainConfig {
        max_epochs: 15,
        patience: 3,
        seed: 7,
        ..TrainConfig::default()
    };

    for (name, embedder) in [
        ("id", EmbedderConfig::id_table(encoder.d_model)),
        ("text", EmbedderConfig::frozen_text(encoder.d_model, ProjectionKind::Linear)),
    ] {
        let cfg = ModelConfig {
            embedder,
            encoder: encoder.clone(),
        };
        let model = SrModel::new(cfg, synth.dataset.n_items(), Some(&text), config.seed)?;
        let out = train(model, &splits, config.clone())?;
        for r in &out.history {
            println!("{name} epoch {:2} loss {:.4} val R@10 {:?}", r.epoch, r.loss, r.val_recall_at_10);
        }
        let test = recall_at_k(&rank_table(&out.best.model, &splits.test)?, 10);
        println!("{name}: best epoch {} ({:?}), test R@10 {test:.4}", out.best.epoch, out.stop_reason);

        let dir = tempfile::tempdir()?;
        let path = dir.path().join("best.ckpt");
        save_checkpoint(&path, &out.best.model, &serde_json::json!({"epoch": out.best.epoch}), &[])?;
        let loaded = load_checkpoint(&path)?;
        assert_eq!(loaded.model, out.best.model);
    }
    Ok(())
}
