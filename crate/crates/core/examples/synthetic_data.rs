//! Generates the synthetic ID/text testbed and reads it back from disk.
//!
//! Run with `cargo run --release --example synthetic_data`.

use ensrec::synth::{generate, read_provenance, write_synth, BehaviorLabel, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = SynthConfig {
        n_users: 400,
        n_items: 120,
        n_clusters: 12,
        ..SynthConfig::default()
    };
    let out = generate(&config)?;
    let semantic = out.labels.iter().filter(|&&l| l == BehaviorLabel::Semantic).count();
    println!(
        "{} users ({semantic} semantic), {} items, {} interactions, text dim {}",
        out.dataset.n_users(),
        out.dataset.n_items(),
        out.dataset.n_interactions(),
        out.text.dim()
    );
    println!("item 0 graph neighbours: {:?}", out.graph[0]);

    let dir = tempfile::tempdir()?;
    let files = write_synth(dir.path(), &out)?;
    let labels = read_provenance(&files.provenance)?;
    println!("wrote {} and {} provenance lines", files.interactions.display(), labels.len());
    println!("first user: {} {:?}", labels[0].0, labels[0].1);
    Ok(())
}
