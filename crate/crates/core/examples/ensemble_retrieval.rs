//! Score ensembling: EnsRec, the alpha-tau family, and EnsRec served from one
//! concatenated embedding index.

use ensrec::ensemble::{ens_alpha_tau, ens_sum, EnsembleParams};
use ensrec::retrieval::{concat_ensemble_embeddings, concat_item_matrix, score_matrix, top_k};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut random = |r, c| Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0f32));
    let (users_id, users_text) = (random(3, 16), random(3, 24));
    let (items_id, items_text) = (random(1000, 16), random(1000, 24));

    let s_id = score_matrix(&users_id.view(), &items_id.view())?;
    let s_text = score_matrix(&users_text.view(), &items_text.view())?;
    let (row_id, row_text) = (s_id.row(0).to_vec(), s_text.row(0).to_vec());

    let ensrec = ens_sum(&row_id, &row_text)?;
    println!("EnsRec top-5:          {:?}", top_k(&ensrec, 5)?);
    for (alpha, tau) in [(0.5, 100.0), (0.5, 0.01), (0.8, 1.0), (1.0, 1.0)] {
        let s = ens_alpha_tau(&row_id, &row_text, EnsembleParams::new(alpha, tau)?)?;
        println!("alpha {alpha:.1} tau {tau:>6}: {:?}", top_k(&s, 5)?);
    }

    // one dot product over [ID | text] equals s_ID + s_text
    let (cu, ci) = concat_ensemble_embeddings(&users_id.view(), &users_text.view(), &items_id.view(), &items_text.view())?;
    let dot = cu.dot(&ci.t());
    println!("concat index top-5:    {:?}", top_k(dot.row(0).as_slice().unwrap(), 5)?);
    let ids: Vec<String> = (0..1000).map(|i| format!("item{i}")).collect();
    let exported = concat_item_matrix(&ci, &ids)?;
    println!("exportable item table: {} x {}", exported.len(), exported.dim());
    Ok(())
}
