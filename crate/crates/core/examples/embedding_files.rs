//! The `EMB1` embedding format with its `.ids` sidecar, and re-alignment of a
//! text matrix to a dataset's item order.

use ensrec::dataset::{ids_path, read_embedding_matrix, write_embedding_matrix, EmbeddingMatrix};
use ndarray::Array2;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ids: Vec<String> = ["book", "lamp", "mug", "pen"].iter().map(|s| s.to_string()).collect();
    let rows = Array2::from_shape_fn((4, 3), |(i, j)| (i * 3 + j) as f32 * 0.1);
    let m = EmbeddingMatrix::new(ids, rows)?;

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("items.emb");
    write_embedding_matrix(&m, &path)?;
    println!("{} bytes + sidecar {}", std::fs::metadata(&path)?.len(), ids_path(&path).display());
    println!("sidecar:\n{}", std::fs::read_to_string(ids_path(&path))?);

    let back = read_embedding_matrix(&path)?;
    assert_eq!(back, m);

    let catalog: Vec<String> = ["pen", "book", "mug"].iter().map(|s| s.to_string()).collect();
    let aligned = back.aligned_to(&catalog)?;
    println!("aligned to {:?}:\n{}", aligned.ids(), aligned.rows());

    let missing = back.aligned_to(&["chair".to_string()]);
    println!("unknown item: {}", missing.unwrap_err());
    Ok(())
}
