//! Writes and reads the binary per-user top-K score dump.

use ensrec::retrieval::{read_score_dump, write_score_dump, ScoreDumpRecord};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scores = [[0.1, 0.9, 0.4, 0.9, -0.2], [0.5, 0.0, 0.7, 0.2, 0.6]];
    let records = scores
        .iter()
        .enumerate()
        .map(|(u, s)| ScoreDumpRecord::from_scores(format!("user{u}"), s, 2, 3))
        .collect::<Result<Vec<_>, _>>()?;
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("scores.scd");
    write_score_dump(&path, 3, &records)?;
    let (k, back) = read_score_dump(&path)?;
    for r in &back {
        println!("{} target rank {} top-{k} {:?}", r.user_id, r.rank, r.top);
    }
    assert_eq!(back, records);
    Ok(())
}
