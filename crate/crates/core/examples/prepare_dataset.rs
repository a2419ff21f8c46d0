//! k-core filtering and the leave-one-out split on a raw interaction log.

use std::io::Write;

use ensrec::dataset::{core_filter, leave_one_out_split, load_interactions, DatasetManifest, InteractionFormat};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut f = tempfile::Builder::new().suffix(".csv").tempfile()?;
    writeln!(f, "user_id,item_id,timestamp")?;
    // six users cycling over six items, plus one user and one item that fail the 5-core
    for u in 0..6 {
        for t in 0..6 {
            writeln!(f, "u{u},i{},{}", (u + t) % 6, 100 * t + u)?;
        }
    }
    writeln!(f, "lonely,i0,5")?;
    writeln!(f, "u0,rare,999")?;
    f.flush()?;

    let format = InteractionFormat::from_path(f.path()).expect("csv extension");
    let raw = load_interactions(f.path(), format)?;
    let ds = core_filter(&raw, 5)?;
    let splits = leave_one_out_split(&ds, 20);
    let manifest = DatasetManifest::new(&ds, &splits, Some(5));
    println!("{} raw records -> {}", raw.len(), serde_json::to_string_pretty(&manifest)?);

    let first = &splits.test.examples[0];
    println!(
        "user {} test target {} after prefix {:?}",
        ds.users()[first.user as usize],
        ds.items()[first.target as usize],
        first.prefix.iter().map(|&i| ds.items()[i as usize].as_str()).collect::<Vec<_>>()
    );
    Ok(())
}
