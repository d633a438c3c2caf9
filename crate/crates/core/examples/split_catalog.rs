//! Leave-one-sub-dataset-out splits over the CrackSeg9K sub-dataset sizes.
//!
//! ```text
//! cargo run --example split_catalog -- [excluded] [seed]
//! ```

use adaptseg::data::{make_splits, read_manifest, write_manifest, Catalog};

const SIZES: [(&str, usize); 10] = [
    ("crack500", 3126),
    ("rissbilder", 2736),
    ("sdnet2018", 1411),
    ("volker", 427),
    ("deepcrack", 443),
    ("gaps384", 383),
    ("masonry", 240),
    ("cracktree200", 175),
    ("cfd", 118),
    ("ceramic", 100),
];

fn main() -> adaptseg::Result<()> {
    let mut args = std::env::args().skip(1);
    let excluded = args.next().unwrap_or_else(|| "volker".into());
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(7);

    let catalog = Catalog::from_counts(SIZES);
    let spec = make_splits(&catalog, Some(&excluded), seed)?;
    println!("{:<14}{:>7}{:>7}{:>7}", "sub-dataset", "size", "train", "val");
    for (name, part) in &spec.parts {
        let n = part.train.len() + part.val.len();
        println!("{name:<14}{n:>7}{:>7}{:>7}", part.train.len(), part.val.len());
    }
    println!("{:<14}{:>7}  (target pool, not split)", excluded, spec.target_ids.len());
    println!("source total: {} train / {} val", spec.train_count(), spec.val_count());

    let path = std::env::temp_dir().join(format!("adaptseg_split_{excluded}_{seed}.csv"));
    write_manifest(&spec, &path)?;
    assert_eq!(read_manifest(&path)?, spec);
    println!("manifest written to {}", path.display());
    Ok(())
}
