use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::catalog::Catalog;
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
}

/// Per-sub-dataset train/val stems, plus the excluded sub-dataset routed to
/// the target pool.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub excluded_sub_dataset: Option<String>,
    pub seed: u64,
    pub parts: BTreeMap<String, SubSplit>,
    pub target_ids: Vec<String>,
}

impl SplitSpec {
    pub fn train_count(&self) -> usize {
        self.parts.values().map(|p| p.train.len()).sum()
    }

    pub fn val_count(&self) -> usize {
        self.parts.values().map(|p| p.val.len()).sum()
    }

    /// `(sub_dataset, stem)` pairs of every source-train sample.
    pub fn train_ids(&self) -> Vec<(&str, &str)> {
        self.parts
            .iter()
            .flat_map(|(name, p)| p.train.iter().map(move |s| (name.as_str(), s.as_str())))
            .collect()
    }

    pub fn val_ids(&self) -> Vec<(&str, &str)> {
        self.parts
            .iter()
            .flat_map(|(name, p)| p.val.iter().map(move |s| (name.as_str(), s.as_str())))
            .collect()
    }
}

fn name_stream(name: &str) -> u64 {
    // FNV-1a keeps the stream stable across builds and platforms.
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Shuffles each sub-dataset independently and holds out `⌊n/5⌋` for
/// validation. The excluded sub-dataset goes to the target pool unsplit.
pub fn make_splits(catalog: &Catalog, excluded: Option<&str>, seed: u64) -> Result<SplitSpec> {
    if let Some(name) = excluded {
        if catalog.get(name).is_none() {
            return Err(Error::config(format!(
                "unknown sub-dataset {name:?}; known: {}",
                catalog.names().join(", ")
            )));
        }
    }
    let mut parts = BTreeMap::new();
    let mut target_ids = Vec::new();
    for entry in &catalog.entries {
        let mut stems: Vec<String> = entry.samples.iter().map(|s| s.stem.clone()).collect();
        if Some(entry.name.as_str()) == excluded {
            target_ids = stems;
            continue;
        }
        if !entry.is_labeled() {
            return Err(Error::Ingestion(format!(
                "sub-dataset {} has images without masks and cannot be used as source",
                entry.name
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(name_stream(&entry.name));
        stems.shuffle(&mut rng);
        let val = stems.len() / 5;
        let train = stems.split_off(val);
        parts.insert(entry.name.clone(), SubSplit { train, val: stems });
    }
    Ok(SplitSpec {
        excluded_sub_dataset: excluded.map(str::to_string),
        seed,
        parts,
        target_ids,
    })
}

/// Writes `sub_dataset,stem,split` lines (split ∈ train, val, target) after a
/// `#` comment carrying the seed and excluded name.
pub fn write_manifest(spec: &SplitSpec, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        out,
        "# seed={} excluded={}",
        spec.seed,
        spec.excluded_sub_dataset.as_deref().unwrap_or("")
    )?;
    for (name, part) in &spec.parts {
        for stem in &part.train {
            writeln!(out, "{name},{stem},train")?;
        }
        for stem in &part.val {
            writeln!(out, "{name},{stem},val")?;
        }
    }
    if let Some(name) = &spec.excluded_sub_dataset {
        for stem in &spec.target_ids {
            writeln!(out, "{name},{stem},target")?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<SplitSpec> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let bad = |n: usize, why: &str| Error::Ingestion(format!("{}:{n}: {why}", path.display()));
    let mut spec = SplitSpec {
        excluded_sub_dataset: None,
        seed: 0,
        parts: BTreeMap::new(),
        target_ids: Vec::new(),
    };
    for (i, line) in file.lines().enumerate() {
        let line = line?;
        let n = i + 1;
        if let Some(header) = line.strip_prefix('#') {
            for field in header.split_whitespace() {
                match field.split_once('=') {
                    Some(("seed", v)) => spec.seed = v.parse().map_err(|_| bad(n, "bad seed"))?,
                    Some(("excluded", v)) if !v.is_empty() => spec.excluded_sub_dataset = Some(v.to_string()),
                    _ => {}
                }
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let [name, stem, split] = fields[..] else {
            return Err(bad(n, "expected sub_dataset,stem,split"));
        };
        match split {
            "train" => spec.parts.entry(name.into()).or_default().train.push(stem.into()),
            "val" => spec.parts.entry(name.into()).or_default().val.push(stem.into()),
            "target" => {
                match &spec.excluded_sub_dataset {
                    Some(ex) if ex != name => return Err(bad(n, "target rows must all name the excluded sub-dataset")),
                    None => spec.excluded_sub_dataset = Some(name.into()),
                    _ => {}
                }
                spec.target_ids.push(stem.into());
            }
            other => return Err(bad(n, &format!("unknown split {other:?}"))),
        }
    }
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    #[test]
    fn hundred_splits_eighty_twenty() {
        let cat = Catalog::from_counts([("a", 100)]);
        let s = make_splits(&cat, None, 1).unwrap();
        assert_eq!((s.train_count(), s.val_count()), (80, 20));
    }

    #[test]
    fn excluded_goes_to_target() {
        let cat = Catalog::from_counts([("volker", 427), ("deepcrack", 443)]);
        let s = make_splits(&cat, Some("volker"), 3).unwrap();
        assert_eq!(s.target_ids.len(), 427);
        assert!(!s.parts.contains_key("volker"));
        assert_eq!(s.parts["deepcrack"].val.len(), 88);
        assert!(make_splits(&cat, Some("nope"), 3).is_err());
    }

    #[test]
    fn seed_changes_membership_not_counts() {
        let cat = Catalog::from_counts([("a", 50), ("b", 31)]);
        let s1 = make_splits(&cat, None, 1).unwrap();
        assert_eq!(s1, make_splits(&cat, None, 1).unwrap());
        let s2 = make_splits(&cat, None, 2).unwrap();
        assert_ne!(s1.parts, s2.parts);
        for (k, p) in &s1.parts {
            assert_eq!(p.val.len(), s2.parts[k].val.len());
        }
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("split.csv");
        let cat = Catalog::from_counts([("a", 12), ("b", 7), ("c", 3)]);
        let s = make_splits(&cat, Some("b"), 9).unwrap();
        write_manifest(&s, &path).unwrap();
        assert_eq!(read_manifest(&path).unwrap(), s);
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 22);
    }

    proptest! {
        #[test]
        fn partition_is_exact(counts in proptest::collection::vec(0usize..60, 1..6), seed in any::<u64>(), ex in 0usize..6) {
            let names: Vec<String> = (0..counts.len()).map(|i| format!("s{i}")).collect();
            let cat = Catalog::from_counts(names.iter().map(String::as_str).zip(counts.iter().copied()));
            let excluded = names.get(ex).map(String::as_str);
            let s = make_splits(&cat, excluded, seed).unwrap();
            for (name, &n) in names.iter().zip(&counts) {
                let all: Vec<&String> = if Some(name.as_str()) == excluded {
                    prop_assert!(!s.parts.contains_key(name));
                    s.target_ids.iter().collect()
                } else {
                    let p = &s.parts[name];
                    prop_assert_eq!(p.val.len(), n / 5);
                    p.train.iter().chain(&p.val).collect()
                };
                let unique: HashSet<_> = all.iter().collect();
                prop_assert_eq!(all.len(), n);
                prop_assert_eq!(unique.len(), n);
            }
        }
    }
}
