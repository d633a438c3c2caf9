use std::collections::HashMap;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleRef {
    pub stem: String,
    pub image: PathBuf,
    pub mask: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubDataset {
    pub name: String,
    /// Sorted by stem.
    pub samples: Vec<SampleRef>,
}

impl SubDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn is_labeled(&self) -> bool {
        self.samples.iter().all(|s| s.mask.is_some())
    }
}

/// Sub-datasets found under a root, sorted by name.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Catalog {
    pub root: PathBuf,
    pub entries: Vec<SubDataset>,
}

impl Catalog {
    /// A file-less catalog with `n` generated stems per sub-dataset.
    pub fn from_counts<'a>(counts: impl IntoIterator<Item = (&'a str, usize)>) -> Self {
        let mut entries: Vec<SubDataset> = counts
            .into_iter()
            .map(|(name, n)| SubDataset {
                name: name.to_string(),
                samples: (0..n)
                    .map(|i| SampleRef {
                        stem: format!("{i:05}"),
                        image: PathBuf::new(),
                        mask: Some(PathBuf::new()),
                    })
                    .collect(),
            })
            .collect();
        entries.sort_by(|a, b| a.name.cmp(&b.name));
        Self {
            root: PathBuf::new(),
            entries,
        }
    }

    pub fn get(&self, name: &str) -> Option<&SubDataset> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.name.as_str()).collect()
    }

    pub fn total(&self) -> usize {
        self.entries.iter().map(SubDataset::len).sum()
    }
}

fn has_image_extension(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

fn sorted_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_file() {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn stem_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn image_dims(path: &Path) -> Result<(u32, u32)> {
    image::image_dimensions(path).map_err(|source| Error::Decode {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads `root/<sub_dataset>/images/*.{png,jpg}` with masks at
/// `root/<sub_dataset>/masks/<stem>.png`. A sub-dataset without a `masks`
/// directory is catalogued as unlabeled.
pub fn load_tree(root: &Path) -> Result<Catalog> {
    if !root.is_dir() {
        return Err(Error::Ingestion(format!("{} is not a directory", root.display())));
    }
    let mut entries = Vec::new();
    let mut problems = Vec::new();
    let mut hashes: HashMap<[u8; 32], PathBuf> = HashMap::new();
    for dir in sorted_dirs(root)? {
        let name = dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let images_dir = dir.join("images");
        if !images_dir.is_dir() {
            log::warn!("skipping {}: no images directory", dir.display());
            continue;
        }
        let masks_dir = dir.join("masks");
        let labeled = masks_dir.is_dir();
        let mut samples = Vec::new();
        for image in sorted_files(&images_dir)?
            .into_iter()
            .filter(|p| has_image_extension(p))
        {
            let stem = stem_of(&image);
            let digest: [u8; 32] = Sha256::digest(std::fs::read(&image)?).into();
            if let Some(prev) = hashes.insert(digest, image.clone()) {
                log::warn!("byte-identical images: {} and {}", prev.display(), image.display());
            }
            let mask = if labeled {
                let mask = masks_dir.join(format!("{stem}.png"));
                if !mask.is_file() {
                    problems.push(format!("missing mask for {}", image.display()));
                    continue;
                }
                if image_dims(&image)? != image_dims(&mask)? {
                    problems.push(format!(
                        "size mismatch between {} and {}",
                        image.display(),
                        mask.display()
                    ));
                    continue;
                }
                Some(mask)
            } else {
                None
            };
            samples.push(SampleRef { stem, image, mask });
        }
        if samples.is_empty() && problems.is_empty() {
            log::warn!("skipping {}: no images", dir.display());
            continue;
        }
        entries.push(SubDataset { name, samples });
    }
    if !problems.is_empty() {
        return Err(Error::Ingestion(problems.join("; ")));
    }
    if entries.is_empty() {
        return Err(Error::Ingestion(format!(
            "no sub-datasets with images under {}",
            root.display()
        )));
    }
    Ok(Catalog {
        root: root.to_path_buf(),
        entries,
    })
}

fn sorted_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for entry in std::fs::read_dir(root)? {
        let path = entry?.path();
        if path.is_dir() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{GrayImage, RgbImage};

    fn write_pair(root: &Path, sub: &str, stem: &str, size: (u32, u32), mask_size: Option<(u32, u32)>) {
        let images = root.join(sub).join("images");
        std::fs::create_dir_all(&images).unwrap();
        let mut img = RgbImage::new(size.0, size.1);
        img.put_pixel(0, 0, image::Rgb([stem.len() as u8, 7, 9]));
        img.put_pixel(1, 0, image::Rgb([stem.as_bytes()[0], 1, 2]));
        img.save(images.join(format!("{stem}.png"))).unwrap();
        if let Some(ms) = mask_size {
            let masks = root.join(sub).join("masks");
            std::fs::create_dir_all(&masks).unwrap();
            GrayImage::new(ms.0, ms.1)
                .save(masks.join(format!("{stem}.png")))
                .unwrap();
        }
    }

    #[test]
    fn catalogs_sub_datasets() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..3 {
            write_pair(dir.path(), "volker", &format!("v{i}"), (8, 8), Some((8, 8)));
        }
        for i in 0..2 {
            write_pair(dir.path(), "deepcrack", &format!("d{i}"), (8, 6), Some((8, 6)));
        }
        let cat = load_tree(dir.path()).unwrap();
        assert_eq!(cat.names(), vec!["deepcrack", "volker"]);
        assert_eq!(cat.get("volker").unwrap().len(), 3);
        assert_eq!(cat.get("deepcrack").unwrap().len(), 2);
        assert!(cat.entries.iter().all(SubDataset::is_labeled));
    }

    #[test]
    fn empty_root_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_tree(dir.path()), Err(Error::Ingestion(_))));
        assert!(load_tree(&dir.path().join("missing")).is_err());
    }

    #[test]
    fn mismatched_mask_names_the_pair() {
        let dir = tempfile::tempdir().unwrap();
        write_pair(dir.path(), "cfd", "a", (8, 8), Some((4, 4)));
        let err = load_tree(dir.path()).unwrap_err().to_string();
        assert!(err.contains("a.png") && err.contains("size mismatch"), "{err}");
    }

    #[test]
    fn missing_mask_lists_offender() {
        let dir = tempfile::tempdir().unwrap();
        write_pair(dir.path(), "cfd", "a", (8, 8), Some((8, 8)));
        write_pair(dir.path(), "cfd", "b", (8, 8), None);
        let err = load_tree(dir.path()).unwrap_err().to_string();
        assert!(err.contains("missing mask") && err.contains("b.png"), "{err}");
    }

    #[test]
    fn unlabeled_sub_dataset() {
        let dir = tempfile::tempdir().unwrap();
        write_pair(dir.path(), "buildcrack", "x", (8, 8), None);
        let cat = load_tree(dir.path()).unwrap();
        assert!(!cat.entries[0].is_labeled());
    }
}
