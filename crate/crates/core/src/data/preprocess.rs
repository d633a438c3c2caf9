use std::path::Path;

use image::imageops::{self, FilterType};
use image::{DynamicImage, GrayImage};

use super::catalog::{Catalog, SampleRef};
use super::{Domain, DomainSample};
use crate::error::{Error, Result};

pub const DEFAULT_SIZE: (usize, usize) = (256, 256);

/// Bilinear resize of the image into `[0, 1]`, nearest-neighbour resize of
/// the mask. Any nonzero mask value counts as crack.
pub fn preprocess(
    image: &DynamicImage,
    label: Option<&GrayImage>,
    size: (usize, usize),
) -> Result<(Vec<f32>, Option<Vec<u8>>)> {
    let (h, w) = size;
    if h == 0 || w == 0 {
        return Err(Error::config(format!("preprocess size must be positive, got {h}x{w}")));
    }
    if let Some(l) = label {
        if l.dimensions() != (image.width(), image.height()) {
            return Err(Error::validation(format!(
                "label is {}x{} but image is {}x{}",
                l.width(),
                l.height(),
                image.width(),
                image.height()
            )));
        }
    }
    let rgb = image.to_rgb8();
    let resized = imageops::resize(&rgb, w as u32, h as u32, FilterType::Triangle);
    let mut planes = vec![0f32; 3 * h * w];
    for (x, y, px) in resized.enumerate_pixels() {
        let at = y as usize * w + x as usize;
        for c in 0..3 {
            planes[c * h * w + at] = px[c] as f32 / 255.0;
        }
    }
    let mask = label.map(|l| {
        let binary = GrayImage::from_fn(l.width(), l.height(), |x, y| {
            image::Luma([u8::from(l.get_pixel(x, y)[0] != 0)])
        });
        imageops::resize(&binary, w as u32, h as u32, FilterType::Nearest).into_raw()
    });
    Ok((planes, mask))
}

fn open(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|source| Error::Decode {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_sample(
    sample: &SampleRef,
    sub_dataset: &str,
    domain: Domain,
    size: (usize, usize),
) -> Result<DomainSample> {
    let img = open(&sample.image)?;
    let mask = sample.mask.as_deref().map(open).transpose()?.map(|m| m.to_luma8());
    let (image, label) = preprocess(&img, mask.as_ref(), size)?;
    Ok(DomainSample {
        image,
        label,
        height: size.0,
        width: size.1,
        sub_dataset: sub_dataset.to_string(),
        stem: sample.stem.clone(),
        domain,
    })
}

/// Loads `(sub_dataset, stem)` ids from a catalog.
pub fn load_samples(
    catalog: &Catalog,
    ids: &[(&str, &str)],
    domain: Domain,
    size: (usize, usize),
) -> Result<Vec<DomainSample>> {
    ids.iter()
        .map(|&(sub, stem)| {
            let entry = catalog
                .get(sub)
                .ok_or_else(|| Error::Ingestion(format!("sub-dataset {sub} is not in the catalog")))?;
            let sample = entry
                .samples
                .iter()
                .find(|s| s.stem == stem)
                .ok_or_else(|| Error::Ingestion(format!("{sub}/{stem} is not in the catalog")))?;
            load_sample(sample, sub, domain, size)
        })
        .collect()
}
