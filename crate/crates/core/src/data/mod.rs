//! Dataset ingestion, split construction, preprocessing, batch assembly and
//! the synthetic two-domain crack generator.

mod batches;
mod catalog;
mod preprocess;
mod split;
pub mod synth;

use candle_core::{Device, Tensor};
use serde::{Deserialize, Serialize};

pub use batches::{adversarial_batches, seg_batches, AdvBatchPlan, SegBatchPlan};
pub use catalog::{load_tree, Catalog, SampleRef, SubDataset};
pub use preprocess::{load_sample, load_samples, preprocess, DEFAULT_SIZE};
pub use split::{make_splits, read_manifest, write_manifest, SplitSpec, SubSplit};
pub use synth::{generate_synthetic_domain, SynthDataset, SynthDomainParams};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    /// Label used by the domain classifier.
    pub fn label(self) -> f32 {
        match self {
            Domain::Source => 0.0,
            Domain::Target => 1.0,
        }
    }
}

/// One preprocessed RGB image with an optional binary crack mask.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainSample {
    /// Channel-major `3 × height × width`, values in `[0, 1]`.
    pub image: Vec<f32>,
    /// Row-major `height × width`, 0 = background, 1 = crack.
    pub label: Option<Vec<u8>>,
    pub height: usize,
    pub width: usize,
    pub sub_dataset: String,
    pub stem: String,
    pub domain: Domain,
}

impl DomainSample {
    pub fn is_labeled(&self) -> bool {
        self.label.is_some()
    }

    pub fn crack_fraction(&self) -> Option<f64> {
        self.label
            .as_ref()
            .map(|l| l.iter().filter(|&&v| v == 1).count() as f64 / l.len().max(1) as f64)
    }

    /// Mirror image along the vertical axis.
    pub fn flipped_horizontally(&self) -> Self {
        let (h, w) = (self.height, self.width);
        let flip = |plane: &[f32]| -> Vec<f32> {
            let mut out = Vec::with_capacity(plane.len());
            for row in plane.chunks(w) {
                out.extend(row.iter().rev());
            }
            out
        };
        let image = self.image.chunks(h * w).flat_map(flip).collect();
        let label = self.label.as_ref().map(|l| {
            let mut out = Vec::with_capacity(l.len());
            for row in l.chunks(w) {
                out.extend(row.iter().rev());
            }
            out
        });
        Self {
            image,
            label,
            ..self.clone()
        }
    }
}

/// `(B, 3, H, W)` f32 tensor from samples of identical size.
pub fn stack_images(samples: &[&DomainSample], device: &Device) -> Result<Tensor> {
    let first = samples
        .first()
        .ok_or_else(|| Error::validation("cannot stack an empty batch"))?;
    let (h, w) = (first.height, first.width);
    let mut data = Vec::with_capacity(samples.len() * 3 * h * w);
    for s in samples {
        if (s.height, s.width) != (h, w) {
            return Err(Error::validation(format!(
                "sample {}/{} is {}x{}, batch expects {h}x{w}",
                s.sub_dataset, s.stem, s.height, s.width
            )));
        }
        data.extend_from_slice(&s.image);
    }
    Ok(Tensor::from_vec(data, (samples.len(), 3, h, w), device)?)
}

/// `(B, H, W)` u32 label tensor; every sample must be labeled.
pub fn stack_labels(samples: &[&DomainSample], device: &Device) -> Result<Tensor> {
    let first = samples
        .first()
        .ok_or_else(|| Error::validation("cannot stack an empty batch"))?;
    let (h, w) = (first.height, first.width);
    let mut data = Vec::with_capacity(samples.len() * h * w);
    for s in samples {
        let label = s
            .label
            .as_ref()
            .ok_or_else(|| Error::validation(format!("sample {}/{} has no label", s.sub_dataset, s.stem)))?;
        data.extend(label.iter().map(|&v| v as u32));
    }
    Ok(Tensor::from_vec(data, (samples.len(), h, w), device)?)
}
