//! Confusion matrices, IoU/mIoU and table-shaped reports.

mod report;

use candle_core::{DType, D};
use serde::{Deserialize, Serialize};

pub use report::{build_report, CellValue, EvalReport, Layout, ReportCell, ReportRow, RunResults};

use crate::data::{stack_images, DomainSample};
use crate::error::{Error, Result};
use crate::net::{DomainId, ModelBundle, NUM_CLASSES};

/// Rows are ground truth, columns are prediction. Class 0 is background,
/// class 1 is crack.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn merge(&self, other: &Self) -> Self {
        let mut out = *self;
        for (r, row) in other.counts.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                out.counts[r][c] += v;
            }
        }
        out
    }

    pub fn add_pixels(&mut self, pred: &[u8], gt: &[u8]) -> Result<()> {
        if pred.len() != gt.len() {
            return Err(Error::validation(format!(
                "prediction has {} pixels, ground truth {}",
                pred.len(),
                gt.len()
            )));
        }
        let mut delta = [[0u64; NUM_CLASSES]; NUM_CLASSES];
        for (&p, &g) in pred.iter().zip(gt) {
            if p as usize >= NUM_CLASSES || g as usize >= NUM_CLASSES {
                return Err(Error::validation(format!(
                    "class values must be 0 or 1, got prediction {p} and ground truth {g}"
                )));
            }
            delta[g as usize][p as usize] += 1;
        }
        *self = self.merge(&ConfusionMatrix { counts: delta });
        Ok(())
    }
}

/// `cm` plus the pixels of one prediction/ground-truth pair.
pub fn accumulate(cm: &ConfusionMatrix, pred: &[u8], gt: &[u8]) -> Result<ConfusionMatrix> {
    let mut out = *cm;
    out.add_pixels(pred, gt)?;
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiouResult {
    /// `None` for a class absent from both ground truth and prediction.
    pub iou: [Option<f64>; NUM_CLASSES],
    pub miou: f64,
}

/// Per-class `TP / (TP + FP + FN)`; classes with a zero denominator are left
/// out of the mean.
pub fn miou(cm: &ConfusionMatrix) -> Result<MiouResult> {
    if cm.total() == 0 {
        return Err(Error::validation("mIoU of an empty confusion matrix"));
    }
    let mut iou = [None; NUM_CLASSES];
    for (c, slot) in iou.iter_mut().enumerate() {
        let tp = cm.counts[c][c];
        let fn_: u64 = (0..NUM_CLASSES).filter(|&p| p != c).map(|p| cm.counts[c][p]).sum();
        let fp: u64 = (0..NUM_CLASSES).filter(|&g| g != c).map(|g| cm.counts[g][c]).sum();
        let denom = tp + fp + fn_;
        if denom > 0 {
            *slot = Some(tp as f64 / denom as f64);
        }
    }
    let present: Vec<f64> = iou.iter().flatten().copied().collect();
    let miou = present.iter().sum::<f64>() / present.len() as f64;
    Ok(MiouResult { iou, miou })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// One confusion matrix over every pixel of the dataset.
    #[default]
    Dataset,
    /// Mean of per-image mIoU values.
    PerImage,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetrics {
    pub name: String,
    pub confusion: ConfusionMatrix,
    pub iou_background: Option<f64>,
    pub iou_crack: Option<f64>,
    pub miou: f64,
    pub images: usize,
    pub skipped_unlabeled: usize,
}

impl DatasetMetrics {
    pub fn from_confusion(name: &str, confusion: ConfusionMatrix, images: usize) -> Result<Self> {
        let r = miou(&confusion)?;
        Ok(Self {
            name: name.to_string(),
            confusion,
            iou_background: r.iou[0],
            iou_crack: r.iou[1],
            miou: r.miou,
            images,
            skipped_unlabeled: 0,
        })
    }

    pub fn pixels(&self) -> u64 {
        self.confusion.total()
    }
}

const EVAL_BATCH: usize = 8;

/// Argmax class maps `(B, H·W)` for a batch of samples.
pub fn predict_classes(bundle: &ModelBundle, samples: &[&DomainSample], domain: DomainId) -> Result<Vec<Vec<u8>>> {
    let xs = stack_images(samples, bundle.device())?;
    let logits = bundle.predict(&xs, domain)?;
    let classes = logits.argmax(D::Minus(3))?.to_dtype(DType::U8)?;
    Ok(classes.flatten_from(1)?.to_vec2()?)
}

/// Runs `domain`'s path over every labeled sample and aggregates IoU.
/// Unlabeled samples are skipped and counted.
pub fn evaluate(
    bundle: &ModelBundle,
    samples: &[DomainSample],
    domain: DomainId,
    name: &str,
) -> Result<DatasetMetrics> {
    evaluate_with(bundle, samples, domain, name, Aggregation::Dataset)
}

pub fn evaluate_with(
    bundle: &ModelBundle,
    samples: &[DomainSample],
    domain: DomainId,
    name: &str,
    aggregation: Aggregation,
) -> Result<DatasetMetrics> {
    let labeled: Vec<&DomainSample> = samples.iter().filter(|s| s.is_labeled()).collect();
    let skipped = samples.len() - labeled.len();
    if skipped > 0 {
        log::warn!("{name}: skipping {skipped} unlabeled samples");
    }
    if labeled.is_empty() {
        return Err(Error::validation(format!("{name}: no labeled samples to evaluate")));
    }
    let mut total = ConfusionMatrix::new();
    let mut per_image = Vec::with_capacity(labeled.len());
    for chunk in labeled.chunks(EVAL_BATCH) {
        let preds = predict_classes(bundle, chunk, domain)?;
        for (pred, s) in preds.iter().zip(chunk) {
            let cm = accumulate(&ConfusionMatrix::new(), pred, s.label.as_deref().unwrap_or_default())?;
            if aggregation == Aggregation::PerImage {
                per_image.push(miou(&cm)?.miou);
            }
            total = total.merge(&cm);
        }
    }
    let mut m = DatasetMetrics::from_confusion(name, total, labeled.len())?;
    if aggregation == Aggregation::PerImage {
        m.miou = per_image.iter().sum::<f64>() / per_image.len() as f64;
    }
    m.skipped_unlabeled = skipped;
    Ok(m)
}
