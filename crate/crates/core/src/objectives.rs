//! Loss functions and the adaptive GRL coefficient schedule.
//!
//! All losses use mean reduction over the batch and every pixel.

use candle_core::{DType, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weights of the step-2 segmentation objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_ce: f64,
    pub lambda_kld: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_ce: 1.0,
            lambda_kld: 0.1,
        }
    }
}

impl LossWeights {
    pub fn new(lambda_ce: f64, lambda_kld: f64) -> Result<Self> {
        let w = Self { lambda_ce, lambda_kld };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_ce >= 0.0 && self.lambda_kld >= 0.0) {
            return Err(Error::config(format!(
                "loss weights must be >= 0, got ce={} kld={}",
                self.lambda_ce, self.lambda_kld
            )));
        }
        Ok(())
    }
}

/// Sigmoid ramp `2 / (1 + exp(-gamma * p)) - 1` with `p = epoch / total_epochs`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaSchedule {
    pub gamma: f64,
    pub total_epochs: usize,
}

impl Default for LambdaSchedule {
    fn default() -> Self {
        Self {
            gamma: 10.0,
            total_epochs: 150,
        }
    }
}

impl LambdaSchedule {
    pub fn new(gamma: f64, total_epochs: usize) -> Result<Self> {
        if gamma.is_nan() || gamma <= 0.0 || total_epochs == 0 {
            return Err(Error::config("lambda schedule needs gamma > 0 and total_epochs >= 1"));
        }
        Ok(Self { gamma, total_epochs })
    }

    /// Progress is clamped to `[0, 1]`.
    pub fn lambda_at(&self, epoch: usize) -> f64 {
        let p = (epoch as f64 / self.total_epochs.max(1) as f64).min(1.0);
        2.0 / (1.0 + (-self.gamma * p).exp()) - 1.0
    }
}

pub fn lambda_schedule(epoch: usize, schedule: &LambdaSchedule) -> f64 {
    schedule.lambda_at(epoch)
}

/// Which model's distribution is the reference in the KL anchoring term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlDirection {
    /// `KL(M_1 || M_2)`: the frozen step-1 model is the reference.
    #[default]
    FrozenReference,
    /// `KL(M_2 || M_1)`.
    LiveReference,
}

fn check_seg_shapes(logits: &Tensor, labels: &Tensor) -> Result<(usize, usize, usize)> {
    let (b, k, h, w) = logits.dims4()?;
    if k != 2 {
        return Err(Error::validation(format!("expected 2 class channels, got {k}")));
    }
    if labels.dims() != [b, h, w] {
        return Err(Error::validation(format!(
            "labels shape {:?} does not match logits {:?}",
            labels.dims(),
            logits.dims()
        )));
    }
    Ok((b, h, w))
}

fn labels_u32(labels: &Tensor) -> Result<Tensor> {
    let labels = match labels.dtype() {
        DType::U32 => labels.clone(),
        DType::U8 | DType::I64 => labels.to_dtype(DType::U32)?,
        other => {
            return Err(Error::validation(format!("labels must be integral, got {other:?}")));
        }
    };
    let max = labels.flatten_all()?.max(0)?.to_scalar::<u32>()?;
    if max > 1 {
        return Err(Error::validation(format!("label value {max} outside {{0, 1}}")));
    }
    Ok(labels)
}

/// Mean per-pixel softmax cross-entropy. `logits` is `(B, 2, H, W)`,
/// `labels` is `(B, H, W)` with values in `{0, 1}`.
pub fn cross_entropy_loss(logits: &Tensor, labels: &Tensor) -> Result<Tensor> {
    cross_entropy_loss_weighted(logits, labels, None)
}

/// Cross-entropy with optional per-class weights; the weighted mean divides
/// by the sum of the weights of the pixels' true classes.
pub fn cross_entropy_loss_weighted(
    logits: &Tensor,
    labels: &Tensor,
    class_weights: Option<[f64; 2]>,
) -> Result<Tensor> {
    check_seg_shapes(logits, labels)?;
    let labels = labels_u32(labels)?.unsqueeze(1)?;
    let log_probs = candle_nn::ops::log_softmax(logits, 1)?;
    let nll = log_probs.gather(&labels, 1)?.neg()?;
    match class_weights {
        None => Ok(nll.mean_all()?),
        Some(cw) => {
            let table = Tensor::new(&[cw[0], cw[1]], logits.device())?.to_dtype(logits.dtype())?;
            let w = table.index_select(&labels.flatten_all()?, 0)?.reshape(nll.shape())?;
            Ok(((nll * &w)?.sum_all()? / w.sum_all()?.to_scalar_f64()?)?)
        }
    }
}

trait ScalarF64 {
    fn to_scalar_f64(&self) -> Result<f64>;
}

impl ScalarF64 for Tensor {
    fn to_scalar_f64(&self) -> Result<f64> {
        Ok(self.to_dtype(DType::F64)?.to_scalar::<f64>()?)
    }
}

/// Per-pixel `KL(reference || other)` averaged over batch and pixels,
/// computed from log-probabilities along dim 1.
fn kl_from_log_probs(log_ref: &Tensor, log_other: &Tensor) -> Result<Tensor> {
    let (b, _, h, w) = log_ref.dims4()?;
    let per_class = (log_ref.exp()? * (log_ref - log_other)?)?;
    Ok((per_class.sum_all()? / (b * h * w) as f64)?)
}

/// KL anchoring loss between probability maps. With the default direction
/// the frozen model's `probs_m1` is the reference distribution.
pub fn kld_loss(probs_m2: &Tensor, probs_m1: &Tensor) -> Result<Tensor> {
    kld_loss_directed(probs_m2, probs_m1, KlDirection::FrozenReference)
}

pub fn kld_loss_directed(probs_m2: &Tensor, probs_m1: &Tensor, direction: KlDirection) -> Result<Tensor> {
    if probs_m2.dims() != probs_m1.dims() {
        return Err(Error::validation("probability maps differ in shape"));
    }
    for p in [probs_m2, probs_m1] {
        p.dims4()?;
        let dev = (p.sum(1)? - 1.0)?.abs()?.flatten_all()?.max(0)?.to_scalar_f64()?;
        let min = p.flatten_all()?.min(0)?.to_scalar_f64()?;
        if dev > 1e-4 || min < 0.0 {
            return Err(Error::validation(format!(
                "inputs must be per-pixel distributions (max |sum - 1| = {dev:.2e}, min = {min})"
            )));
        }
    }
    kl_probs_unchecked(probs_m2, probs_m1, direction)
}

fn kl_probs_unchecked(probs_m2: &Tensor, probs_m1: &Tensor, direction: KlDirection) -> Result<Tensor> {
    // Zero-probability reference classes contribute 0 * finite = 0.
    let tiny = 1e-30;
    let l2 = probs_m2.clamp(tiny, f64::INFINITY)?.log()?;
    let l1 = probs_m1.clamp(tiny, f64::INFINITY)?.log()?;
    let (p_ref, l_ref, l_other) = match direction {
        KlDirection::FrozenReference => (probs_m1, l1, l2),
        KlDirection::LiveReference => (probs_m2, l2, l1),
    };
    let (b, _, h, w) = p_ref.dims4()?;
    let per_class = (p_ref * (l_ref - l_other)?)?;
    Ok((per_class.sum_all()? / (b * h * w) as f64)?)
}

/// KL anchoring loss from raw logits, as used during training.
pub fn kld_loss_from_logits(logits_m2: &Tensor, logits_m1: &Tensor, direction: KlDirection) -> Result<Tensor> {
    let l2 = candle_nn::ops::log_softmax(logits_m2, 1)?;
    let l1 = candle_nn::ops::log_softmax(logits_m1, 1)?;
    match direction {
        KlDirection::FrozenReference => kl_from_log_probs(&l1, &l2),
        KlDirection::LiveReference => kl_from_log_probs(&l2, &l1),
    }
}

/// `lambda_ce * l_ce + lambda_kld * l_kld`.
pub fn total_segmentation_loss(l_ce: f64, l_kld: f64, w: &LossWeights) -> f64 {
    w.lambda_ce * l_ce + w.lambda_kld * l_kld
}

/// Mean binary cross-entropy between `sigmoid(logits)` and domain labels
/// (0 = source, 1 = target). Both tensors are `(B,)`.
pub fn adversarial_loss(domain_logits: &Tensor, domain_labels: &Tensor) -> Result<Tensor> {
    if domain_logits.dims() != domain_labels.dims() {
        return Err(Error::validation("domain logits and labels differ in shape"));
    }
    let z = domain_logits;
    let y = domain_labels.to_dtype(z.dtype())?;
    // max(z, 0) - z*y + ln(1 + exp(-|z|))
    let softplus = (z.abs()?.neg()?.exp()? + 1.0)?.log()?;
    let per_sample = ((z.relu()? - (z * &y)?)? + softplus)?;
    Ok(per_sample.mean_all()?)
}

/// Per-pixel class probabilities.
pub fn softmax_probs(logits: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::softmax(logits, D::Minus(3))?)
}
