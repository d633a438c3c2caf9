use std::collections::BTreeSet;

use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};
use serde::{Deserialize, Serialize};

use super::{scalar, TrainConfig};
use crate::data::{stack_images, stack_labels, DomainSample};
use crate::error::{Error, Result};
use crate::net::{grl_apply, BnMode, DomainId, GrlConfig, ModelBundle, ParamGroup, ParamKind, Phase};
use crate::objectives::{adversarial_loss, cross_entropy_loss, kld_loss_from_logits};

const SOURCE: DomainId = DomainId::SOURCE;
const TARGET: DomainId = DomainId::TARGET;

/// Groups that may receive the cross-entropy update in step 2.
fn ce_allowed(g: ParamGroup) -> bool {
    matches!(g, ParamGroup::DomainSpecific(TARGET) | ParamGroup::Decoder(TARGET))
}

/// Groups that may receive the KL update in step 2.
fn kld_allowed(g: ParamGroup) -> bool {
    g == ParamGroup::Shared
}

/// Groups the adversarial loss may reach.
fn bce_allowed(g: ParamGroup) -> bool {
    matches!(
        g,
        ParamGroup::Shared | ParamGroup::DomainSpecific(TARGET) | ParamGroup::Discriminator
    )
}

fn expected_step2_trainable() -> BTreeSet<ParamGroup> {
    [
        ParamGroup::Shared,
        ParamGroup::DomainSpecific(TARGET),
        ParamGroup::Decoder(TARGET),
        ParamGroup::Discriminator,
    ]
    .into_iter()
    .collect()
}

/// Every weight of the bundle tagged with its group.
pub(super) struct WeightIndex {
    weights: Vec<(ParamGroup, Var)>,
    trainable: BTreeSet<ParamGroup>,
}

impl WeightIndex {
    pub(super) fn new(bundle: &ModelBundle) -> Self {
        Self {
            weights: bundle
                .params()
                .into_iter()
                .filter(|e| e.kind == ParamKind::Weight)
                .map(|e| (e.group, e.var))
                .collect(),
            trainable: bundle.trainable_groups().into_iter().collect(),
        }
    }

    /// Copies gradients of trainable weights whose group passes `allow`.
    fn route(&self, src: &GradStore, dst: &mut GradStore, allow: fn(ParamGroup) -> bool) {
        for (g, var) in &self.weights {
            if allow(*g) && self.trainable.contains(g) {
                if let Some(grad) = src.get(var.as_tensor()) {
                    dst.insert(var.as_tensor(), grad.clone());
                }
            }
        }
    }

    /// Groups with at least one nonzero gradient entry.
    fn touched(&self, grads: &GradStore) -> Result<BTreeSet<ParamGroup>> {
        let mut out = BTreeSet::new();
        for (g, var) in &self.weights {
            if out.contains(g) {
                continue;
            }
            if let Some(grad) = grads.get(var.as_tensor()) {
                if max_abs(grad)? > 0.0 {
                    out.insert(*g);
                }
            }
        }
        Ok(out)
    }

    fn max_abs_in(&self, grads: &GradStore, pick: impl Fn(ParamGroup) -> bool) -> Result<f64> {
        let mut m = 0f64;
        for (g, var) in &self.weights {
            if pick(*g) {
                if let Some(grad) = grads.get(var.as_tensor()) {
                    m = m.max(max_abs(grad)?);
                }
            }
        }
        Ok(m)
    }
}

fn max_abs(t: &Tensor) -> Result<f64> {
    scalar(&t.abs()?.flatten_all()?.max(0)?)
}

pub(super) struct SegGrads {
    pub l_ce: f64,
    pub l_kld: Option<f64>,
    pub ce: GradStore,
    pub kld: Option<GradStore>,
}

/// Separate gradients of `λ_CE·L_CE` (domain-2 path) and `λ_KLD·L_KLD`
/// (live shared weights with the frozen domain-1 branch through `D_2`,
/// against the frozen step-1 model).
pub(super) fn segmentation_grads(bundle: &ModelBundle, x: &Tensor, y: &Tensor, cfg: &TrainConfig) -> Result<SegGrads> {
    let frozen = bundle
        .frozen_m1()
        .ok_or_else(|| Error::state("step 2 requires the frozen step-1 model"))?;
    let f2 = bundle.forward_encoder(x, TARGET, true)?;
    let logits = bundle.forward_decoder(&f2, TARGET, true)?;
    let ce = cross_entropy_loss(&logits, y)?;
    let l_ce = scalar(&ce)?;
    let ce = (ce * cfg.loss_weights.lambda_ce)?.backward()?;
    let (l_kld, kld) = if cfg.use_kld {
        let f_anchor = bundle.forward_encoder(x, SOURCE, false)?;
        let live = bundle.forward_decoder(&f_anchor, TARGET, false)?;
        let reference = frozen.forward(x)?;
        let kld = kld_loss_from_logits(&live, &reference, cfg.kl_direction)?;
        let l = scalar(&kld)?;
        (Some(l), Some((kld * cfg.loss_weights.lambda_kld)?.backward()?))
    } else {
        (None, None)
    };
    Ok(SegGrads { l_ce, l_kld, ce, kld })
}

/// The update actually applied in a step-2 segmentation step: CE gradients
/// on `phi_s2` and `D_2`, KL gradients on `phi_i`.
pub(super) fn route_segmentation(index: &WeightIndex, grads: &SegGrads) -> (GradStore, GradStore) {
    let mut from_ce = GradStore::default();
    index.route(&grads.ce, &mut from_ce, ce_allowed);
    let mut from_kld = GradStore::default();
    if let Some(k) = &grads.kld {
        index.route(k, &mut from_kld, kld_allowed);
    }
    (from_ce, from_kld)
}

pub(super) fn merge(mut a: GradStore, b: GradStore, index: &WeightIndex) -> GradStore {
    let mut b = b;
    for (_, var) in &index.weights {
        if let Some(g) = b.remove(var.as_tensor()) {
            a.insert(var.as_tensor(), g);
        }
    }
    a
}

/// Domain-2 features of a mixed batch through the GRL into the
/// discriminator; returns the BCE value and its gradients.
pub(super) fn adversarial_grads(
    bundle: &ModelBundle,
    xs: &Tensor,
    domain_labels: &Tensor,
    lambda: f64,
    norm: BnMode,
) -> Result<(f64, GradStore)> {
    let features = bundle.forward_encoder_with(xs, TARGET, norm)?;
    let reversed = grl_apply(&features, &GrlConfig::new(lambda)?)?;
    let logits = bundle.forward_discriminator(&reversed)?;
    let bce = adversarial_loss(&logits, domain_labels)?;
    Ok((scalar(&bce)?, bce.backward()?))
}

/// Outcome of one routing check. `violations` is empty when every rule held.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RoutingReport {
    pub lambda: f64,
    pub ce_touched: Vec<ParamGroup>,
    pub kld_touched: Vec<ParamGroup>,
    pub bce_touched: Vec<ParamGroup>,
    pub applied_ce: Vec<ParamGroup>,
    pub applied_kld: Vec<ParamGroup>,
    /// Largest gradient magnitude the BCE loss sends into encoder weights.
    pub encoder_bce_max_abs: f64,
    pub violations: Vec<String>,
}

impl RoutingReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<Self> {
        if self.passed() {
            Ok(self)
        } else {
            Err(Error::Routing(self.violations.join("; ")))
        }
    }
}

/// Recomputes each step-2 loss on one batch and checks where its gradient
/// lands and where the applied update lands. Running statistics are not
/// touched: every forward pass here is in inference mode.
pub fn gradient_routing_check(
    bundle: &ModelBundle,
    source: &[&DomainSample],
    target: &[&DomainSample],
    cfg: &TrainConfig,
    lambda: f64,
) -> Result<RoutingReport> {
    if bundle.phase() != Phase::Step2 || bundle.frozen_m1().is_none() {
        return Err(Error::state("gradient routing check needs a step-2 bundle"));
    }
    let index = WeightIndex::new(bundle);
    let mut report = RoutingReport {
        lambda,
        ..RoutingReport::default()
    };
    let v = &mut report.violations;

    let expected = expected_step2_trainable();
    for g in index.trainable.difference(&expected) {
        v.push(format!("{g} is trainable in step 2 but must stay frozen"));
    }
    for g in expected.difference(&index.trainable) {
        v.push(format!("{g} must be trainable in step 2"));
    }

    let x = stack_images(source, bundle.device())?;
    let y = stack_labels(source, bundle.device())?;
    let seg = eval_mode_segmentation_grads(bundle, &x, &y, cfg)?;
    let ce_touched = index.touched(&seg.ce)?;
    for g in &ce_touched {
        if !(ce_allowed(*g) || *g == ParamGroup::Shared) {
            v.push(format!("L_CE reaches {g}"));
        }
    }
    let kld_touched = match &seg.kld {
        Some(k) => index.touched(k)?,
        None => BTreeSet::new(),
    };
    let (applied_ce, applied_kld) = route_segmentation(&index, &seg);
    let applied_ce = index.touched(&applied_ce)?;
    let applied_kld = index.touched(&applied_kld)?;
    for g in &applied_ce {
        if !ce_allowed(*g) {
            v.push(format!("update from L_CE is applied to {g}"));
        }
    }
    for g in &applied_kld {
        if !kld_allowed(*g) {
            v.push(format!("update from L_KLD is applied to {g}"));
        }
    }

    let mixed: Vec<&DomainSample> = source.iter().chain(target).copied().collect();
    let xs = stack_images(&mixed, bundle.device())?;
    let mut labels = vec![0f32; source.len()];
    labels.resize(mixed.len(), 1.0);
    let labels = Tensor::from_vec(labels, mixed.len(), bundle.device())?;
    let features = bundle.forward_encoder(&xs, TARGET, false)?;
    let reversed = grl_apply(&features, &GrlConfig::new(lambda)?)?;
    let bce = adversarial_loss(&bundle.forward_discriminator(&reversed)?, &labels)?;
    let bce = bce.backward()?;
    let bce_touched = index.touched(&bce)?;
    for g in &bce_touched {
        if !bce_allowed(*g) {
            v.push(format!("L_BCE reaches {g}"));
        }
    }
    report.encoder_bce_max_abs = index.max_abs_in(&bce, |g| {
        matches!(g, ParamGroup::Shared | ParamGroup::DomainSpecific(_))
    })?;
    if lambda == 0.0 && report.encoder_bce_max_abs != 0.0 {
        report.violations.push(format!(
            "lambda = 0 but L_BCE moves the encoder by {}",
            report.encoder_bce_max_abs
        ));
    }
    for (g, var) in &index.weights {
        if index.trainable.contains(g) && bce_allowed(*g) && bce.get(var.as_tensor()).is_none() {
            report.violations.push(format!("L_BCE has no gradient path to {g}"));
            break;
        }
    }

    report.ce_touched = ce_touched.into_iter().collect();
    report.kld_touched = kld_touched.into_iter().collect();
    report.bce_touched = bce_touched.into_iter().collect();
    report.applied_ce = applied_ce.into_iter().collect();
    report.applied_kld = applied_kld.into_iter().collect();
    Ok(report)
}

/// Same losses as training but with every batch norm in inference mode, so
/// running statistics stay untouched.
fn eval_mode_segmentation_grads(bundle: &ModelBundle, x: &Tensor, y: &Tensor, cfg: &TrainConfig) -> Result<SegGrads> {
    let frozen = bundle
        .frozen_m1()
        .ok_or_else(|| Error::state("step 2 requires the frozen step-1 model"))?;
    let f2 = bundle.forward_encoder(x, TARGET, false)?;
    let ce = cross_entropy_loss(&bundle.forward_decoder(&f2, TARGET, false)?, y)?;
    let l_ce = scalar(&ce)?;
    let ce = (ce * cfg.loss_weights.lambda_ce)?.backward()?;
    let f_anchor = bundle.forward_encoder(x, SOURCE, false)?;
    let live = bundle.forward_decoder(&f_anchor, TARGET, false)?;
    let kld = kld_loss_from_logits(&live, &frozen.forward(x)?, cfg.kl_direction)?;
    let l_kld = scalar(&kld)?;
    let kld = (kld * cfg.loss_weights.lambda_kld)?.backward()?;
    Ok(SegGrads {
        l_ce,
        l_kld: Some(l_kld),
        ce,
        kld: Some(kld),
    })
}
