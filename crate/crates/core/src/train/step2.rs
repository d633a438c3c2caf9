use candle_core::Tensor;
use candle_nn::Optimizer;

use super::routing::{
    adversarial_grads, gradient_routing_check, merge, route_segmentation, segmentation_grads, WeightIndex,
};
use super::{
    checkpoint_policy, flip_rng, require_labeled, seg_tensors, source_only_policy, BestKeeper, CheckpointRecord,
    EpochLog, EpochPhase, MetricsLog, SourceSplit, TrainConfig, TrainIo, TrainOutcome,
};
use crate::data::{adversarial_batches, seg_batches, stack_images, DomainSample};
use crate::error::{Error, Result};
use crate::metrics::evaluate;
use crate::net::{DomainId, ModelBundle, ParamGroup, Phase};

const TARGET: DomainId = DomainId::TARGET;
/// Keeps step-2 batch orders independent of the step-1 ones.
const STEP2_SALT: u64 = 0x5732;

/// Alternating adaptation: per cycle, `m` segmentation epochs on the source
/// split, then `n` adversarial epochs on balanced source/target batches.
/// Target labels, when present, are read only by the per-cycle evaluation
/// that drives the dual-improvement checkpoint policy.
pub fn train_step2(
    bundle: &mut ModelBundle,
    split: &SourceSplit,
    target_pool: &[DomainSample],
    cfg: &TrainConfig,
    io: &TrainIo,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if bundle.frozen_m1().is_none() {
        return Err(Error::state(
            "step 2 requires the frozen step-1 model; call add_domain first",
        ));
    }
    if bundle.phase() != Phase::Step2 {
        return Err(Error::state("step 2 requires set_trainability(Phase::Step2)"));
    }
    if split.train.is_empty() || split.val.is_empty() {
        return Err(Error::validation(
            "step 2 needs non-empty source-train and source-val splits",
        ));
    }
    require_labeled(&split.train, "source-train")?;
    if cfg.use_grl && target_pool.is_empty() {
        return Err(Error::validation("adversarial training needs a non-empty target pool"));
    }
    let target_labeled = !target_pool.is_empty() && target_pool.iter().all(DomainSample::is_labeled);
    if !target_labeled {
        log::warn!("target pool is not fully labeled; checkpoints follow source mIoU only");
    }

    let index = WeightIndex::new(bundle);
    let mut seg_opt = cfg.adam(bundle.trainable_vars(|g| {
        matches!(
            g,
            ParamGroup::Shared | ParamGroup::DomainSpecific(TARGET) | ParamGroup::Decoder(TARGET)
        )
    }))?;
    let mut adv_opt = cfg.adam(bundle.trainable_vars(|g| {
        matches!(
            g,
            ParamGroup::Shared | ParamGroup::DomainSpecific(TARGET) | ParamGroup::Discriminator
        )
    }))?;
    let seed = cfg.seed ^ STEP2_SALT;
    let seg_plan = seg_batches(split.train.len(), cfg.batch_size, seed)?;
    let adv_plan = if cfg.use_grl {
        Some(adversarial_batches(
            split.train.len(),
            target_pool.len(),
            cfg.batch_size,
            seed,
        )?)
    } else {
        None
    };
    let mut log = MetricsLog::open(io.log_path.as_deref())?;
    let mut keeper = BestKeeper::new(2, io.checkpoint_dir.as_deref(), Some((cfg.use_kld, cfg.use_grl)));
    let mut outcome = TrainOutcome::default();
    let mut saved_pairs: Vec<(f64, f64)> = Vec::new();
    let mut saved_sources: Vec<f64> = Vec::new();
    let mut epoch = 0usize;

    for cycle in 1..=cfg.cycles() {
        let cycle_start = outcome.log.len();
        let mut lambda = cfg.lambda_schedule.lambda_at(epoch);
        for _ in 0..cfg.seg_epochs_per_cycle {
            lambda = cfg.lambda_schedule.lambda_at(epoch);
            let mut flip = flip_rng(cfg, 2, epoch);
            let (mut ce_sum, mut kld_sum) = (0.0, 0.0);
            for idx in seg_plan.epoch(epoch) {
                let (x, y) = seg_tensors(bundle, &split.train, &idx, flip.as_mut())?;
                let grads = segmentation_grads(bundle, &x, &y, cfg)?;
                let (from_ce, from_kld) = route_segmentation(&index, &grads);
                seg_opt.step(&merge(from_ce, from_kld, &index))?;
                outcome.optimizer_steps += 1;
                ce_sum += grads.l_ce * idx.len() as f64;
                kld_sum += grads.l_kld.unwrap_or(0.0) * idx.len() as f64;
            }
            epoch += 1;
            let n = split.train.len() as f64;
            let entry = EpochLog {
                step: 2,
                cycle: Some(cycle),
                epoch,
                phase: EpochPhase::Segmentation,
                l_ce: Some(ce_sum / n),
                l_kld: cfg.use_kld.then_some(kld_sum / n),
                l_bce: None,
                lambda: Some(lambda),
                source_miou: None,
                target_miou: None,
            };
            outcome.log.push(entry);
        }
        if let Some(plan) = &adv_plan {
            for _ in 0..cfg.adv_epochs_per_cycle {
                lambda = cfg.lambda_schedule.lambda_at(epoch);
                let mut bce_sum = 0.0;
                let batches = plan.epoch(epoch);
                for b in &batches {
                    let mixed: Vec<&DomainSample> = b
                        .source
                        .iter()
                        .map(|&i| &split.train[i])
                        .chain(b.target.iter().map(|&i| &target_pool[i]))
                        .collect();
                    let xs = stack_images(&mixed, bundle.device())?;
                    let labels = Tensor::from_vec(b.domain_labels(), mixed.len(), bundle.device())?;
                    let (bce, grads) = adversarial_grads(bundle, &xs, &labels, lambda, cfg.adversarial_norm.bn_mode())?;
                    adv_opt.step(&grads)?;
                    outcome.optimizer_steps += 1;
                    bce_sum += bce;
                }
                epoch += 1;
                let entry = EpochLog {
                    step: 2,
                    cycle: Some(cycle),
                    epoch,
                    phase: EpochPhase::Adversarial,
                    l_ce: None,
                    l_kld: None,
                    l_bce: Some(bce_sum / batches.len().max(1) as f64),
                    lambda: Some(lambda),
                    source_miou: None,
                    target_miou: None,
                };
                outcome.log.push(entry);
            }
        }

        if cfg.check_routing {
            let src: Vec<&DomainSample> = split.train.iter().take(cfg.batch_size.max(2)).collect();
            let tgt: Vec<&DomainSample> = target_pool.iter().take(cfg.batch_size.max(2)).collect();
            let tgt = if tgt.is_empty() { src.clone() } else { tgt };
            let report = gradient_routing_check(bundle, &src, &tgt, cfg, lambda)?.into_result()?;
            outcome.routing.push(report);
            let drift = bundle.frozen_mismatches()?;
            if !drift.is_empty() {
                return Err(Error::Routing(format!("frozen weights changed: {}", drift.join(", "))));
            }
        }

        let source_miou = evaluate(bundle, &split.val, TARGET, "source-val")?.miou;
        let target_miou = if target_labeled {
            Some(evaluate(bundle, target_pool, TARGET, "target")?.miou)
        } else {
            None
        };
        if let Some(last) = outcome.log.last_mut() {
            last.source_miou = Some(source_miou);
            last.target_miou = target_miou;
        }
        for entry in &outcome.log[cycle_start..] {
            log.write(entry)?;
        }
        log::info!("step 2 cycle {cycle}: source_miou={source_miou:.4} target_miou={target_miou:?}");
        let keep = match target_miou {
            Some(t) => checkpoint_policy(&saved_pairs, (source_miou, t)),
            None => source_only_policy(&saved_sources, source_miou),
        };
        if keep {
            let record = CheckpointRecord {
                step: 2,
                epoch,
                source_miou,
                target_miou,
                path: None,
            };
            let record = keeper.save(bundle, record)?;
            saved_pairs.push((source_miou, target_miou.unwrap_or(f64::NEG_INFINITY)));
            saved_sources.push(source_miou);
            outcome.saved.push(record.clone());
            outcome.best = Some(record);
        }
    }
    if cfg.restore_best {
        keeper.restore(bundle)?;
    }
    Ok(outcome)
}
