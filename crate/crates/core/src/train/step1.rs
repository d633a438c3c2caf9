use candle_nn::Optimizer;

use super::{
    flip_rng, require_labeled, scalar, seg_tensors, BestKeeper, CheckpointRecord, EpochLog, EpochPhase, MetricsLog,
    SourceSplit, Step1Selection, TrainConfig, TrainIo, TrainOutcome,
};
use crate::data::seg_batches;
use crate::error::{Error, Result};
use crate::metrics::evaluate;
use crate::net::{DomainId, ModelBundle, Phase};
use crate::objectives::cross_entropy_loss;

/// Supervised training of `phi_i`, `phi_s1` and `D_1` on the source split,
/// with per-epoch source-validation mIoU and checkpoint selection.
pub fn train_step1(
    bundle: &mut ModelBundle,
    split: &SourceSplit,
    cfg: &TrainConfig,
    io: &TrainIo,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if bundle.phase() != Phase::Step1 || bundle.num_domains() != 1 {
        return Err(Error::state("step 1 needs a freshly built single-domain bundle"));
    }
    if split.train.is_empty() {
        return Err(Error::validation("source-train split is empty"));
    }
    if split.val.is_empty() {
        return Err(Error::validation("source-val split is empty"));
    }
    require_labeled(&split.train, "source-train")?;

    let domain = DomainId::SOURCE;
    let mut opt = cfg.adam(bundle.trainable_vars(|_| true))?;
    let plan = seg_batches(split.train.len(), cfg.batch_size, cfg.seed)?;
    let mut log = MetricsLog::open(io.log_path.as_deref())?;
    let mut keeper = BestKeeper::new(1, io.checkpoint_dir.as_deref(), None);
    let mut outcome = TrainOutcome::default();
    let mut saved_scores: Vec<f64> = Vec::new();

    for epoch in 0..cfg.step1_epochs {
        let mut flip = flip_rng(cfg, 1, epoch);
        let mut loss_sum = 0.0;
        for idx in plan.epoch(epoch) {
            let (x, y) = seg_tensors(bundle, &split.train, &idx, flip.as_mut())?;
            let features = bundle.forward_encoder(&x, domain, true)?;
            let logits = bundle.forward_decoder(&features, domain, true)?;
            let loss = cross_entropy_loss(&logits, &y)?;
            opt.step(&loss.backward()?)?;
            outcome.optimizer_steps += 1;
            loss_sum += scalar(&loss)? * idx.len() as f64;
        }
        let source_miou = evaluate(bundle, &split.val, domain, "source-val")?.miou;
        let entry = EpochLog {
            step: 1,
            cycle: None,
            epoch: epoch + 1,
            phase: EpochPhase::Segmentation,
            l_ce: Some(loss_sum / split.train.len() as f64),
            l_kld: None,
            l_bce: None,
            lambda: None,
            source_miou: Some(source_miou),
            target_miou: None,
        };
        log.write(&entry)?;
        log::info!(
            "step 1 epoch {}: l_ce={:.5} source_miou={source_miou:.4}",
            epoch + 1,
            entry.l_ce.unwrap_or(0.0)
        );
        outcome.log.push(entry);

        let keep = match cfg.step1_selection {
            Step1Selection::BestVal => super::source_only_policy(&saved_scores, source_miou),
            Step1Selection::LastEpoch => epoch + 1 == cfg.step1_epochs,
        };
        if keep {
            let record = CheckpointRecord {
                step: 1,
                epoch: epoch + 1,
                source_miou,
                target_miou: None,
                path: None,
            };
            let record = keeper.save(bundle, record)?;
            saved_scores.push(record.source_miou);
            outcome.saved.push(record.clone());
            outcome.best = Some(record);
        }
    }
    if cfg.restore_best {
        keeper.restore(bundle)?;
    }
    Ok(outcome)
}
