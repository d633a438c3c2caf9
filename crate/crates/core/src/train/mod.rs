//! Step-1 supervised training, step-2 alternating adaptation, the
//! dual-improvement checkpoint policy and gradient-routing diagnostics.

pub mod desk;
mod routing;
mod step1;
mod step2;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use candle_core::{Tensor, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use routing::{gradient_routing_check, RoutingReport};
pub use step1::train_step1;
pub use step2::train_step2;

use crate::data::{stack_images, stack_labels, DomainSample};
use crate::error::{Error, Result};
use crate::net::checkpoint::{self, CheckpointMeta, MetricPoint};
use crate::net::{BnMode, ModelBundle};
use crate::objectives::{KlDirection, LambdaSchedule, LossWeights};

/// Which step-1 weights are kept at the end of training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Step1Selection {
    /// Highest source-validation mIoU.
    #[default]
    BestVal,
    LastEpoch,
}

/// Batch-norm behaviour of the target encoder during adversarial epochs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversarialNorm {
    /// Batch statistics of the mixed batch, folded into the running estimates.
    Train,
    /// Batch statistics of the mixed batch; running estimates untouched.
    #[default]
    BatchStats,
    /// Running estimates only.
    Running,
}

impl AdversarialNorm {
    pub fn bn_mode(self) -> BnMode {
        match self {
            AdversarialNorm::Train => BnMode::Train,
            AdversarialNorm::BatchStats => BnMode::Batch,
            AdversarialNorm::Running => BnMode::Eval,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step1_epochs: usize,
    pub step2_total_epochs: usize,
    /// Segmentation epochs per step-2 cycle.
    pub seg_epochs_per_cycle: usize,
    /// Adversarial epochs per step-2 cycle.
    pub adv_epochs_per_cycle: usize,
    pub loss_weights: LossWeights,
    pub lambda_schedule: LambdaSchedule,
    pub kl_direction: KlDirection,
    /// Ablation switch for the KL anchoring term.
    pub use_kld: bool,
    /// Ablation switch for the adversarial sub-phase.
    pub use_grl: bool,
    pub adversarial_norm: AdversarialNorm,
    pub step1_selection: Step1Selection,
    /// Reload the selected checkpoint's weights when training ends.
    pub restore_best: bool,
    /// Random horizontal flips of segmentation batches.
    pub hflip: bool,
    /// Run `gradient_routing_check` after every step-2 cycle.
    pub check_routing: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            batch_size: 8,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step1_epochs: 150,
            step2_total_epochs: 150,
            seg_epochs_per_cycle: 10,
            adv_epochs_per_cycle: 5,
            loss_weights: LossWeights::default(),
            lambda_schedule: LambdaSchedule::default(),
            kl_direction: KlDirection::default(),
            use_kld: true,
            use_grl: true,
            adversarial_norm: AdversarialNorm::default(),
            step1_selection: Step1Selection::default(),
            restore_best: true,
            hflip: false,
            check_routing: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Sets `cycles × (seg + adv)` step-2 epochs and matches the λ schedule
    /// length to them.
    pub fn with_step2_cycles(mut self, cycles: usize, seg: usize, adv: usize) -> Self {
        self.seg_epochs_per_cycle = seg;
        self.adv_epochs_per_cycle = adv;
        self.step2_total_epochs = cycles * (seg + adv);
        self.lambda_schedule.total_epochs = self.step2_total_epochs;
        self
    }

    pub fn cycles(&self) -> usize {
        self.step2_total_epochs / (self.seg_epochs_per_cycle + self.adv_epochs_per_cycle).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(Error::config(format!("lr must be finite and >= 0, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        let per_cycle = self.seg_epochs_per_cycle + self.adv_epochs_per_cycle;
        if per_cycle == 0 || !self.step2_total_epochs.is_multiple_of(per_cycle) {
            return Err(Error::config(format!(
                "step2_total_epochs ({}) must be a multiple of seg_epochs_per_cycle + adv_epochs_per_cycle ({per_cycle})",
                self.step2_total_epochs
            )));
        }
        if self.lambda_schedule.total_epochs != self.step2_total_epochs {
            return Err(Error::config(format!(
                "lambda_schedule.total_epochs ({}) must equal step2_total_epochs ({})",
                self.lambda_schedule.total_epochs, self.step2_total_epochs
            )));
        }
        LambdaSchedule::new(self.lambda_schedule.gamma, self.lambda_schedule.total_epochs)?;
        self.loss_weights.validate()
    }

    fn adam(&self, vars: Vec<Var>) -> Result<AdamW> {
        let params = ParamsAdamW {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: 0.0,
        };
        Ok(AdamW::new(vars, params)?)
    }
}

/// Labeled source samples for training and validation.
#[derive(Clone, Debug, Default)]
pub struct SourceSplit {
    pub train: Vec<DomainSample>,
    pub val: Vec<DomainSample>,
}

/// Where a run writes checkpoints and its metrics log. `None` keeps
/// everything in memory.
#[derive(Clone, Debug, Default)]
pub struct TrainIo {
    pub checkpoint_dir: Option<PathBuf>,
    pub log_path: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub step: u8,
    pub epoch: usize,
    pub source_miou: f64,
    pub target_miou: Option<f64>,
    pub path: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EpochPhase {
    Segmentation,
    Adversarial,
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub step: u8,
    pub cycle: Option<usize>,
    pub epoch: usize,
    pub phase: EpochPhase,
    pub l_ce: Option<f64>,
    pub l_kld: Option<f64>,
    pub l_bce: Option<f64>,
    pub lambda: Option<f64>,
    pub source_miou: Option<f64>,
    pub target_miou: Option<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct TrainOutcome {
    /// The checkpoint whose weights the bundle holds when `restore_best` is set.
    pub best: Option<CheckpointRecord>,
    pub saved: Vec<CheckpointRecord>,
    pub log: Vec<EpochLog>,
    pub optimizer_steps: usize,
    pub routing: Vec<RoutingReport>,
}

impl TrainOutcome {
    /// Per-epoch loss values in log order, for trajectory comparisons.
    pub fn loss_trajectory(&self) -> Vec<f64> {
        self.log
            .iter()
            .flat_map(|e| [e.l_ce, e.l_kld, e.l_bce])
            .flatten()
            .collect()
    }
}

/// Dual-improvement rule: the first candidate is always saved; later ones
/// only when both mIoU values strictly exceed the last saved pair.
pub fn checkpoint_policy(saved: &[(f64, f64)], candidate: (f64, f64)) -> bool {
    match saved.last() {
        None => true,
        Some(&(s, t)) => candidate.0 > s && candidate.1 > t,
    }
}

fn source_only_policy(saved: &[f64], candidate: f64) -> bool {
    saved.last().is_none_or(|&s| candidate > s)
}

struct MetricsLog {
    file: Option<std::fs::File>,
}

impl MetricsLog {
    fn open(path: Option<&Path>) -> Result<Self> {
        let file = match path {
            Some(p) => {
                if let Some(parent) = p.parent() {
                    std::fs::create_dir_all(parent)?;
                }
                Some(std::fs::OpenOptions::new().create(true).append(true).open(p)?)
            }
            None => None,
        };
        Ok(Self { file })
    }

    fn write(&mut self, entry: &EpochLog) -> Result<()> {
        if let Some(f) = &mut self.file {
            writeln!(f, "{}", serde_json::to_string(entry)?)?;
        }
        Ok(())
    }
}

/// Keeps the selected weights in memory and mirrors them to disk.
struct BestKeeper {
    step: u8,
    dir: Option<PathBuf>,
    state: Option<BTreeMap<String, Tensor>>,
    history: Vec<MetricPoint>,
    switches: Option<(bool, bool)>,
}

impl BestKeeper {
    fn new(step: u8, dir: Option<&Path>, switches: Option<(bool, bool)>) -> Self {
        Self {
            step,
            dir: dir.map(Path::to_path_buf),
            state: None,
            history: Vec::new(),
            switches,
        }
    }

    fn save(&mut self, bundle: &ModelBundle, mut record: CheckpointRecord) -> Result<CheckpointRecord> {
        self.history.push(MetricPoint {
            epoch: record.epoch,
            source_miou: record.source_miou,
            target_miou: record.target_miou,
        });
        self.state = Some(bundle.state_dict()?);
        if let Some(dir) = &self.dir {
            let path = dir.join(format!("step{}_best.safetensors", self.step));
            let mut meta = CheckpointMeta::for_bundle(bundle, self.step, record.epoch, self.history.clone());
            meta.switches = self.switches;
            checkpoint::save(bundle, &meta, &path)?;
            record.path = Some(path);
            std::fs::write(dir.join("best.json"), serde_json::to_string_pretty(&record)?)?;
            let mut records = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(dir.join("checkpoints.jsonl"))?;
            writeln!(records, "{}", serde_json::to_string(&record)?)?;
        }
        Ok(record)
    }

    fn restore(&self, bundle: &mut ModelBundle) -> Result<()> {
        if let Some(state) = &self.state {
            bundle.load_state_dict(state)?;
        }
        Ok(())
    }
}

/// Stacks the indexed samples, flipping each with probability 1/2 when
/// `flip` carries an RNG.
fn gather<'a>(
    samples: &'a [DomainSample],
    idx: &[usize],
    flip: Option<&mut ChaCha8Rng>,
) -> Vec<std::borrow::Cow<'a, DomainSample>> {
    match flip {
        None => idx.iter().map(|&i| std::borrow::Cow::Borrowed(&samples[i])).collect(),
        Some(rng) => idx
            .iter()
            .map(|&i| {
                if rng.random_bool(0.5) {
                    std::borrow::Cow::Owned(samples[i].flipped_horizontally())
                } else {
                    std::borrow::Cow::Borrowed(&samples[i])
                }
            })
            .collect(),
    }
}

fn seg_tensors(
    bundle: &ModelBundle,
    samples: &[DomainSample],
    idx: &[usize],
    flip: Option<&mut ChaCha8Rng>,
) -> Result<(Tensor, Tensor)> {
    let batch = gather(samples, idx, flip);
    let refs: Vec<&DomainSample> = batch.iter().map(|c| c.as_ref()).collect();
    Ok((
        stack_images(&refs, bundle.device())?,
        stack_labels(&refs, bundle.device())?,
    ))
}

fn flip_rng(cfg: &TrainConfig, step: u8, epoch: usize) -> Option<ChaCha8Rng> {
    cfg.hflip.then(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (0xf11b << step));
        rng.set_stream(epoch as u64);
        rng
    })
}

fn require_labeled(samples: &[DomainSample], what: &str) -> Result<()> {
    if let Some(s) = samples.iter().find(|s| !s.is_labeled()) {
        return Err(Error::validation(format!(
            "{what} contains unlabeled sample {}/{}",
            s.sub_dataset, s.stem
        )));
    }
    Ok(())
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policy_examples() {
        assert!(checkpoint_policy(&[(70.0, 50.0)], (71.0, 51.0)));
        assert!(!checkpoint_policy(&[(70.0, 50.0)], (72.0, 49.0)));
        assert!(!checkpoint_policy(&[(70.0, 50.0)], (70.0, 51.0)));
        assert!(checkpoint_policy(&[], (10.0, 10.0)));
        assert!(source_only_policy(&[], 0.1));
        assert!(!source_only_policy(&[0.5], 0.5));
    }

    #[test]
    fn defaults_match_published_protocol() {
        let c = TrainConfig::default();
        assert_eq!((c.lr, c.batch_size), (5e-4, 8));
        assert_eq!((c.beta1, c.beta2), (0.9, 0.999));
        assert_eq!((c.step1_epochs, c.step2_total_epochs), (150, 150));
        assert_eq!((c.seg_epochs_per_cycle, c.adv_epochs_per_cycle), (10, 5));
        assert_eq!(c.cycles(), 10);
        assert_eq!(c.loss_weights, LossWeights::new(1.0, 0.1).unwrap());
        c.validate().unwrap();
    }

    #[test]
    fn rejects_inconsistent_cycle_lengths() {
        let c = TrainConfig {
            step2_total_epochs: 100,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
        let c = TrainConfig::default().with_step2_cycles(2, 2, 1);
        assert_eq!(c.step2_total_epochs, 6);
        c.validate().unwrap();
        let c = TrainConfig {
            lambda_schedule: LambdaSchedule::new(10.0, 7).unwrap(),
            ..c
        };
        assert!(c.validate().is_err());
    }
}
