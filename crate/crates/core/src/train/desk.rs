//! The CPU-sized two-step experiment on the synthetic domains: domain A as
//! the labeled source, domain B as the unlabeled target.

use serde::{Deserialize, Serialize};

use super::{train_step1, train_step2, SourceSplit, TrainConfig, TrainIo, TrainOutcome};
use crate::data::{generate_synthetic_domain, Domain, DomainSample, SynthDomainParams};
use crate::error::Result;
use crate::metrics::{evaluate, DatasetMetrics};
use crate::net::{ArchConfig, DomainId, ModelBundle, Phase};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeskExperiment {
    pub image_size: usize,
    pub source_train: usize,
    pub source_val: usize,
    pub target_images: usize,
    pub step1_epochs: usize,
    pub step1_lr: f64,
    pub step2_lr: f64,
    pub cycles: usize,
    pub seg_epochs_per_cycle: usize,
    pub adv_epochs_per_cycle: usize,
}

impl Default for DeskExperiment {
    fn default() -> Self {
        Self {
            image_size: 64,
            source_train: 256,
            source_val: 64,
            target_images: 128,
            step1_epochs: 12,
            step1_lr: 5e-4,
            step2_lr: 1e-4,
            cycles: 3,
            seg_epochs_per_cycle: 2,
            adv_epochs_per_cycle: 1,
        }
    }
}

/// Source-val and target metrics of one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeskScores {
    pub source: DatasetMetrics,
    pub target: DatasetMetrics,
}

#[derive(Debug)]
pub struct DeskOutcome {
    pub seed: u64,
    pub step1: DeskScores,
    pub step2: DeskScores,
    pub step1_run: TrainOutcome,
    pub step2_run: TrainOutcome,
    pub bundle: ModelBundle,
}

impl DeskOutcome {
    /// Step-1 then step-2 per-epoch losses.
    pub fn loss_trajectory(&self) -> Vec<f64> {
        let mut losses = self.step1_run.loss_trajectory();
        losses.extend(self.step2_run.loss_trajectory());
        losses
    }
}

pub struct DeskData {
    pub split: SourceSplit,
    pub target: Vec<DomainSample>,
}

impl DeskExperiment {
    pub fn data(&self, seed: u64) -> Result<DeskData> {
        let size = self.image_size;
        let n = self.source_train + self.source_val;
        let mut train =
            generate_synthetic_domain(&SynthDomainParams::domain_a(size, 100 + seed), n, Domain::Source)?.samples;
        let val = train.split_off(self.source_train);
        let target = generate_synthetic_domain(
            &SynthDomainParams::domain_b(size, 200 + seed),
            self.target_images,
            Domain::Target,
        )?
        .samples;
        Ok(DeskData {
            split: SourceSplit { train, val },
            target,
        })
    }

    pub fn arch(&self) -> ArchConfig {
        ArchConfig::desk_scale().with_input_size(self.image_size, self.image_size)
    }

    pub fn step1_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            lr: self.step1_lr,
            step1_epochs: self.step1_epochs,
            seed,
            ..self.step2_config(seed)
        }
    }

    pub fn step2_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            lr: self.step2_lr,
            step1_epochs: self.step1_epochs,
            seed,
            ..TrainConfig::default().with_step2_cycles(
                self.cycles,
                self.seg_epochs_per_cycle,
                self.adv_epochs_per_cycle,
            )
        }
    }

    /// Both steps for one seed. Step 1 is scored through domain 1, step 2
    /// through domain 2, each after restoring its selected checkpoint.
    pub fn run(&self, seed: u64) -> Result<DeskOutcome> {
        let data = self.data(seed)?;
        let mut bundle = ModelBundle::build(&self.arch(), 1, seed)?;
        let step1_run = train_step1(&mut bundle, &data.split, &self.step1_config(seed), &TrainIo::default())?;
        let step1 = scores(&bundle, &data, DomainId::SOURCE)?;

        bundle.add_domain()?;
        bundle.set_trainability(Phase::Step2)?;
        let step2_run = train_step2(
            &mut bundle,
            &data.split,
            &data.target,
            &self.step2_config(seed),
            &TrainIo::default(),
        )?;
        let step2 = scores(&bundle, &data, DomainId::TARGET)?;
        Ok(DeskOutcome {
            seed,
            step1,
            step2,
            step1_run,
            step2_run,
            bundle,
        })
    }
}

fn scores(bundle: &ModelBundle, data: &DeskData, domain: DomainId) -> Result<DeskScores> {
    Ok(DeskScores {
        source: evaluate(bundle, &data.split.val, domain, "source")?,
        target: evaluate(bundle, &data.target, domain, "target")?,
    })
}
