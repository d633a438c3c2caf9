#![allow(dead_code)]

use adaptseg::data::{generate_synthetic_domain, Domain, DomainSample, SynthDomainParams};
use adaptseg::net::{ArchConfig, ModelBundle, ParamKind};
use adaptseg::train::{SourceSplit, TrainConfig};

pub const SIZE: usize = 32;

pub fn tiny_arch() -> ArchConfig {
    ArchConfig {
        stage_widths: vec![8, 16],
        units_per_stage: vec![0, 1],
        decoder_units_per_stage: vec![1],
        discriminator_widths: vec![16, 1],
        ..ArchConfig::desk_scale()
    }
    .with_input_size(SIZE, SIZE)
}

pub fn domain_a(n: usize, seed: u64) -> Vec<DomainSample> {
    generate_synthetic_domain(&SynthDomainParams::domain_a(SIZE, seed), n, Domain::Source)
        .unwrap()
        .samples
}

pub fn domain_b(n: usize, seed: u64) -> Vec<DomainSample> {
    generate_synthetic_domain(&SynthDomainParams::domain_b(SIZE, seed), n, Domain::Target)
        .unwrap()
        .samples
}

pub fn split(train: usize, val: usize, seed: u64) -> SourceSplit {
    let mut train_set = domain_a(train + val, seed);
    let val_set = train_set.split_off(train);
    SourceSplit {
        train: train_set,
        val: val_set,
    }
}

pub fn quick_config() -> TrainConfig {
    TrainConfig {
        step1_epochs: 2,
        ..TrainConfig::default().with_step2_cycles(2, 2, 1)
    }
}

/// Optimizable arrays only (running statistics excluded), by name.
pub fn weights(bundle: &ModelBundle) -> Vec<(String, Vec<f32>)> {
    bundle
        .params()
        .into_iter()
        .filter(|p| p.kind == ParamKind::Weight)
        .map(|p| {
            (
                p.name,
                p.var.as_tensor().flatten_all().unwrap().to_vec1::<f32>().unwrap(),
            )
        })
        .collect()
}
