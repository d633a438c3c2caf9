//! Checkpoint archive: one safetensors file holding every array of a
//! [`ModelBundle`] plus a JSON metadata record in the header.
//!
//! Key schema (all arrays f32):
//!
//! ```text
//! encoder.down{j}.phi_w                      shared strided conv of downsampler j
//! encoder.down{j}.alpha_w.domain{k}          (only with adapters_on_downsamplers)
//! encoder.down{j}.{alpha_s,alpha_b}.domain{k}
//! encoder.down{j}.{running_mean,running_var}.domain{k}
//! encoder.block{i}.conv{1,2}.phi_w           shared 3×3 conv of residual unit i
//! encoder.block{i}.conv{1,2}.alpha_w.domain{k}
//! encoder.block{i}.conv{1,2}.{alpha_s,alpha_b,running_mean,running_var}.domain{k}
//! decoder.d{k}.up{j}.{weight,bias}
//! decoder.d{k}.up{j}.bn.{scale,shift,running_mean,running_var}
//! decoder.d{k}.unit{i}.conv{1,2}.{weight,bias}
//! decoder.d{k}.unit{i}.bn{1,2}.{scale,shift,running_mean,running_var}
//! decoder.d{k}.out.{weight,bias}
//! discriminator.conv{i}.{weight,bias}
//! frozen_m1.<encoder/decoder.d1 keys>        step-1 snapshot, domain 1 only
//! ```
//!
//! The header metadata key `adaptseg` holds [`CheckpointMeta`] as JSON.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ArchConfig, DomainId, ModelBundle, Phase};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const META_KEY: &str = "adaptseg";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricPoint {
    pub epoch: usize,
    pub source_miou: f64,
    pub target_miou: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub step: u8,
    pub epoch: usize,
    pub phase: Phase,
    pub registered_domains: Vec<DomainId>,
    pub has_frozen_m1: bool,
    pub arch_config: ArchConfig,
    pub metric_history: Vec<MetricPoint>,
    /// `(use_kld, use_grl)` of the step-2 run that produced the weights.
    #[serde(default)]
    pub switches: Option<(bool, bool)>,
}

impl CheckpointMeta {
    pub fn for_bundle(bundle: &ModelBundle, step: u8, epoch: usize, history: Vec<MetricPoint>) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            step,
            epoch,
            phase: bundle.phase(),
            registered_domains: bundle.registered_domains(),
            has_frozen_m1: bundle.frozen_m1().is_some(),
            arch_config: bundle.arch().clone(),
            metric_history: history,
            switches: None,
        }
    }
}

pub fn save(bundle: &ModelBundle, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    let state = bundle.state_dict()?;
    let mut info = HashMap::new();
    info.insert(META_KEY.to_string(), serde_json::to_string(meta)?);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    safetensors::serialize_to_file(state.iter(), Some(info), path)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}

pub fn read_meta(path: &Path) -> Result<CheckpointMeta> {
    let buffer = std::fs::read(path)?;
    meta_from_buffer(&buffer, path)
}

fn meta_from_buffer(buffer: &[u8], path: &Path) -> Result<CheckpointMeta> {
    let (_, metadata) = safetensors::SafeTensors::read_metadata(buffer)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let json = metadata
        .metadata()
        .as_ref()
        .and_then(|m| m.get(META_KEY))
        .ok_or_else(|| Error::Checkpoint(format!("{}: no {META_KEY} metadata", path.display())))?;
    let meta: CheckpointMeta = serde_json::from_str(json)?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported format version {}",
            path.display(),
            meta.format_version
        )));
    }
    Ok(meta)
}

/// Rebuilds the bundle recorded in `path`, including the frozen snapshot and
/// the trainability of the recorded phase.
pub fn load(path: &Path) -> Result<(ModelBundle, CheckpointMeta)> {
    let buffer = std::fs::read(path)?;
    let meta = meta_from_buffer(&buffer, path)?;
    let mut bundle = ModelBundle::build(&meta.arch_config, 1, 0)?;
    if meta.has_frozen_m1 {
        bundle.add_domain()?;
    }
    if bundle.registered_domains() != meta.registered_domains {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported domain layout {:?}",
            path.display(),
            meta.registered_domains
        )));
    }
    let tensors = candle_core::safetensors::load_buffer(&buffer, bundle.device())?;
    let state: BTreeMap<String, _> = tensors.into_iter().collect();
    bundle.load_state_dict(&state)?;
    bundle.set_trainability(meta.phase)?;
    Ok((bundle, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::bundle::bitwise_equal;
    use candle_core::{Device, Tensor};

    fn tiny() -> ArchConfig {
        ArchConfig {
            input_height: 16,
            input_width: 16,
            stage_widths: vec![4, 8],
            units_per_stage: vec![0, 1],
            decoder_units_per_stage: vec![0],
            discriminator_widths: vec![4, 1],
            ..ArchConfig::default()
        }
    }

    #[test]
    fn save_and_load_step2_bundle() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.safetensors");
        let mut m = ModelBundle::build(&tiny(), 1, 4).unwrap();
        m.add_domain().unwrap();
        m.set_trainability(Phase::Step2).unwrap();
        let history = vec![MetricPoint {
            epoch: 3,
            source_miou: 0.7,
            target_miou: Some(0.5),
        }];
        let meta = CheckpointMeta::for_bundle(&m, 2, 3, history);
        save(&m, &meta, &path).unwrap();

        let (loaded, got) = load(&path).unwrap();
        assert_eq!(got, meta);
        assert_eq!(loaded.phase(), Phase::Step2);
        assert!(loaded.frozen_m1().is_some());
        let x = Tensor::rand(0f32, 1f32, (2, 3, 16, 16), &Device::Cpu).unwrap();
        for d in [DomainId(1), DomainId(2)] {
            let a = m.predict(&x, d).unwrap();
            let b = loaded.predict(&x, d).unwrap();
            assert!(bitwise_equal(&a, &b).unwrap());
        }
    }

    #[test]
    fn missing_metadata_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("raw.safetensors");
        let t = Tensor::zeros(3, candle_core::DType::F32, &Device::Cpu).unwrap();
        safetensors::serialize_to_file([("x", &t)], None, &path).unwrap();
        assert!(matches!(load(&path), Err(Error::Checkpoint(_))));
    }
}
