use std::collections::{BTreeMap, BTreeSet};

use candle_core::{DType, Device, Tensor, Var};

use super::config::ArchConfig;
use super::decoder::Decoder;
use super::discriminator::Discriminator;
use super::encoder::Encoder;
use super::layers::{BnMode, Init, ParamEntry, ParamKind};
use super::{DomainId, ParamGroup, Phase};
use crate::error::{Error, Result};

/// Immutable snapshot of the step-1 model: shared encoder weights, the
/// domain-1 branch and decoder `D_1`.
#[derive(Debug)]
pub struct FrozenModel {
    arch: ArchConfig,
    encoder: Encoder,
    decoder: Decoder,
}

impl FrozenModel {
    /// Per-pixel logits of the frozen model; never part of a gradient graph.
    pub fn forward(&self, xs: &Tensor) -> Result<Tensor> {
        let xs = xs.detach();
        let f = self.encoder.forward(&xs, 0, BnMode::Eval, &self.arch)?;
        Ok(self.decoder.forward(&f, BnMode::Eval, &self.arch)?.detach())
    }

    /// Entries named as in the live model (`encoder.…`, `decoder.d1.…`).
    pub fn params(&self) -> Vec<ParamEntry> {
        let mut out = Vec::new();
        self.encoder.visit(&mut |e| out.push(e));
        self.decoder
            .visit("decoder.d1", ParamGroup::Decoder(DomainId::SOURCE), &mut |e| {
                out.push(e)
            });
        out
    }
}

/// Encoder, per-domain decoders, discriminator and (after `add_domain`) the
/// frozen step-1 snapshot.
#[derive(Debug)]
pub struct ModelBundle {
    arch: ArchConfig,
    device: Device,
    encoder: Encoder,
    decoders: Vec<Decoder>,
    discriminator: Discriminator,
    frozen_m1: Option<FrozenModel>,
    trainable: BTreeSet<ParamGroup>,
    phase: Phase,
}

pub(crate) const FROZEN_PREFIX: &str = "frozen_m1.";

impl ModelBundle {
    /// Builds a freshly initialized bundle with `num_domains` decoders and
    /// adapter sets. Configured for step 1.
    pub fn build(arch: &ArchConfig, num_domains: usize, seed: u64) -> Result<Self> {
        arch.validate()?;
        if num_domains == 0 {
            return Err(Error::config("at least one domain is required"));
        }
        let device = Device::Cpu;
        let mut init = Init::new(seed, &device);
        let encoder = Encoder::new(arch, num_domains, &mut init)?;
        let decoders = (0..num_domains)
            .map(|_| Decoder::new(arch, &mut init))
            .collect::<Result<Vec<_>>>()?;
        let discriminator = Discriminator::new(arch, &mut init)?;
        let mut bundle = Self {
            arch: arch.clone(),
            device,
            encoder,
            decoders,
            discriminator,
            frozen_m1: None,
            trainable: BTreeSet::new(),
            phase: Phase::Step1,
        };
        bundle.set_trainability(Phase::Step1)?;
        Ok(bundle)
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn num_domains(&self) -> usize {
        self.decoders.len()
    }

    pub fn registered_domains(&self) -> Vec<DomainId> {
        (0..self.num_domains()).map(DomainId::from_index).collect()
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn frozen_m1(&self) -> Option<&FrozenModel> {
        self.frozen_m1.as_ref()
    }

    fn check_domain(&self, domain: DomainId) -> Result<usize> {
        if domain.0 == 0 || domain.0 > self.num_domains() {
            return Err(Error::UnknownDomain(domain.0));
        }
        Ok(domain.index())
    }

    fn check_input(&self, xs: &Tensor) -> Result<()> {
        let (_, c, h, w) = xs.dims4()?;
        let a = &self.arch;
        if (c, h, w) != (a.in_channels, a.input_height, a.input_width) {
            return Err(Error::validation(format!(
                "expected input (_, {}, {}, {}), got (_, {c}, {h}, {w})",
                a.in_channels, a.input_height, a.input_width
            )));
        }
        Ok(())
    }

    fn mode(&self, train: bool, group: ParamGroup) -> BnMode {
        if train && self.trainable.contains(&group) {
            BnMode::Train
        } else {
            BnMode::Eval
        }
    }

    /// Encoder features under `domain`'s adapters. With `train`, batch norms
    /// of a trainable domain use batch statistics; frozen domains always use
    /// their running statistics.
    pub fn forward_encoder(&self, xs: &Tensor, domain: DomainId, train: bool) -> Result<Tensor> {
        let k = self.check_domain(domain)?;
        self.check_input(xs)?;
        let mode = self.mode(train, ParamGroup::DomainSpecific(domain));
        self.encoder.forward(xs, k, mode, &self.arch)
    }

    /// Like [`forward_encoder`](Self::forward_encoder) with an explicit
    /// batch-norm mode for the domain's own normalization layers. A frozen
    /// domain still uses its running statistics.
    pub fn forward_encoder_with(&self, xs: &Tensor, domain: DomainId, mode: BnMode) -> Result<Tensor> {
        let k = self.check_domain(domain)?;
        self.check_input(xs)?;
        let mode = if self.trainable.contains(&ParamGroup::DomainSpecific(domain)) {
            mode
        } else {
            BnMode::Eval
        };
        self.encoder.forward(xs, k, mode, &self.arch)
    }

    /// Per-pixel logits `(batch, 2, H, W)` from `domain`'s decoder.
    pub fn forward_decoder(&self, features: &Tensor, domain: DomainId, train: bool) -> Result<Tensor> {
        let k = self.check_domain(domain)?;
        let mode = self.mode(train, ParamGroup::Decoder(domain));
        self.decoders[k].forward(features, mode, &self.arch)
    }

    /// One domain logit per sample; `sigmoid(logit)` is P(target).
    pub fn forward_discriminator(&self, features: &Tensor) -> Result<Tensor> {
        self.discriminator.forward(features)
    }

    /// Inference-mode logits.
    pub fn predict(&self, xs: &Tensor, domain: DomainId) -> Result<Tensor> {
        let f = self.forward_encoder(xs, domain, false)?;
        self.forward_decoder(&f, domain, false)
    }

    /// Registers the target domain: its adapters, batch norms and decoder are
    /// copied from domain 1, and `(phi_i, phi_s1, D_1)` is snapshotted as the
    /// frozen step-1 model.
    pub fn add_domain(&mut self) -> Result<DomainId> {
        if self.frozen_m1.is_some() {
            return Err(Error::state("add_domain was already applied"));
        }
        if self.num_domains() != 1 {
            return Err(Error::state(format!(
                "add_domain expects a single-domain step-1 bundle, found {} domains",
                self.num_domains()
            )));
        }
        let frozen = FrozenModel {
            arch: self.arch.clone(),
            encoder: self.encoder.snapshot(0)?,
            decoder: self.decoders[0].deep_copy()?,
        };
        self.encoder.add_domain_from(0)?;
        let d2 = self.decoders[0].deep_copy()?;
        self.decoders.push(d2);
        self.frozen_m1 = Some(frozen);
        Ok(DomainId::from_index(self.num_domains() - 1))
    }

    /// Step 1: `phi_i`, `phi_s1`, `D_1` trainable. Step 2: `phi_i`, `phi_s2`,
    /// `D_2`, `d_rho` trainable; `phi_s1` and `D_1` frozen.
    pub fn set_trainability(&mut self, phase: Phase) -> Result<()> {
        let groups = match phase {
            Phase::Step1 => vec![
                ParamGroup::Shared,
                ParamGroup::DomainSpecific(DomainId::SOURCE),
                ParamGroup::Decoder(DomainId::SOURCE),
            ],
            Phase::Step2 => {
                if self.frozen_m1.is_none() || self.num_domains() < 2 {
                    return Err(Error::state("step 2 requires add_domain first"));
                }
                vec![
                    ParamGroup::Shared,
                    ParamGroup::DomainSpecific(DomainId::TARGET),
                    ParamGroup::Decoder(DomainId::TARGET),
                    ParamGroup::Discriminator,
                ]
            }
        };
        self.trainable = groups.into_iter().collect();
        self.phase = phase;
        Ok(())
    }

    /// Low-level override of a single group's trainability.
    pub fn set_group_trainable(&mut self, group: ParamGroup, trainable: bool) {
        if trainable {
            self.trainable.insert(group);
        } else {
            self.trainable.remove(&group);
        }
    }

    pub fn is_trainable(&self, group: ParamGroup) -> bool {
        self.trainable.contains(&group)
    }

    pub fn trainable_groups(&self) -> Vec<ParamGroup> {
        self.trainable.iter().copied().collect()
    }

    /// All named arrays of the live model (weights and running statistics).
    pub fn params(&self) -> Vec<ParamEntry> {
        let mut out = Vec::new();
        self.encoder.visit(&mut |e| out.push(e));
        for (k, dec) in self.decoders.iter().enumerate() {
            let id = DomainId::from_index(k);
            dec.visit(&format!("decoder.d{}", id.0), ParamGroup::Decoder(id), &mut |e| {
                out.push(e)
            });
        }
        self.discriminator.visit(&mut |e| out.push(e));
        out
    }

    /// Optimizable weights of trainable groups selected by `filter`.
    pub fn trainable_vars(&self, filter: impl Fn(ParamGroup) -> bool) -> Vec<Var> {
        self.params()
            .into_iter()
            .filter(|e| e.kind == ParamKind::Weight && self.is_trainable(e.group) && filter(e.group))
            .map(|e| e.var)
            .collect()
    }

    /// Number of scalar weights (running statistics excluded) in groups
    /// selected by `filter`.
    pub fn param_count(&self, filter: impl Fn(ParamGroup) -> bool) -> usize {
        self.params()
            .iter()
            .filter(|e| e.kind == ParamKind::Weight && filter(e.group))
            .map(|e| e.var.elem_count())
            .sum()
    }

    /// Deep copies of every array, frozen snapshot included under
    /// `frozen_m1.`.
    pub fn state_dict(&self) -> Result<BTreeMap<String, Tensor>> {
        let mut out = BTreeMap::new();
        for e in self.params() {
            out.insert(e.name, e.var.as_tensor().copy()?);
        }
        if let Some(frozen) = &self.frozen_m1 {
            for e in frozen.params() {
                out.insert(format!("{FROZEN_PREFIX}{}", e.name), e.var.as_tensor().copy()?);
            }
        }
        Ok(out)
    }

    /// Overwrites every array from `state`. All keys must be present with
    /// matching shapes; extra keys are an error.
    pub fn load_state_dict(&mut self, state: &BTreeMap<String, Tensor>) -> Result<()> {
        let mut entries: Vec<(String, Var)> = self.params().into_iter().map(|e| (e.name, e.var)).collect();
        if let Some(frozen) = &self.frozen_m1 {
            entries.extend(
                frozen
                    .params()
                    .into_iter()
                    .map(|e| (format!("{FROZEN_PREFIX}{}", e.name), e.var)),
            );
        }
        if entries.len() != state.len() {
            let known: BTreeSet<&str> = entries.iter().map(|(n, _)| n.as_str()).collect();
            let extra: Vec<&str> = state
                .keys()
                .map(String::as_str)
                .filter(|k| !known.contains(k))
                .collect();
            return Err(Error::Checkpoint(format!(
                "state has {} arrays, model expects {}; unexpected keys: {:?}",
                state.len(),
                entries.len(),
                extra
            )));
        }
        for (name, var) in entries {
            let t = state
                .get(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing array {name}")))?;
            if t.dims() != var.dims() {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch for {name}: {:?} vs {:?}",
                    t.dims(),
                    var.dims()
                )));
            }
            var.set(&t.to_dtype(DType::F32)?)?;
        }
        Ok(())
    }

    /// Names of live `phi_s1`/`D_1` arrays that differ bitwise from the
    /// frozen snapshot. Empty when the freeze held.
    pub fn frozen_mismatches(&self) -> Result<Vec<String>> {
        let frozen = self
            .frozen_m1
            .as_ref()
            .ok_or_else(|| Error::state("no frozen snapshot"))?;
        let snapshot: BTreeMap<String, Var> = frozen.params().into_iter().map(|e| (e.name, e.var)).collect();
        let mut bad = Vec::new();
        for e in self.params() {
            let guarded = matches!(
                e.group,
                ParamGroup::DomainSpecific(DomainId::SOURCE) | ParamGroup::Decoder(DomainId::SOURCE)
            );
            if !guarded {
                continue;
            }
            match snapshot.get(&e.name) {
                Some(s) if bitwise_equal(e.var.as_tensor(), s.as_tensor())? => {}
                _ => bad.push(e.name),
            }
        }
        Ok(bad)
    }

    /// Replaces decoder `to`'s weights with a copy of decoder `from`'s.
    pub fn copy_decoder(&mut self, from: DomainId, to: DomainId) -> Result<()> {
        let f = self.check_domain(from)?;
        let t = self.check_domain(to)?;
        self.decoders[t] = self.decoders[f].deep_copy()?;
        Ok(())
    }
}

pub(crate) fn bitwise_equal(a: &Tensor, b: &Tensor) -> Result<bool> {
    if a.dims() != b.dims() {
        return Ok(false);
    }
    let a: Vec<f32> = a.flatten_all()?.to_dtype(DType::F32)?.to_vec1()?;
    let b: Vec<f32> = b.flatten_all()?.to_dtype(DType::F32)?.to_vec1()?;
    Ok(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ArchConfig {
        ArchConfig {
            input_height: 16,
            input_width: 16,
            stage_widths: vec![4, 8],
            units_per_stage: vec![0, 1],
            decoder_units_per_stage: vec![1],
            discriminator_widths: vec![4, 1],
            ..ArchConfig::default()
        }
    }

    fn batch(b: usize, seed: u64) -> Tensor {
        let n = b * 3 * 16 * 16;
        let data: Vec<f32> = (0..n)
            .map(|i| (((i as u64 * 2654435761 + seed) % 1000) as f32) / 1000.0)
            .collect();
        Tensor::from_vec(data, (b, 3, 16, 16), &Device::Cpu).unwrap()
    }

    fn is_ds(d: usize) -> impl Fn(ParamGroup) -> bool {
        move |g| g == ParamGroup::DomainSpecific(DomainId(d))
    }

    #[test]
    fn build_single_domain() {
        let m = ModelBundle::build(&ArchConfig::default(), 1, 0).unwrap();
        assert_eq!(m.num_domains(), 1);
        assert!(m.param_count(is_ds(1)) > 0);
        assert!(m.frozen_m1().is_none());
    }

    #[test]
    fn domain_counts_are_symmetric() {
        let m = ModelBundle::build(&tiny(), 2, 0).unwrap();
        assert_eq!(m.param_count(is_ds(1)), m.param_count(is_ds(2)));
    }

    #[test]
    fn output_shapes() {
        let m = ModelBundle::build(&tiny(), 1, 0).unwrap();
        let f = m.forward_encoder(&batch(2, 1), DomainId(1), true).unwrap();
        assert_eq!(f.dims(), &[2, 8, 4, 4]);
        let y = m.forward_decoder(&f, DomainId(1), true).unwrap();
        assert_eq!(y.dims(), &[2, 2, 16, 16]);
        let d = m.forward_discriminator(&f).unwrap();
        assert_eq!(d.dims(), &[2]);
    }

    #[test]
    fn unknown_domain_is_rejected() {
        let m = ModelBundle::build(&tiny(), 1, 0).unwrap();
        let err = m.forward_encoder(&batch(1, 0), DomainId(2), false).unwrap_err();
        assert!(matches!(err, Error::UnknownDomain(2)));
        let f = m.forward_encoder(&batch(1, 0), DomainId(1), false).unwrap();
        assert!(m.forward_decoder(&f, DomainId(3), false).is_err());
    }

    #[test]
    fn wrong_input_shape_is_rejected() {
        let m = ModelBundle::build(&tiny(), 1, 0).unwrap();
        let x = Tensor::zeros((1, 3, 8, 8), DType::F32, &Device::Cpu).unwrap();
        assert!(m.forward_encoder(&x, DomainId(1), false).is_err());
    }

    #[test]
    fn zero_input_gives_zero_first_block_features() {
        // Zero shift and no conv bias before the norm: zeros stay zeros.
        let arch = ArchConfig {
            stage_widths: vec![4],
            units_per_stage: vec![0],
            decoder_units_per_stage: vec![],
            ..tiny()
        };
        let m = ModelBundle::build(&arch, 1, 3).unwrap();
        let x = Tensor::zeros((2, 3, 16, 16), DType::F32, &Device::Cpu).unwrap();
        for train in [false, true] {
            let f = m.forward_encoder(&x, DomainId(1), train).unwrap();
            let max = f.abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
            assert_eq!(max, 0.0);
        }
    }

    #[test]
    fn identical_domain_params_give_identical_features() {
        let m = ModelBundle::build(&tiny(), 2, 5).unwrap();
        let x = batch(3, 7);
        let a = m.forward_encoder(&x, DomainId(1), false).unwrap();
        let b = m.forward_encoder(&x, DomainId(2), false).unwrap();
        assert!(bitwise_equal(&a, &b).unwrap());
    }

    #[test]
    fn add_domain_copies_and_snapshots() {
        let mut m = ModelBundle::build(&tiny(), 1, 1).unwrap();
        let shared = m.param_count(|g| g == ParamGroup::Shared);
        let id = m.add_domain().unwrap();
        assert_eq!(id, DomainId(2));
        assert_eq!(shared, m.param_count(|g| g == ParamGroup::Shared));
        assert_eq!(m.param_count(is_ds(1)), m.param_count(is_ds(2)));
        let x = batch(4, 2);
        let a = m.predict(&x, DomainId(1)).unwrap();
        let b = m.predict(&x, DomainId(2)).unwrap();
        assert!(bitwise_equal(&a, &b).unwrap());
        let c = m.frozen_m1().unwrap().forward(&x).unwrap();
        assert!(bitwise_equal(&a, &c).unwrap());
        assert!(m.frozen_mismatches().unwrap().is_empty());
        assert!(matches!(m.add_domain(), Err(Error::State(_))));
    }

    #[test]
    fn step2_requires_add_domain() {
        let mut m = ModelBundle::build(&tiny(), 1, 1).unwrap();
        assert!(matches!(m.set_trainability(Phase::Step2), Err(Error::State(_))));
        m.add_domain().unwrap();
        m.set_trainability(Phase::Step2).unwrap();
        assert!(!m.is_trainable(ParamGroup::DomainSpecific(DomainId(1))));
        assert!(!m.is_trainable(ParamGroup::Decoder(DomainId(1))));
        assert!(m.is_trainable(ParamGroup::Discriminator));
        let trainable: usize = m.trainable_vars(|_| true).iter().map(|v| v.elem_count()).sum();
        let expected = m.param_count(|g| {
            matches!(
                g,
                ParamGroup::Shared
                    | ParamGroup::DomainSpecific(DomainId(2))
                    | ParamGroup::Decoder(DomainId(2))
                    | ParamGroup::Discriminator
            )
        });
        assert_eq!(trainable, expected);
    }

    #[test]
    fn step1_trains_encoder_and_first_decoder() {
        let m = ModelBundle::build(&tiny(), 1, 1).unwrap();
        let trainable: usize = m.trainable_vars(|_| true).iter().map(|v| v.elem_count()).sum();
        let expected = m.param_count(|g| g != ParamGroup::Discriminator);
        assert_eq!(trainable, expected);
    }

    #[test]
    fn state_dict_round_trip() {
        let mut a = ModelBundle::build(&tiny(), 1, 1).unwrap();
        a.add_domain().unwrap();
        let state = a.state_dict().unwrap();
        assert!(state.keys().any(|k| k == "encoder.block1.conv1.alpha_w.domain2"));
        assert!(state.keys().any(|k| k.starts_with("frozen_m1.decoder.d1.")));
        let mut b = ModelBundle::build(&tiny(), 1, 99).unwrap();
        b.add_domain().unwrap();
        b.load_state_dict(&state).unwrap();
        let x = batch(2, 3);
        let ya = a.predict(&x, DomainId(2)).unwrap();
        let yb = b.predict(&x, DomainId(2)).unwrap();
        assert!(bitwise_equal(&ya, &yb).unwrap());
    }

    #[test]
    fn train_mode_updates_only_trainable_running_stats() {
        let mut m = ModelBundle::build(&tiny(), 1, 1).unwrap();
        m.add_domain().unwrap();
        m.set_trainability(Phase::Step2).unwrap();
        let before = m.state_dict().unwrap();
        let x = batch(4, 11);
        let f = m.forward_encoder(&x, DomainId(1), true).unwrap();
        m.forward_decoder(&f, DomainId(1), true).unwrap();
        assert!(m.frozen_mismatches().unwrap().is_empty());
        let after = m.state_dict().unwrap();
        for (k, v) in &before {
            assert!(bitwise_equal(v, &after[k]).unwrap(), "{k} changed");
        }
        m.forward_encoder(&x, DomainId(2), true).unwrap();
        let changed = m.state_dict().unwrap();
        assert!(!bitwise_equal(
            &before["encoder.down1.running_mean.domain2"],
            &changed["encoder.down1.running_mean.domain2"]
        )
        .unwrap());
    }
}
