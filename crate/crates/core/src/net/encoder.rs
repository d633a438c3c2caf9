//! Adapter encoder: ERFNet-style downsamplers and residual units whose 3×3
//! convolutions are shared across domains, each paralleled by a per-domain
//! 1×1 adapter and followed by per-domain batch norm.

use candle_core::{Tensor, Var};

use super::config::ArchConfig;
use super::layers::{deep_copy, emit, BatchNorm, BnMode, Init, ParamKind, Visitor};
use super::{DomainId, ParamGroup};
use crate::error::Result;

/// Per-domain parameters attached to one shared convolution.
#[derive(Clone, Debug)]
struct DomainBranch {
    alpha_w: Option<Var>,
    bn: BatchNorm,
}

impl DomainBranch {
    fn deep_copy(&self) -> Result<Self> {
        Ok(Self {
            alpha_w: self.alpha_w.as_ref().map(deep_copy).transpose()?,
            bn: self.bn.deep_copy()?,
        })
    }
}

/// A shared 3×3 conv, an optional per-domain 1×1 adapter in parallel, and
/// per-domain batch norm.
#[derive(Clone, Debug)]
struct AdaptedConv {
    phi_w: Var,
    branches: Vec<DomainBranch>,
    stride: usize,
    padding: usize,
}

impl AdaptedConv {
    #[allow(clippy::too_many_arguments)]
    fn new(
        init: &mut Init,
        c_in: usize,
        c_out: usize,
        bn_channels: usize,
        stride: usize,
        with_adapter: bool,
        num_domains: usize,
    ) -> Result<Self> {
        let phi_w = init.conv_kernel(c_out, c_in, 3)?;
        let alpha_w = if with_adapter {
            Some(init.uniform(&[c_out, c_in, 1, 1], 1.0 / (c_in as f64).sqrt())?)
        } else {
            None
        };
        let first = DomainBranch {
            alpha_w,
            bn: BatchNorm::new(init, bn_channels)?,
        };
        // Every domain starts from the same adapter values.
        let mut branches = vec![first];
        for _ in 1..num_domains {
            branches.push(branches[0].deep_copy()?);
        }
        Ok(Self {
            phi_w,
            branches,
            stride,
            padding: 1,
        })
    }

    fn conv(&self, xs: &Tensor, domain: usize) -> Result<Tensor> {
        let mut ys = xs.conv2d(self.phi_w.as_tensor(), self.padding, self.stride, 1, 1)?;
        if let Some(alpha_w) = &self.branches[domain].alpha_w {
            ys = (ys + xs.conv2d(alpha_w.as_tensor(), 0, self.stride, 1, 1)?)?;
        }
        Ok(ys)
    }

    fn norm(&self, ys: &Tensor, domain: usize, mode: BnMode, arch: &ArchConfig) -> Result<Tensor> {
        self.branches[domain]
            .bn
            .forward(ys, mode, arch.bn_momentum, arch.bn_eps)
    }

    fn snapshot(&self, domain: usize) -> Result<Self> {
        Ok(Self {
            phi_w: deep_copy(&self.phi_w)?,
            branches: vec![self.branches[domain].deep_copy()?],
            stride: self.stride,
            padding: self.padding,
        })
    }

    fn push_copy_of(&mut self, domain: usize) -> Result<()> {
        let copy = self.branches[domain].deep_copy()?;
        self.branches.push(copy);
        Ok(())
    }

    fn visit(&self, prefix: &str, f: &mut Visitor<'_>) {
        emit(
            f,
            format!("{prefix}.phi_w"),
            &self.phi_w,
            ParamGroup::Shared,
            ParamKind::Weight,
        );
        for (k, branch) in self.branches.iter().enumerate() {
            let id = DomainId::from_index(k);
            let group = ParamGroup::DomainSpecific(id);
            let suffix = format!(".{id}");
            if let Some(alpha_w) = &branch.alpha_w {
                emit(
                    f,
                    format!("{prefix}.alpha_w{suffix}"),
                    alpha_w,
                    group,
                    ParamKind::Weight,
                );
            }
            branch.bn.visit(prefix, ["alpha_s", "alpha_b"], &suffix, group, f);
        }
    }
}

/// Strided conv concatenated with a max-pool of the input.
#[derive(Clone, Debug)]
struct Downsampler {
    conv: AdaptedConv,
    pool: bool,
}

impl Downsampler {
    fn new(init: &mut Init, c_in: usize, c_out: usize, arch: &ArchConfig, n: usize) -> Result<Self> {
        let pool = c_out > c_in;
        let conv_out = if pool { c_out - c_in } else { c_out };
        let conv = AdaptedConv::new(init, c_in, conv_out, c_out, 2, arch.adapters_on_downsamplers, n)?;
        Ok(Self { conv, pool })
    }

    fn forward(&self, xs: &Tensor, domain: usize, mode: BnMode, arch: &ArchConfig) -> Result<Tensor> {
        let mut ys = self.conv.conv(xs, domain)?;
        if self.pool {
            ys = Tensor::cat(&[&ys, &xs.max_pool2d(2)?], 1)?;
        }
        Ok(self.conv.norm(&ys, domain, mode, arch)?.relu()?)
    }
}

/// Residual unit with two adapted 3×3 convs.
#[derive(Clone, Debug)]
struct ResidualUnit {
    conv1: AdaptedConv,
    conv2: AdaptedConv,
}

impl ResidualUnit {
    fn new(init: &mut Init, c: usize, n: usize) -> Result<Self> {
        Ok(Self {
            conv1: AdaptedConv::new(init, c, c, c, 1, true, n)?,
            conv2: AdaptedConv::new(init, c, c, c, 1, true, n)?,
        })
    }

    fn forward(&self, xs: &Tensor, domain: usize, mode: BnMode, arch: &ArchConfig) -> Result<Tensor> {
        let h = self.conv1.conv(xs, domain)?;
        let h = self.conv1.norm(&h, domain, mode, arch)?.relu()?;
        let h = self.conv2.conv(&h, domain)?;
        let h = self.conv2.norm(&h, domain, mode, arch)?;
        Ok((h + xs)?.relu()?)
    }
}

#[derive(Clone, Debug)]
enum Layer {
    Down(Downsampler),
    Unit(ResidualUnit),
}

#[derive(Clone, Debug)]
pub(crate) struct Encoder {
    layers: Vec<Layer>,
    num_domains: usize,
}

impl Encoder {
    pub fn new(arch: &ArchConfig, num_domains: usize, init: &mut Init) -> Result<Self> {
        let mut layers = Vec::new();
        let mut c_in = arch.in_channels;
        for (&width, &units) in arch.stage_widths.iter().zip(&arch.units_per_stage) {
            layers.push(Layer::Down(Downsampler::new(init, c_in, width, arch, num_domains)?));
            for _ in 0..units {
                layers.push(Layer::Unit(ResidualUnit::new(init, width, num_domains)?));
            }
            c_in = width;
        }
        Ok(Self { layers, num_domains })
    }

    pub fn forward(&self, xs: &Tensor, domain: usize, mode: BnMode, arch: &ArchConfig) -> Result<Tensor> {
        let mut h = xs.clone();
        for layer in &self.layers {
            h = match layer {
                Layer::Down(d) => d.forward(&h, domain, mode, arch)?,
                Layer::Unit(u) => u.forward(&h, domain, mode, arch)?,
            };
        }
        Ok(h)
    }

    /// Registers a new domain whose parameters copy those of `source`.
    pub fn add_domain_from(&mut self, source: usize) -> Result<()> {
        for layer in &mut self.layers {
            match layer {
                Layer::Down(d) => d.conv.push_copy_of(source)?,
                Layer::Unit(u) => {
                    u.conv1.push_copy_of(source)?;
                    u.conv2.push_copy_of(source)?;
                }
            }
        }
        self.num_domains += 1;
        Ok(())
    }

    /// Deep copy holding the shared weights and a single domain's branch.
    pub fn snapshot(&self, domain: usize) -> Result<Self> {
        let layers = self
            .layers
            .iter()
            .map(|layer| {
                Ok(match layer {
                    Layer::Down(d) => Layer::Down(Downsampler {
                        conv: d.conv.snapshot(domain)?,
                        pool: d.pool,
                    }),
                    Layer::Unit(u) => Layer::Unit(ResidualUnit {
                        conv1: u.conv1.snapshot(domain)?,
                        conv2: u.conv2.snapshot(domain)?,
                    }),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers, num_domains: 1 })
    }

    pub fn visit(&self, f: &mut Visitor<'_>) {
        let (mut down, mut block) = (0, 0);
        for layer in &self.layers {
            match layer {
                Layer::Down(d) => {
                    down += 1;
                    d.conv.visit(&format!("encoder.down{down}"), f);
                }
                Layer::Unit(u) => {
                    block += 1;
                    u.conv1.visit(&format!("encoder.block{block}.conv1"), f);
                    u.conv2.visit(&format!("encoder.block{block}.conv2"), f);
                }
            }
        }
    }
}
