//! Domain-specific decoder mirroring the encoder: transposed-conv upsamplers
//! with plain residual units, ending in a K-channel transposed conv.

use candle_core::Tensor;

use super::config::{ArchConfig, NUM_CLASSES};
use super::layers::{BatchNorm, BnMode, Conv, Init, Visitor};
use super::ParamGroup;
use crate::error::Result;

#[derive(Clone, Debug)]
struct Upsampler {
    conv: Conv,
    bn: BatchNorm,
}

#[derive(Clone, Debug)]
struct Unit {
    conv1: Conv,
    bn1: BatchNorm,
    conv2: Conv,
    bn2: BatchNorm,
}

#[derive(Clone, Debug)]
enum Layer {
    Up(Upsampler),
    Unit(Unit),
}

#[derive(Clone, Debug)]
pub(crate) struct Decoder {
    layers: Vec<Layer>,
    output: Conv,
}

impl Decoder {
    pub fn new(arch: &ArchConfig, init: &mut Init) -> Result<Self> {
        let widths = &arch.stage_widths;
        let mut layers = Vec::new();
        for (i, &units) in arch.decoder_units_per_stage.iter().enumerate() {
            let c_in = widths[widths.len() - 1 - i];
            let c_out = widths[widths.len() - 2 - i];
            layers.push(Layer::Up(Upsampler {
                conv: Conv::new_transpose(init, c_in, c_out, 3)?,
                bn: BatchNorm::new(init, c_out)?,
            }));
            for _ in 0..units {
                layers.push(Layer::Unit(Unit {
                    conv1: Conv::new(init, c_out, c_out, 3)?,
                    bn1: BatchNorm::new(init, c_out)?,
                    conv2: Conv::new(init, c_out, c_out, 3)?,
                    bn2: BatchNorm::new(init, c_out)?,
                }));
            }
        }
        let output = Conv::new_transpose(init, widths[0], NUM_CLASSES, 2)?;
        Ok(Self { layers, output })
    }

    pub fn forward(&self, xs: &Tensor, mode: BnMode, arch: &ArchConfig) -> Result<Tensor> {
        let (m, eps) = (arch.bn_momentum, arch.bn_eps);
        let mut h = xs.clone();
        for layer in &self.layers {
            h = match layer {
                Layer::Up(up) => {
                    let y = up.conv.forward_transpose(&h, 1, 1, 2)?;
                    up.bn.forward(&y, mode, m, eps)?.relu()?
                }
                Layer::Unit(u) => {
                    let y = u.conv1.forward(&h, 1, 1)?;
                    let y = u.bn1.forward(&y, mode, m, eps)?.relu()?;
                    let y = u.conv2.forward(&y, 1, 1)?;
                    let y = u.bn2.forward(&y, mode, m, eps)?;
                    (y + &h)?.relu()?
                }
            };
        }
        self.output.forward_transpose(&h, 0, 0, 2)
    }

    pub fn deep_copy(&self) -> Result<Self> {
        let layers = self
            .layers
            .iter()
            .map(|layer| {
                Ok(match layer {
                    Layer::Up(up) => Layer::Up(Upsampler {
                        conv: up.conv.deep_copy()?,
                        bn: up.bn.deep_copy()?,
                    }),
                    Layer::Unit(u) => Layer::Unit(Unit {
                        conv1: u.conv1.deep_copy()?,
                        bn1: u.bn1.deep_copy()?,
                        conv2: u.conv2.deep_copy()?,
                        bn2: u.bn2.deep_copy()?,
                    }),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            layers,
            output: self.output.deep_copy()?,
        })
    }

    /// `prefix` is e.g. `decoder.d2`.
    pub fn visit(&self, prefix: &str, group: ParamGroup, f: &mut Visitor<'_>) {
        const BN: [&str; 2] = ["scale", "shift"];
        let (mut up, mut unit) = (0, 0);
        for layer in &self.layers {
            match layer {
                Layer::Up(u) => {
                    up += 1;
                    let p = format!("{prefix}.up{up}");
                    u.conv.visit(&p, group, f);
                    u.bn.visit(&format!("{p}.bn"), BN, "", group, f);
                }
                Layer::Unit(u) => {
                    unit += 1;
                    let p = format!("{prefix}.unit{unit}");
                    u.conv1.visit(&format!("{p}.conv1"), group, f);
                    u.bn1.visit(&format!("{p}.bn1"), BN, "", group, f);
                    u.conv2.visit(&format!("{p}.conv2"), group, f);
                    u.bn2.visit(&format!("{p}.bn2"), BN, "", group, f);
                }
            }
        }
        self.output.visit(&format!("{prefix}.out"), group, f);
    }
}
