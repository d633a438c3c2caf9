use candle_core::Tensor;

use super::config::ArchConfig;
use super::layers::{Conv, Init, Visitor};
use super::ParamGroup;
use crate::error::Result;

const LEAKY_SLOPE: f64 = 0.2;

/// Fully convolutional domain classifier: stride-2 3×3 convs with leaky ReLU
/// in between, spatially mean-pooled to one logit per sample.
#[derive(Clone, Debug)]
pub(crate) struct Discriminator {
    convs: Vec<Conv>,
}

impl Discriminator {
    pub fn new(arch: &ArchConfig, init: &mut Init) -> Result<Self> {
        let mut c_in = arch.feature_channels();
        let mut convs = Vec::with_capacity(arch.discriminator_widths.len());
        for &w in &arch.discriminator_widths {
            convs.push(Conv::new(init, c_in, w, 3)?);
            c_in = w;
        }
        Ok(Self { convs })
    }

    /// Returns logits of shape `(batch,)`.
    pub fn forward(&self, features: &Tensor) -> Result<Tensor> {
        let mut h = features.clone();
        for (i, conv) in self.convs.iter().enumerate() {
            h = conv.forward(&h, 1, 2)?;
            if i + 1 < self.convs.len() {
                h = candle_nn::ops::leaky_relu(&h, LEAKY_SLOPE)?;
            }
        }
        let (b, _, _, _) = h.dims4()?;
        Ok(h.flatten_from(1)?.mean(1)?.reshape(b)?)
    }

    pub fn visit(&self, f: &mut Visitor<'_>) {
        for (i, conv) in self.convs.iter().enumerate() {
            conv.visit(&format!("discriminator.conv{}", i + 1), ParamGroup::Discriminator, f);
        }
    }
}
