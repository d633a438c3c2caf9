use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of segmentation classes (background, crack).
pub const NUM_CLASSES: usize = 2;

/// Shape of the segmentation network family.
///
/// The encoder has one downsampling stage per entry of `stage_widths`; each
/// stage halves the spatial size and is followed by `units_per_stage[i]`
/// residual-adapter units. The decoder mirrors the encoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    pub in_channels: usize,
    pub input_height: usize,
    pub input_width: usize,
    pub stage_widths: Vec<usize>,
    pub units_per_stage: Vec<usize>,
    /// Residual units after each decoder upsampler (one entry per upsampler,
    /// i.e. `stage_widths.len() - 1` entries).
    pub decoder_units_per_stage: Vec<usize>,
    /// Channel widths of the discriminator's stride-2 convolutions. The last
    /// width must be 1.
    pub discriminator_widths: Vec<usize>,
    /// Also place a parallel 1×1 domain adapter on each downsampler conv.
    pub adapters_on_downsamplers: bool,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            input_height: 256,
            input_width: 256,
            stage_widths: vec![16, 64, 128],
            units_per_stage: vec![0, 5, 8],
            decoder_units_per_stage: vec![2, 2],
            discriminator_widths: vec![64, 128, 256, 1],
            adapters_on_downsamplers: false,
            bn_momentum: 0.1,
            bn_eps: 1e-3,
        }
    }
}

impl ArchConfig {
    /// A small configuration for CPU experiments on 64×64 inputs.
    pub fn desk_scale() -> Self {
        Self {
            input_height: 64,
            input_width: 64,
            stage_widths: vec![16, 32],
            units_per_stage: vec![0, 3],
            decoder_units_per_stage: vec![1],
            discriminator_widths: vec![32, 32, 1],
            ..Self::default()
        }
    }

    pub fn with_input_size(mut self, height: usize, width: usize) -> Self {
        self.input_height = height;
        self.input_width = width;
        self
    }

    /// Total spatial reduction of the encoder.
    pub fn output_stride(&self) -> usize {
        1 << self.stage_widths.len()
    }

    pub fn feature_channels(&self) -> usize {
        self.stage_widths.last().copied().unwrap_or(0)
    }

    pub fn feature_size(&self) -> (usize, usize) {
        let s = self.output_stride();
        (self.input_height / s, self.input_width / s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 {
            return Err(Error::config("in_channels must be positive"));
        }
        if self.stage_widths.is_empty() {
            return Err(Error::config("at least one encoder stage is required"));
        }
        if self.stage_widths.contains(&0) {
            return Err(Error::config("stage widths must be positive"));
        }
        if self.units_per_stage.len() != self.stage_widths.len() {
            return Err(Error::config(format!(
                "units_per_stage has {} entries but there are {} stages",
                self.units_per_stage.len(),
                self.stage_widths.len()
            )));
        }
        if self.decoder_units_per_stage.len() + 1 != self.stage_widths.len() {
            return Err(Error::config(format!(
                "decoder_units_per_stage needs {} entries, got {}",
                self.stage_widths.len() - 1,
                self.decoder_units_per_stage.len()
            )));
        }
        match self.discriminator_widths.last() {
            Some(1) => {}
            _ => return Err(Error::config("discriminator widths must be non-empty and end with 1")),
        }
        if self.discriminator_widths.contains(&0) {
            return Err(Error::config("discriminator widths must be positive"));
        }
        let stride = self.output_stride();
        for (name, size) in [("height", self.input_height), ("width", self.input_width)] {
            if size == 0 || size % stride != 0 {
                return Err(Error::config(format!(
                    "input {name} {size} is not divisible by the encoder stride {stride}"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) || self.bn_eps <= 0.0 {
            return Err(Error::config("batch-norm momentum must be in [0,1] and eps > 0"));
        }
        Ok(())
    }
}
