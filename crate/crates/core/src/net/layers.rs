//! Building blocks shared by the encoder, decoders and discriminator.

use candle_core::{Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ParamGroup;
use crate::error::Result;

/// Whether a parameter is optimized or is running state.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    RunningStat,
}

/// One named array of the model, as enumerated for optimizers and checkpoints.
#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub name: String,
    pub var: Var,
    pub group: ParamGroup,
    pub kind: ParamKind,
}

pub(crate) type Visitor<'a> = dyn FnMut(ParamEntry) + 'a;

pub(crate) fn emit(f: &mut Visitor<'_>, name: String, var: &Var, group: ParamGroup, kind: ParamKind) {
    f(ParamEntry {
        name,
        var: var.clone(),
        group,
        kind,
    })
}

/// Seeded parameter initializer.
pub(crate) struct Init {
    rng: ChaCha8Rng,
    device: Device,
}

impl Init {
    pub fn new(seed: u64, device: &Device) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            device: device.clone(),
        }
    }

    pub fn uniform(&mut self, shape: &[usize], bound: f64) -> Result<Var> {
        let n: usize = shape.iter().product();
        let data: Vec<f32> = (0..n).map(|_| self.rng.random_range(-bound..=bound) as f32).collect();
        Ok(Var::from_tensor(&Tensor::from_vec(data, shape, &self.device)?)?)
    }

    /// He-uniform init for a conv kernel followed by a ReLU.
    pub fn conv_kernel(&mut self, c_out: usize, c_in: usize, k: usize) -> Result<Var> {
        let fan_in = (c_in * k * k) as f64;
        self.uniform(&[c_out, c_in, k, k], (6.0 / fan_in).sqrt())
    }

    /// Transposed conv kernels are laid out (c_in, c_out, k, k).
    pub fn conv_transpose_kernel(&mut self, c_in: usize, c_out: usize, k: usize) -> Result<Var> {
        let fan_in = (c_in * k * k) as f64;
        self.uniform(&[c_in, c_out, k, k], (6.0 / fan_in).sqrt())
    }

    pub fn bias(&mut self, n: usize, fan_in: usize) -> Result<Var> {
        self.uniform(&[n], 1.0 / (fan_in as f64).sqrt())
    }

    pub fn constant(&self, n: usize, value: f32) -> Result<Var> {
        Ok(Var::from_tensor(&Tensor::full(value, n, &self.device)?)?)
    }
}

pub(crate) fn deep_copy(var: &Var) -> Result<Var> {
    Ok(Var::from_tensor(&var.as_tensor().copy()?)?)
}

/// Batch-norm statistics source.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    /// Normalize with batch statistics and update the running estimates.
    Train,
    /// Normalize with batch statistics, leaving the running estimates alone.
    Batch,
    /// Normalize with the running estimates.
    Eval,
}

/// Scale/shift batch norm with running statistics. In the encoder one of
/// these exists per domain (`alpha_s`, `alpha_b`).
#[derive(Clone, Debug)]
pub(crate) struct BatchNorm {
    pub scale: Var,
    pub shift: Var,
    pub running_mean: Var,
    pub running_var: Var,
}

impl BatchNorm {
    pub fn new(init: &Init, channels: usize) -> Result<Self> {
        Ok(Self {
            scale: init.constant(channels, 1.0)?,
            shift: init.constant(channels, 0.0)?,
            running_mean: init.constant(channels, 0.0)?,
            running_var: init.constant(channels, 1.0)?,
        })
    }

    pub fn deep_copy(&self) -> Result<Self> {
        Ok(Self {
            scale: deep_copy(&self.scale)?,
            shift: deep_copy(&self.shift)?,
            running_mean: deep_copy(&self.running_mean)?,
            running_var: deep_copy(&self.running_var)?,
        })
    }

    pub fn forward(&self, xs: &Tensor, mode: BnMode, momentum: f64, eps: f64) -> Result<Tensor> {
        let (b, c, h, w) = xs.dims4()?;
        let (mean, var) = match mode {
            BnMode::Train | BnMode::Batch => {
                let mean = xs.mean_keepdim(0)?.mean_keepdim(2)?.mean_keepdim(3)?;
                let centered = xs.broadcast_sub(&mean)?;
                let var = centered.sqr()?.mean_keepdim(0)?.mean_keepdim(2)?.mean_keepdim(3)?;
                if mode == BnMode::Train {
                    let n = b * h * w;
                    let unbiased = if n > 1 { n as f64 / (n - 1) as f64 } else { 1.0 };
                    let batch_mean = mean.detach().flatten_all()?;
                    let batch_var = var.detach().flatten_all()?.affine(unbiased, 0.0)?;
                    let new_mean = ((self.running_mean.as_tensor() * (1.0 - momentum))? + (batch_mean * momentum)?)?;
                    let new_var = ((self.running_var.as_tensor() * (1.0 - momentum))? + (batch_var * momentum)?)?;
                    self.running_mean.set(&new_mean)?;
                    self.running_var.set(&new_var)?;
                }
                (mean, var)
            }
            BnMode::Eval => (
                self.running_mean.as_tensor().reshape((1, c, 1, 1))?,
                self.running_var.as_tensor().reshape((1, c, 1, 1))?,
            ),
        };
        let normed = xs.broadcast_sub(&mean)?.broadcast_div(&(var + eps)?.sqrt()?)?;
        let scale = self.scale.as_tensor().reshape((1, c, 1, 1))?;
        let shift = self.shift.as_tensor().reshape((1, c, 1, 1))?;
        Ok(normed.broadcast_mul(&scale)?.broadcast_add(&shift)?)
    }

    /// `names` are the keys used for scale and shift (`alpha_s`/`alpha_b`
    /// in the encoder, `scale`/`shift` elsewhere).
    pub fn visit(&self, prefix: &str, names: [&str; 2], suffix: &str, group: ParamGroup, f: &mut Visitor<'_>) {
        use ParamKind::*;
        let [scale, shift] = names;
        emit(f, format!("{prefix}.{scale}{suffix}"), &self.scale, group, Weight);
        emit(f, format!("{prefix}.{shift}{suffix}"), &self.shift, group, Weight);
        emit(
            f,
            format!("{prefix}.running_mean{suffix}"),
            &self.running_mean,
            group,
            RunningStat,
        );
        emit(
            f,
            format!("{prefix}.running_var{suffix}"),
            &self.running_var,
            group,
            RunningStat,
        );
    }
}

/// Conv weight plus bias, used where no batch norm follows.
#[derive(Clone, Debug)]
pub(crate) struct Conv {
    pub weight: Var,
    pub bias: Var,
}

impl Conv {
    pub fn new(init: &mut Init, c_in: usize, c_out: usize, k: usize) -> Result<Self> {
        Ok(Self {
            weight: init.conv_kernel(c_out, c_in, k)?,
            bias: init.bias(c_out, c_in * k * k)?,
        })
    }

    pub fn new_transpose(init: &mut Init, c_in: usize, c_out: usize, k: usize) -> Result<Self> {
        Ok(Self {
            weight: init.conv_transpose_kernel(c_in, c_out, k)?,
            bias: init.bias(c_out, c_in * k * k)?,
        })
    }

    pub fn deep_copy(&self) -> Result<Self> {
        Ok(Self {
            weight: deep_copy(&self.weight)?,
            bias: deep_copy(&self.bias)?,
        })
    }

    pub fn forward(&self, xs: &Tensor, padding: usize, stride: usize) -> Result<Tensor> {
        let ys = xs.conv2d(self.weight.as_tensor(), padding, stride, 1, 1)?;
        self.add_bias(&ys)
    }

    pub fn forward_transpose(
        &self,
        xs: &Tensor,
        padding: usize,
        output_padding: usize,
        stride: usize,
    ) -> Result<Tensor> {
        let ys = xs.conv_transpose2d(self.weight.as_tensor(), padding, output_padding, stride, 1)?;
        self.add_bias(&ys)
    }

    fn add_bias(&self, ys: &Tensor) -> Result<Tensor> {
        let c = self.bias.dim(0)?;
        Ok(ys.broadcast_add(&self.bias.as_tensor().reshape((1, c, 1, 1))?)?)
    }

    pub fn visit(&self, prefix: &str, group: ParamGroup, f: &mut Visitor<'_>) {
        emit(f, format!("{prefix}.weight"), &self.weight, group, ParamKind::Weight);
        emit(f, format!("{prefix}.bias"), &self.bias, group, ParamKind::Weight);
    }
}
