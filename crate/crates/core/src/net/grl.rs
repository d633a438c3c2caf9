//! Gradient reversal layer.

use candle_core::{CpuStorage, CustomOp1, Layout, Shape, Tensor, WithDType};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scale applied (negated) to gradients flowing back through the layer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrlConfig {
    lambda: f64,
}

impl GrlConfig {
    pub fn new(lambda: f64) -> Result<Self> {
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(Error::config(format!(
                "GRL lambda must be finite and >= 0, got {lambda}"
            )));
        }
        Ok(Self { lambda })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

struct GradientReversal {
    lambda: f64,
}

fn copy_strided<T: WithDType>(data: &[T], layout: &Layout) -> Vec<T> {
    match layout.contiguous_offsets() {
        Some((start, end)) => data[start..end].to_vec(),
        None => {
            let dims = layout.dims();
            let stride = layout.stride();
            let n: usize = dims.iter().product();
            let mut out = Vec::with_capacity(n);
            let mut idx = vec![0usize; dims.len()];
            for _ in 0..n {
                let offset: usize = layout.start_offset() + idx.iter().zip(stride).map(|(i, s)| i * s).sum::<usize>();
                out.push(data[offset]);
                for d in (0..dims.len()).rev() {
                    idx[d] += 1;
                    if idx[d] < dims[d] {
                        break;
                    }
                    idx[d] = 0;
                }
            }
            out
        }
    }
}

impl CustomOp1 for GradientReversal {
    fn name(&self) -> &'static str {
        "gradient-reversal"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let out = match storage {
            CpuStorage::F32(d) => CpuStorage::F32(copy_strided(d, layout)),
            CpuStorage::F64(d) => CpuStorage::F64(copy_strided(d, layout)),
            CpuStorage::F16(d) => CpuStorage::F16(copy_strided(d, layout)),
            CpuStorage::BF16(d) => CpuStorage::BF16(copy_strided(d, layout)),
            _ => candle_core::bail!("gradient reversal expects a float tensor"),
        };
        Ok((out, layout.shape().clone()))
    }

    fn bwd(&self, _arg: &Tensor, _res: &Tensor, grad_res: &Tensor) -> candle_core::Result<Option<Tensor>> {
        Ok(Some((grad_res * -self.lambda)?))
    }
}

/// Identity in the forward pass; multiplies the incoming gradient by
/// `-lambda` in the backward pass.
pub fn grl_apply(features: &Tensor, grl: &GrlConfig) -> Result<Tensor> {
    Ok(features.apply_op1(GradientReversal { lambda: grl.lambda })?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device, Var};

    fn input() -> Var {
        let data: Vec<f32> = (0..24).map(|i| (i as f32 * 0.37).sin()).collect();
        Var::from_tensor(&Tensor::from_vec(data, (2, 3, 2, 2), &Device::Cpu).unwrap()).unwrap()
    }

    #[test]
    fn forward_is_bitwise_identity() {
        let x = input();
        let y = grl_apply(x.as_tensor(), &GrlConfig::new(0.7).unwrap()).unwrap();
        let a: Vec<f32> = x.flatten_all().unwrap().to_vec1().unwrap();
        let b: Vec<f32> = y.flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn forward_handles_strided_views() {
        let x = input();
        let t = x.as_tensor().transpose(2, 3).unwrap();
        let y = grl_apply(&t, &GrlConfig::new(1.0).unwrap()).unwrap();
        let a: Vec<f32> = t.flatten_all().unwrap().to_vec1().unwrap();
        let b: Vec<f32> = y.flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(a, b);
    }

    fn grad_through(lambda: f64, upstream: &Tensor) -> Tensor {
        let x = input();
        let y = grl_apply(x.as_tensor(), &GrlConfig::new(lambda).unwrap()).unwrap();
        let loss = (y * upstream).unwrap().sum_all().unwrap();
        let grads = loss.backward().unwrap();
        grads.get(x.as_tensor()).unwrap().clone()
    }

    #[test]
    fn backward_scales_by_negative_lambda() {
        let g = Tensor::ones((2, 3, 2, 2), DType::F32, &Device::Cpu).unwrap();
        let got: Vec<f32> = grad_through(0.5, &g).flatten_all().unwrap().to_vec1().unwrap();
        assert!(got.iter().all(|&v| v == -0.5));
    }

    #[test]
    fn zero_lambda_blocks_gradient() {
        let g = Tensor::ones((2, 3, 2, 2), DType::F32, &Device::Cpu).unwrap();
        let got: Vec<f32> = grad_through(0.0, &g).flatten_all().unwrap().to_vec1().unwrap();
        assert!(got.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_negative_lambda() {
        assert!(GrlConfig::new(-0.1).is_err());
        assert!(GrlConfig::new(f64::NAN).is_err());
    }
}
