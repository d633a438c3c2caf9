//! The gradient reversal layer: identity forward, gradient scaled by -lambda
//! backward.
//!
//! ```text
//! cargo run --example gradient_reversal
//! ```

use adaptseg::net::{grl_apply, GrlConfig};
use adaptseg::objectives::LambdaSchedule;
use candle_core::{Device, Tensor, Var};

fn main() -> adaptseg::Result<()> {
    let dev = Device::Cpu;
    let w = Var::from_tensor(&Tensor::new(&[0.5f32, -1.0, 2.0], &dev)?)?;
    let head = Tensor::new(&[1.0f32, 3.0, -2.0], &dev)?;

    let plain = (w.as_tensor() * &head)?.sqr()?.sum_all()?;
    let g_plain = plain.backward()?.get(w.as_tensor()).unwrap().to_vec1::<f32>()?;
    println!("without GRL         grad {g_plain:?}");

    for lambda in [0.0, 0.3, 1.0] {
        let reversed = grl_apply(w.as_tensor(), &GrlConfig::new(lambda)?)?;
        let loss = (reversed * &head)?.sqr()?.sum_all()?;
        assert_eq!(loss.to_scalar::<f32>()?, plain.to_scalar::<f32>()?);
        let g = loss.backward()?.get(w.as_tensor()).unwrap().to_vec1::<f32>()?;
        println!("GRL lambda = {lambda:<4}   grad {g:?}");
    }

    let schedule = LambdaSchedule::new(10.0, 150)?;
    let points: Vec<String> = [0, 5, 15, 30, 75, 150]
        .iter()
        .map(|&e| format!("{e}:{:.4}", schedule.lambda_at(e)))
        .collect();
    println!("lambda ramp over 150 epochs (epoch:lambda) {}", points.join("  "));
    Ok(())
}
