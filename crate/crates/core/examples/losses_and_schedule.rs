//! Segmentation cross-entropy, the KL anchoring term, the domain BCE and the
//! step-2 loss mix.
//!
//! ```text
//! cargo run --example losses_and_schedule
//! ```

use adaptseg::objectives::{
    adversarial_loss, cross_entropy_loss, kld_loss, softmax_probs, total_segmentation_loss, LambdaSchedule, LossWeights,
};
use candle_core::{Device, Tensor};

fn main() -> adaptseg::Result<()> {
    let dev = Device::Cpu;
    // Two images of 1x2 pixels, 2 classes.
    let logits = Tensor::new(&[[[[2.0f32, -1.0]], [[0.0, 1.0]]], [[[0.5, 0.5]], [[-0.5, 3.0]]]], &dev)?;
    let labels = Tensor::new(&[[[0u32, 1]], [[1, 1]]], &dev)?;
    let ce = cross_entropy_loss(&logits, &labels)?.to_scalar::<f32>()?;

    let p2 = softmax_probs(&logits)?;
    let p1 = softmax_probs(&(&logits * 0.5)?)?;
    let kld = kld_loss(&p2, &p1)?.to_scalar::<f32>()?;
    let kld_self = kld_loss(&p2, &p2)?.to_scalar::<f32>()?;

    let domain_logits = Tensor::new(&[-2.0f32, 0.3, 1.5, 0.0], &dev)?;
    let domain_labels = Tensor::new(&[0.0f32, 0.0, 1.0, 1.0], &dev)?;
    let bce = adversarial_loss(&domain_logits, &domain_labels)?.to_scalar::<f32>()?;

    let w = LossWeights::default();
    println!("L_CE  = {ce:.5}");
    println!("L_KLD = {kld:.5}   (identical models: {kld_self})");
    println!("L_BCE = {bce:.5}");
    println!(
        "weighted segmentation loss = {} * L_CE + {} * L_KLD = {:.5}",
        w.lambda_ce,
        w.lambda_kld,
        total_segmentation_loss(ce as f64, kld as f64, &w)
    );

    let schedule = LambdaSchedule::default();
    println!(
        "GRL coefficient, gamma {} over {} epochs:",
        schedule.gamma, schedule.total_epochs
    );
    for epoch in (0..=schedule.total_epochs).step_by(15) {
        println!("  epoch {epoch:>3}  lambda {:.5}", schedule.lambda_at(epoch));
    }
    Ok(())
}
