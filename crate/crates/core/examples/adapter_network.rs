//! Shared/domain-specific encoder, per-domain decoders and the domain
//! discriminator, before and after a second domain is registered.
//!
//! ```text
//! cargo run --release --example adapter_network
//! ```

use adaptseg::net::{ArchConfig, DomainId, ModelBundle, ParamGroup, Phase};
use candle_core::{Device, Tensor};

fn counts(bundle: &ModelBundle) {
    let mut groups: Vec<ParamGroup> = bundle.params().iter().map(|p| p.group).collect();
    groups.sort();
    groups.dedup();
    for g in groups {
        let trainable = if bundle.is_trainable(g) { "trainable" } else { "frozen" };
        println!(
            "  {:<8}{:>10} weights  {trainable}",
            g.to_string(),
            bundle.param_count(|x| x == g)
        );
    }
}

fn main() -> adaptseg::Result<()> {
    let arch = ArchConfig::default();
    let mut bundle = ModelBundle::build(&arch, 1, 0)?;
    println!(
        "input {}x{}, output stride {}, feature channels {}",
        arch.input_height,
        arch.input_width,
        arch.output_stride(),
        arch.feature_channels()
    );
    println!("step 1:");
    counts(&bundle);

    bundle.add_domain()?;
    bundle.set_trainability(Phase::Step2)?;
    println!("step 2 (domain 2 copied from domain 1, step-1 model snapshotted):");
    counts(&bundle);

    let x = Tensor::rand(0f32, 1f32, (2, 3, arch.input_height, arch.input_width), &Device::Cpu)?;
    let f = bundle.forward_encoder(&x, DomainId::TARGET, false)?;
    let logits = bundle.forward_decoder(&f, DomainId::TARGET, false)?;
    let domain_logit = bundle.forward_discriminator(&f)?;
    println!(
        "features {:?}, logits {:?}, domain logit {:?}",
        f.dims(),
        logits.dims(),
        domain_logit.dims()
    );

    let same = (bundle.predict(&x, DomainId::SOURCE)? - bundle.predict(&x, DomainId::TARGET)?)?
        .abs()?
        .max_all()?
        .to_scalar::<f32>()?;
    println!("max |domain 1 - domain 2| right after copy-init: {same}");
    Ok(())
}
