//! Which parameter groups each step-2 loss reaches, and what happens when a
//! group that must stay frozen is made trainable.
//!
//! ```text
//! cargo run --release --example routing_check
//! ```

use adaptseg::data::{generate_synthetic_domain, Domain, SynthDomainParams};
use adaptseg::net::{ArchConfig, DomainId, ModelBundle, ParamGroup, Phase};
use adaptseg::train::{gradient_routing_check, TrainConfig};

fn main() -> adaptseg::Result<()> {
    let size = 32;
    let source = generate_synthetic_domain(&SynthDomainParams::domain_a(size, 1), 4, Domain::Source)?.samples;
    let target = generate_synthetic_domain(&SynthDomainParams::domain_b(size, 2), 4, Domain::Target)?.samples;
    let src: Vec<_> = source.iter().collect();
    let tgt: Vec<_> = target.iter().collect();

    let mut bundle = ModelBundle::build(&ArchConfig::desk_scale().with_input_size(size, size), 1, 5)?;
    bundle.add_domain()?;
    bundle.set_trainability(Phase::Step2)?;
    let cfg = TrainConfig::default();

    for lambda in [0.0, 0.5] {
        let r = gradient_routing_check(&bundle, &src, &tgt, &cfg, lambda)?;
        println!("lambda {lambda}: passed {}", r.passed());
        println!("  L_CE reaches  {:?}, applied to {:?}", r.ce_touched, r.applied_ce);
        println!("  L_KLD reaches {:?}, applied to {:?}", r.kld_touched, r.applied_kld);
        println!(
            "  L_BCE reaches {:?}, max |encoder grad| {:.3e}",
            r.bce_touched, r.encoder_bce_max_abs
        );
    }

    bundle.set_group_trainable(ParamGroup::DomainSpecific(DomainId::SOURCE), true);
    let r = gradient_routing_check(&bundle, &src, &tgt, &cfg, 0.5)?;
    println!("with phi_s1 unfrozen: passed {}", r.passed());
    for v in &r.violations {
        println!("  {v}");
    }
    Ok(())
}
