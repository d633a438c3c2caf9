//! Saving and reloading a step-2 bundle, including the frozen step-1 snapshot.
//!
//! ```text
//! cargo run --example checkpoint_roundtrip
//! ```

use adaptseg::net::checkpoint::{self, CheckpointMeta};
use adaptseg::net::{ArchConfig, DomainId, ModelBundle, Phase};
use candle_core::{Device, Tensor};

fn main() -> adaptseg::Result<()> {
    let arch = ArchConfig::desk_scale().with_input_size(32, 32);
    let mut bundle = ModelBundle::build(&arch, 1, 11)?;
    bundle.add_domain()?;
    bundle.set_trainability(Phase::Step2)?;

    let path = std::env::temp_dir().join("adaptseg_roundtrip.safetensors");
    let meta = CheckpointMeta::for_bundle(&bundle, 2, 0, Vec::new());
    checkpoint::save(&bundle, &meta, &path)?;
    let (loaded, loaded_meta) = checkpoint::load(&path)?;

    let x = Tensor::rand(0f32, 1f32, (2, 3, 32, 32), &Device::Cpu)?;
    for domain in [DomainId::SOURCE, DomainId::TARGET] {
        let diff = (bundle.predict(&x, domain)? - loaded.predict(&x, domain)?)?
            .abs()?
            .max_all()?
            .to_scalar::<f32>()?;
        println!("{domain}: max |before - after| = {diff}");
    }
    println!(
        "phase {:?}, domains {:?}, frozen snapshot {}, {} arrays, drift vs snapshot: {:?}",
        loaded_meta.phase,
        loaded_meta.registered_domains,
        loaded_meta.has_frozen_m1,
        bundle.state_dict()?.len(),
        loaded.frozen_mismatches()?
    );
    Ok(())
}
