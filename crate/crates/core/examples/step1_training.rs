//! Step 1 on synthetic domain A: supervised training of the shared encoder,
//! the domain-1 branch and decoder, keeping the best source-val checkpoint.
//!
//! ```text
//! cargo run --release --example step1_training -- [epochs] [out_dir]
//! ```

use adaptseg::data::{generate_synthetic_domain, Domain, SynthDomainParams};
use adaptseg::net::{checkpoint, ArchConfig, ModelBundle};
use adaptseg::train::{train_step1, SourceSplit, TrainConfig, TrainIo};

fn main() -> adaptseg::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let epochs = args.next().and_then(|a| a.parse().ok()).unwrap_or(4);
    let out = args
        .next()
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("adaptseg_step1"));

    let size = 64;
    let mut train = generate_synthetic_domain(&SynthDomainParams::domain_a(size, 3), 160, Domain::Source)?.samples;
    let val = train.split_off(128);
    let split = SourceSplit { train, val };

    let cfg = TrainConfig {
        step1_epochs: epochs,
        hflip: true,
        ..TrainConfig::default()
    };
    let mut bundle = ModelBundle::build(&ArchConfig::desk_scale().with_input_size(size, size), 1, 0)?;
    let io = TrainIo {
        checkpoint_dir: Some(out.join("checkpoints")),
        log_path: Some(out.join("metrics.jsonl")),
    };
    let outcome = train_step1(&mut bundle, &split, &cfg, &io)?;

    for e in &outcome.log {
        println!(
            "epoch {:>2}  l_ce {:.4}  source-val mIoU {:.4}",
            e.epoch,
            e.l_ce.unwrap_or(0.0),
            e.source_miou.unwrap_or(0.0)
        );
    }
    let best = outcome.best.expect("at least one epoch ran");
    let path = best.path.expect("checkpoint_dir was set");
    let meta = checkpoint::read_meta(&path)?;
    println!(
        "{} optimizer updates; kept epoch {} ({:.4}) at {}, history of {} saves",
        outcome.optimizer_steps,
        best.epoch,
        best.source_miou,
        path.display(),
        meta.metric_history.len()
    );
    Ok(())
}
