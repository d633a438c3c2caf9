//! Desk-scale two-step run: synthetic domain A as source, domain B as target.
//!
//! ```text
//! cargo run --release --example incremental_uda -- [seed] [step1_epochs] [cycles]
//! ```
//!
//! Prints both steps' source and target mIoU and the step-2 epoch log.
//! About five minutes per seed on one CPU core with the defaults.

use std::time::Instant;

use adaptseg::train::desk::{DeskExperiment, DeskScores};

fn line(name: &str, s: &DeskScores) {
    println!(
        "{name}: source mIoU {:.4}  target mIoU {:.4} (background IoU {:.4}, crack IoU {:.4})",
        s.source.miou,
        s.target.miou,
        s.target.iou_background.unwrap_or(f64::NAN),
        s.target.iou_crack.unwrap_or(f64::NAN),
    );
}

fn main() -> adaptseg::Result<()> {
    env_logger::init();
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut exp = DeskExperiment::default();
    let seed = args.first().copied().unwrap_or(0) as u64;
    if let Some(&e) = args.get(1) {
        exp.step1_epochs = e;
    }
    if let Some(&c) = args.get(2) {
        exp.cycles = c;
    }

    let t = Instant::now();
    let out = exp.run(seed)?;
    for e in &out.step2_run.log {
        println!(
            "  cycle {} epoch {:>2} {:<12} l_ce {:>8} l_kld {:>9} l_bce {:>7} lambda {:.3}",
            e.cycle.unwrap_or(0),
            e.epoch,
            format!("{:?}", e.phase),
            e.l_ce.map_or("-".into(), |v| format!("{v:.4}")),
            e.l_kld.map_or("-".into(), |v| format!("{v:.6}")),
            e.l_bce.map_or("-".into(), |v| format!("{v:.4}")),
            e.lambda.unwrap_or(0.0),
        );
    }
    line("step 1", &out.step1);
    line("step 2", &out.step2);
    if let Some(best) = &out.step2_run.best {
        println!("step-2 checkpoint kept from epoch {}", best.epoch);
    }
    println!("seed {seed} finished in {:.1?}", t.elapsed());
    Ok(())
}
