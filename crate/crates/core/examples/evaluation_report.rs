//! Confusion-matrix mIoU and the three report layouts.
//!
//! ```text
//! cargo run --example evaluation_report
//! ```

use adaptseg::metrics::{build_report, miou, ConfusionMatrix, DatasetMetrics, Layout, RunResults};

fn pool(name: &str, tn: u64, fp: u64, fn_: u64, tp: u64) -> DatasetMetrics {
    let cm = ConfusionMatrix {
        counts: [[tn, fp], [fn_, tp]],
    };
    DatasetMetrics::from_confusion(name, cm, 10).unwrap()
}

fn main() -> adaptseg::Result<()> {
    let mut cm = ConfusionMatrix::new();
    cm.add_pixels(&[0, 0, 1, 1, 0, 1], &[0, 0, 1, 0, 1, 1])?;
    let r = miou(&cm)?;
    println!("counts {:?} -> IoU {:?}, mIoU {:.4}", cm.counts, r.iou, r.miou);

    // Crack appears once in the ground truth and never in the prediction: IoU 0, still averaged.
    let missed_crack = ConfusionMatrix {
        counts: [[3, 0], [1, 0]],
    };
    println!("counts {:?} -> mIoU {}", missed_crack.counts, miou(&missed_crack)?.miou);

    let step = |s: u8, shift: u64| {
        RunResults::new(
            "volker",
            s,
            [
                pool("source", 9000, 150, 120 + shift, 730),
                pool("excluded", 4000, 300 - 4 * shift, 200, 500 + shift),
                pool("buildcrack", 8000, 500 - 4 * shift, 300, 400 + shift),
            ],
        )
    };
    let runs = [step(1, 0), step(2, 40)];
    print!("{}", build_report(&runs, Layout::Table2)?.render_table());

    let mut a = RunResults::new(
        "step2",
        2,
        [pool("source", 900, 20, 15, 65), pool("target", 800, 60, 40, 100)],
    );
    let mut b = a.clone();
    b.row = "step2 no KLD".into();
    b.use_kld = false;
    a.row = "step2 full".into();
    let report = build_report(&[a, b], Layout::Table4)?;
    print!("{}", report.render_table());
    print!("{}", report.to_records());
    Ok(())
}
