mod common;

use std::path::Path;

use adaptseg::data::{generate_synthetic_domain, load_tree, make_splits, Domain, SynthDomainParams};
use adaptseg::metrics::evaluate;
use adaptseg::net::{DomainId, ModelBundle};
use common::*;
use image::{GrayImage, RgbImage};

fn write_sub_dataset(root: &Path, name: &str, n: usize) {
    let images = root.join(name).join("images");
    let masks = root.join(name).join("masks");
    std::fs::create_dir_all(&images).unwrap();
    std::fs::create_dir_all(&masks).unwrap();
    for i in 0..n {
        // Distinct pixels keep the duplicate-image check quiet.
        let img = RgbImage::from_fn(4, 4, |x, y| {
            image::Rgb([(i % 256) as u8, (i / 256) as u8, (x + 4 * y) as u8])
        });
        img.save(images.join(format!("{i:04}.png"))).unwrap();
        GrayImage::new(4, 4).save(masks.join(format!("{i:04}.png"))).unwrap();
    }
}

#[test]
fn catalog_with_table_one_sizes() {
    let dir = tempfile::tempdir().unwrap();
    write_sub_dataset(dir.path(), "volker", 427);
    write_sub_dataset(dir.path(), "deepcrack", 443);
    let catalog = load_tree(dir.path()).unwrap();
    let counts: Vec<(&str, usize)> = catalog.entries.iter().map(|e| (e.name.as_str(), e.len())).collect();
    assert_eq!(counts, vec![("deepcrack", 443), ("volker", 427)]);

    let spec = make_splits(&catalog, Some("volker"), 7).unwrap();
    assert_eq!(spec.parts.len(), 1);
    assert_eq!((spec.train_count(), spec.val_count()), (355, 88));
    assert_eq!(spec.target_ids.len(), 427);
}

#[test]
fn synthetic_crack_fraction_stays_in_envelope() {
    let params = SynthDomainParams::domain_a(256, 21);
    assert_eq!(params.crack_width_px, 3.0);
    assert_eq!(params.crack_count, 2);
    let data = generate_synthetic_domain(&params, 16, Domain::Source).unwrap();
    let f = data.mean_crack_fraction();
    assert!((0.005..=0.08).contains(&f), "crack fraction {f}");
}

#[test]
fn duplicated_samples_do_not_change_miou() {
    let bundle = ModelBundle::build(&tiny_arch(), 1, 2).unwrap();
    let one = domain_a(1, 4);
    let many: Vec<_> = std::iter::repeat_n(one[0].clone(), 5).collect();
    let a = evaluate(&bundle, &one, DomainId::SOURCE, "one").unwrap();
    let b = evaluate(&bundle, &many, DomainId::SOURCE, "many").unwrap();
    assert_eq!(a.miou, b.miou);
    assert_eq!(b.images, 5);
}

#[test]
fn unlabeled_samples_are_skipped_and_counted() {
    let bundle = ModelBundle::build(&tiny_arch(), 1, 2).unwrap();
    let mut samples = domain_a(3, 5);
    samples[1].label = None;
    let m = evaluate(&bundle, &samples, DomainId::SOURCE, "mixed").unwrap();
    assert_eq!(m.images, 2);
    assert_eq!(m.skipped_unlabeled, 1);
}

#[test]
fn random_weights_give_a_low_but_valid_miou() {
    let bundle = ModelBundle::build(&tiny_arch(), 1, 3).unwrap();
    let m = evaluate(&bundle, &domain_a(16, 6), DomainId::SOURCE, "random").unwrap();
    println!("random-weight mIoU {:.4}", m.miou);
    assert!((0.0..=1.0).contains(&m.miou));
}
