//! The two synthetic crack domains used for desk-scale adaptation.
//!
//! ```text
//! cargo run --release --example synth_domains -- [out_dir]
//! ```
//!
//! Prints per-domain statistics. With `out_dir`, also writes the first
//! images and masks of each domain as PNG files.

use adaptseg::data::{generate_synthetic_domain, Domain, DomainSample, SynthDomainParams};
use image::{GrayImage, RgbImage};

fn mean_intensity(s: &DomainSample) -> f32 {
    s.image.iter().sum::<f32>() / s.image.len() as f32
}

fn save(sample: &DomainSample, dir: &std::path::Path, name: &str) -> image::ImageResult<()> {
    let (h, w) = (sample.height, sample.width);
    let rgb = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        image::Rgb(std::array::from_fn(|c| {
            (sample.image[c * h * w + i] * 255.0).round() as u8
        }))
    });
    rgb.save(dir.join(format!("{name}.png")))?;
    let label = sample.label.as_ref().expect("synthetic samples are labeled");
    let mask = GrayImage::from_fn(w as u32, h as u32, |x, y| {
        image::Luma([label[y as usize * w + x as usize] * 255])
    });
    mask.save(dir.join(format!("{name}_mask.png")))
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map(std::path::PathBuf::from);
    let presets = [
        ("domain A", SynthDomainParams::domain_a(128, 1), Domain::Source),
        ("domain B", SynthDomainParams::domain_b(128, 2), Domain::Target),
    ];
    for (name, params, domain) in presets {
        let data = generate_synthetic_domain(&params, 16, domain)?;
        let brightness: f32 = data.samples.iter().map(mean_intensity).sum::<f32>() / data.samples.len() as f32;
        println!(
            "{name}: contrast {:.2}, texture amplitude {:.2}, crack width {:.1} px, shadow {:.2}",
            params.contrast, params.texture_amplitude, params.crack_width_px, params.shadow_strength
        );
        println!(
            "  {} images, mean crack fraction {:.2}%, mean intensity {brightness:.3}",
            data.samples.len(),
            100.0 * data.mean_crack_fraction()
        );
        if let Some(dir) = &out {
            std::fs::create_dir_all(dir)?;
            for (i, s) in data.samples.iter().take(4).enumerate() {
                save(s, dir, &format!("{}_{i}", name.replace(' ', "_")))?;
            }
        }
    }
    Ok(())
}
