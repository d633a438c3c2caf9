//! Procedural crack images with exact masks.
//!
//! Each image is rendered from its own RNG stream `(seed, index)`, so the
//! first `k` images of a set do not depend on how many are generated.
//! Render order: textured background, crack strokes, occluding rectangles
//! (which clear the mask underneath), then a soft multiplicative shadow.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Domain, DomainSample};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthDomainParams {
    pub height: usize,
    pub width: usize,
    /// Fractional darkening of crack pixels relative to the background.
    pub contrast: f32,
    /// Correlation length of the background noise, in pixels.
    pub texture_scale: f32,
    /// Peak deviation of the background noise from `base_intensity`.
    pub texture_amplitude: f32,
    pub base_intensity: f32,
    /// Per-channel multiplier applied to the grey background.
    pub tint: [f32; 3],
    pub crack_width_px: f32,
    pub crack_count: usize,
    /// Target fraction of the image covered by occluders.
    pub occlusion_rate: f32,
    /// Darkening inside the shadowed half-plane; 0 disables shadows.
    pub shadow_strength: f32,
    pub seed: u64,
}

impl Default for SynthDomainParams {
    fn default() -> Self {
        Self::domain_a(256, 0)
    }
}

impl SynthDomainParams {
    fn scaled_width(base: f32, height: usize) -> f32 {
        (base * height as f32 / 256.0).max(3.0)
    }

    /// Smooth bright concrete with thin high-contrast cracks.
    pub fn domain_a(size: usize, seed: u64) -> Self {
        Self {
            height: size,
            width: size,
            contrast: 0.7,
            texture_scale: size as f32 / 4.0,
            texture_amplitude: 0.05,
            base_intensity: 0.72,
            tint: [1.0, 0.97, 0.92],
            crack_width_px: Self::scaled_width(3.0, size),
            crack_count: 2,
            occlusion_rate: 0.0,
            shadow_strength: 0.0,
            seed,
        }
    }

    /// Darker, grainy surface with faint cracks, occluders and shadows.
    pub fn domain_b(size: usize, seed: u64) -> Self {
        Self {
            height: size,
            width: size,
            contrast: 0.35,
            texture_scale: (size as f32 / 40.0).max(1.5),
            texture_amplitude: 0.14,
            base_intensity: 0.5,
            tint: [0.9, 0.95, 1.0],
            crack_width_px: Self::scaled_width(3.0, size),
            crack_count: 2,
            occlusion_rate: 0.04,
            shadow_strength: 0.45,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f32| (0.0..=1.0).contains(&v);
        if self.height == 0 || self.width == 0 {
            return Err(Error::config("synthetic image size must be positive"));
        }
        if !unit(self.contrast) || !unit(self.occlusion_rate) || !unit(self.shadow_strength) {
            return Err(Error::config(
                "contrast, occlusion_rate and shadow_strength must lie in [0, 1]",
            ));
        }
        if self.texture_scale.is_nan()
            || self.texture_scale < 1.0
            || self.crack_width_px.is_nan()
            || self.crack_width_px <= 0.0
        {
            return Err(Error::config("texture_scale must be >= 1 and crack_width_px > 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthDataset {
    pub samples: Vec<DomainSample>,
    pub crack_fractions: Vec<f64>,
}

impl SynthDataset {
    pub fn mean_crack_fraction(&self) -> f64 {
        self.crack_fractions.iter().sum::<f64>() / self.crack_fractions.len().max(1) as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum CrackPaint {
    Darken,
    #[cfg_attr(not(test), allow(dead_code))]
    Solid([f32; 3]),
}

pub fn generate_synthetic_domain(params: &SynthDomainParams, n: usize, domain: Domain) -> Result<SynthDataset> {
    params.validate()?;
    if n == 0 {
        return Err(Error::config("synthetic dataset size must be at least 1"));
    }
    let tag = format!("synth{}", params.seed);
    let samples: Vec<DomainSample> = (0..n)
        .map(|i| {
            let (image, label) = render(params, i, CrackPaint::Darken);
            DomainSample {
                image,
                label: Some(label),
                height: params.height,
                width: params.width,
                sub_dataset: tag.clone(),
                stem: format!("{i:05}"),
                domain,
            }
        })
        .collect();
    let crack_fractions = samples.iter().map(|s| s.crack_fraction().unwrap_or(0.0)).collect();
    Ok(SynthDataset {
        samples,
        crack_fractions,
    })
}

struct ValueNoise {
    grid: Vec<f32>,
    cols: usize,
    scale: f32,
}

impl ValueNoise {
    fn new(rng: &mut ChaCha8Rng, h: usize, w: usize, scale: f32) -> Self {
        let cols = (w as f32 / scale).ceil() as usize + 2;
        let rows = (h as f32 / scale).ceil() as usize + 2;
        let grid = (0..rows * cols).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        Self { grid, cols, scale }
    }

    fn at(&self, y: usize, x: usize) -> f32 {
        let fy = y as f32 / self.scale;
        let fx = x as f32 / self.scale;
        let (gy, gx) = (fy.floor() as usize, fx.floor() as usize);
        let smooth = |t: f32| t * t * (3.0 - 2.0 * t);
        let (ty, tx) = (smooth(fy.fract()), smooth(fx.fract()));
        let g = |r: usize, c: usize| self.grid[r * self.cols + c];
        let top = g(gy, gx) * (1.0 - tx) + g(gy, gx + 1) * tx;
        let bottom = g(gy + 1, gx) * (1.0 - tx) + g(gy + 1, gx + 1) * tx;
        top * (1.0 - ty) + bottom * ty
    }
}

fn segment_distance(p: (f32, f32), a: (f32, f32), b: (f32, f32)) -> f32 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt()
}

fn random_walk(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Vec<(f32, f32)> {
    let span = h.max(w) as f32;
    let step = (span / 24.0).max(2.0);
    let length = rng.random_range(0.5f32..1.0) * span;
    let mut heading = rng.random_range(0.0f32..std::f32::consts::TAU);
    let mut p = (rng.random_range(0.0..w as f32), rng.random_range(0.0..h as f32));
    let mut points = vec![p];
    let mut walked = 0.0;
    while walked < length {
        heading += rng.random_range(-0.45f32..0.45);
        p = (p.0 + step * heading.cos(), p.1 + step * heading.sin());
        points.push(p);
        walked += step;
    }
    points
}

/// Returns channel-major pixels and the row-major mask of image `index`.
pub(crate) fn render(params: &SynthDomainParams, index: usize, paint: CrackPaint) -> (Vec<f32>, Vec<u8>) {
    let (h, w) = (params.height, params.width);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(index as u64);

    let coarse = ValueNoise::new(&mut rng, h, w, params.texture_scale);
    let fine = ValueNoise::new(&mut rng, h, w, (params.texture_scale / 4.0).max(1.0));
    let mut image = vec![0f32; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let grey = params.base_intensity + params.texture_amplitude * (0.7 * coarse.at(y, x) + 0.3 * fine.at(y, x));
            for c in 0..3 {
                image[c * h * w + y * w + x] = grey * params.tint[c];
            }
        }
    }

    let mut mask = vec![0u8; h * w];
    let radius = params.crack_width_px / 2.0;
    for _ in 0..params.crack_count {
        let points = random_walk(&mut rng, h, w);
        for seg in points.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            let x0 = (a.0.min(b.0) - radius).floor().max(0.0) as usize;
            let x1 = ((a.0.max(b.0) + radius).ceil().max(0.0) as usize).min(w);
            let y0 = (a.1.min(b.1) - radius).floor().max(0.0) as usize;
            let y1 = ((a.1.max(b.1) + radius).ceil().max(0.0) as usize).min(h);
            for y in y0..y1 {
                for x in x0..x1 {
                    let centre = (x as f32 + 0.5, y as f32 + 0.5);
                    if segment_distance(centre, a, b) <= radius {
                        mask[y * w + x] = 1;
                    }
                }
            }
        }
    }
    for (at, &m) in mask.iter().enumerate() {
        if m == 1 {
            for c in 0..3 {
                let v = &mut image[c * h * w + at];
                *v = match paint {
                    CrackPaint::Darken => *v * (1.0 - params.contrast),
                    CrackPaint::Solid(rgb) => rgb[c],
                };
            }
        }
    }

    if params.occlusion_rate > 0.0 {
        let budget = (params.occlusion_rate * (h * w) as f32) as usize;
        let mut covered = vec![false; h * w];
        let mut count = 0;
        for _ in 0..64 {
            if count >= budget {
                break;
            }
            let rh = rng.random_range(h / 10..=h / 5).max(1);
            let rw = rng.random_range(w / 10..=w / 5).max(1);
            let top = rng.random_range(0..h.saturating_sub(rh).max(1));
            let left = rng.random_range(0..w.saturating_sub(rw).max(1));
            let shade = rng.random_range(0.15f32..0.35);
            for y in top..(top + rh).min(h) {
                for x in left..(left + rw).min(w) {
                    let at = y * w + x;
                    if !covered[at] {
                        covered[at] = true;
                        count += 1;
                    }
                    mask[at] = 0;
                    for c in 0..3 {
                        image[c * h * w + at] = shade;
                    }
                }
            }
        }
    }

    if params.shadow_strength > 0.0 {
        let angle = rng.random_range(0.0f32..std::f32::consts::TAU);
        let (nx, ny) = (angle.cos(), angle.sin());
        let offset = rng.random_range(-0.3f32..0.3) * h.max(w) as f32;
        let soft = (h.max(w) as f32 / 16.0).max(1.0);
        let (cx, cy) = (w as f32 / 2.0, h as f32 / 2.0);
        for y in 0..h {
            for x in 0..w {
                let d = (x as f32 - cx) * nx + (y as f32 - cy) * ny - offset;
                let inside = 1.0 / (1.0 + (-d / soft).exp());
                let factor = 1.0 - params.shadow_strength * inside;
                for c in 0..3 {
                    image[c * h * w + y * w + x] *= factor;
                }
            }
        }
    }

    for v in &mut image {
        *v = v.clamp(0.0, 1.0);
    }
    (image, mask)
}
