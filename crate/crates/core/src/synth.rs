//! Synthetic "bright disc on dark ground" scenes with exact ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::RasterImage;
use crate::pipeline::SaliencyMap;

#[derive(Clone, Debug)]
pub struct DiscScene {
    pub image: RasterImage,
    /// 1 inside the disc, 0 elsewhere.
    pub ground_truth: SaliencyMap,
}

/// A `width × height` scene with one bright, colored disc on a dark textured
/// background. The disc stays clear of the border and covers well under
/// half of the image.
pub fn disc_scene(width: usize, height: usize, seed: u64) -> DiscScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = width.min(height) as f64;
    let radius = side * rng.gen_range(0.15..0.28);
    let margin = radius + side * 0.08;
    let cx = rng.gen_range(margin..(width as f64 - margin).max(margin + 1e-9));
    let cy = rng.gen_range(margin..(height as f64 - margin).max(margin + 1e-9));
    let ground: [f64; 3] = [
        rng.gen_range(0.05..0.3),
        rng.gen_range(0.05..0.3),
        rng.gen_range(0.05..0.3),
    ];
    let disc = [
        rng.gen_range(0.6..0.95),
        rng.gen_range(0.3..0.95),
        rng.gen_range(0.1..0.6),
    ];
    let noise: f64 = 0.04;

    let mut inside = Vec::with_capacity(width * height);
    let mut data = Vec::with_capacity(width * height * 3);
    for y in 0..height {
        for x in 0..width {
            let dx = x as f64 + 0.5 - cx;
            let dy = y as f64 + 0.5 - cy;
            let is_in = dx * dx + dy * dy <= radius * radius;
            inside.push(if is_in { 1.0 } else { 0.0 });
            let base = if is_in { disc } else { ground };
            for c in base {
                data.push((c + rng.gen_range(-noise..noise)).clamp(0.0, 1.0));
            }
        }
    }
    DiscScene {
        image: RasterImage::new(width, height, 3, data).expect("scene values are clamped"),
        ground_truth: SaliencyMap::new(width, height, inside).expect("mask is binary"),
    }
}

/// Mean over a `k × k` window (k odd), with the window clipped at the border.
pub fn box_blur(map: &SaliencyMap, k: usize) -> SaliencyMap {
    let (w, h) = (map.width(), map.height());
    let r = (k / 2) as i64;
    let v = map.values();
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let (mut sum, mut count) = (0.0, 0usize);
            for yy in (y - r).max(0)..=(y + r).min(h as i64 - 1) {
                for xx in (x - r).max(0)..=(x + r).min(w as i64 - 1) {
                    sum += v[yy as usize * w + xx as usize];
                    count += 1;
                }
            }
            out.push((sum / count as f64).clamp(0.0, 1.0));
        }
    }
    SaliencyMap::new(w, h, out).expect("averages of [0,1] values stay in range")
}

/// A smooth center-bias map, peaking at 1 in the middle of the image.
pub fn center_prior(width: usize, height: usize) -> SaliencyMap {
    let sigma2 = 2.0 * (0.25f64).powi(2);
    let values = (0..height)
        .flat_map(|y| {
            (0..width).map(move |x| {
                let u = (x as f64 + 0.5) / width as f64 - 0.5;
                let v = (y as f64 + 0.5) / height as f64 - 0.5;
                (-(u * u + v * v) / sigma2).exp()
            })
        })
        .collect();
    SaliencyMap::new(width, height, values).expect("gaussian values lie in (0, 1]")
}
