#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use saliency_core::image::{srgb_to_lab, LabImage, RasterImage};
use saliency_core::slic::{oversegment, SuperpixelSegmentation};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A few soft color blobs plus pixel noise.
pub fn blob_image(width: usize, height: usize, seed: u64) -> RasterImage {
    let mut r = rng(seed);
    let blobs: Vec<([f64; 2], f64, [f64; 3])> = (0..r.gen_range(2..6))
        .map(|_| {
            (
                [r.gen_range(0.0..width as f64), r.gen_range(0.0..height as f64)],
                r.gen_range(2.0..width.max(height) as f64 / 2.0),
                [r.gen(), r.gen(), r.gen()],
            )
        })
        .collect();
    let base: [f64; 3] = [r.gen(), r.gen(), r.gen()];
    let mut data = Vec::with_capacity(width * height * 3);
    for y in 0..height {
        for x in 0..width {
            let mut px = base;
            for (c, rad, col) in &blobs {
                let d2 = (x as f64 - c[0]).powi(2) + (y as f64 - c[1]).powi(2);
                if d2 < rad * rad {
                    px = *col;
                }
            }
            for v in px {
                data.push((v + r.gen_range(-0.05..0.05)).clamp(0.0, 1.0));
            }
        }
    }
    RasterImage::new(width, height, 3, data).unwrap()
}

pub fn lab(image: &RasterImage) -> LabImage {
    srgb_to_lab(image).unwrap()
}

/// SLIC segmentation of a random blob image with a random superpixel count.
pub fn random_segmentation(seed: u64) -> SuperpixelSegmentation {
    let mut r = rng(seed ^ 0x5eed);
    let (w, h) = (r.gen_range(12..40), r.gen_range(12..40));
    let n = r.gen_range(2..30);
    oversegment(&lab(&blob_image(w, h, seed)), n, 10.0).unwrap()
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0;
        for k in i..=j {
            out[idx[k]] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}
