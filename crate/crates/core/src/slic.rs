//! SLIC oversegmentation: localized k-means in (L, a, b, x, y) followed by
//! connectivity enforcement.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::image::LabImage;

/// Fixed number of assignment/update sweeps.
pub const SLIC_ITERATIONS: usize = 10;

/// Normalized Lab differences are scaled back to the raw CIELab range before
/// entering the SLIC distance so that `compactness` keeps its usual meaning
/// (10 = balanced color/space trade-off).
const COLOR_SCALE: f64 = 100.0;

/// A partition of an image into connected superpixels.
#[derive(Clone, Debug, PartialEq)]
pub struct SuperpixelSegmentation {
    width: usize,
    height: usize,
    labels: Vec<u32>,
    features: Vec<[f64; 3]>,
    sizes: Vec<usize>,
    boundary_flags: Vec<bool>,
}

impl SuperpixelSegmentation {
    /// Builds a segmentation from an arbitrary label map, computing features,
    /// sizes and boundary flags. Labels must cover `0..n` with no gaps.
    pub fn from_labels(labels: Vec<u32>, image: &LabImage) -> Result<Self> {
        let (width, height) = (image.width(), image.height());
        if labels.len() != width * height {
            return Err(Error::Shape(format!(
                "{} labels for a {width}x{height} image",
                labels.len()
            )));
        }
        let n = labels.iter().max().map_or(0, |&m| m as usize + 1);
        let mut sizes = vec![0usize; n];
        for &l in &labels {
            sizes[l as usize] += 1;
        }
        if let Some(empty) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::InvalidInput(format!("label {empty} has no pixels")));
        }
        let features = superpixel_means(&labels, image)?;
        let mut boundary_flags = vec![false; n];
        for y in 0..height {
            for x in 0..width {
                if x == 0 || y == 0 || x + 1 == width || y + 1 == height {
                    boundary_flags[labels[y * width + x] as usize] = true;
                }
            }
        }
        Ok(Self {
            width,
            height,
            labels,
            features,
            sizes,
            boundary_flags,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Number of superpixels.
    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Mean normalized Lab color of each superpixel.
    pub fn features(&self) -> &[[f64; 3]] {
        &self.features
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// `true` for superpixels touching the image border.
    pub fn boundary_flags(&self) -> &[bool] {
        &self.boundary_flags
    }

    /// Number of 4-neighbor pixel pairs with different labels.
    pub fn boundary_length(&self) -> usize {
        let (w, h) = (self.width, self.height);
        let mut count = 0;
        for y in 0..h {
            for x in 0..w {
                let l = self.labels[y * w + x];
                if x + 1 < w && self.labels[y * w + x + 1] != l {
                    count += 1;
                }
                if y + 1 < h && self.labels[(y + 1) * w + x] != l {
                    count += 1;
                }
            }
        }
        count
    }
}

/// Per-region arithmetic mean of the three Lab channels.
pub fn superpixel_means(labels: &[u32], image: &LabImage) -> Result<Vec<[f64; 3]>> {
    if labels.len() != image.pixels().len() {
        return Err(Error::Shape(format!(
            "{} labels for {} pixels",
            labels.len(),
            image.pixels().len()
        )));
    }
    let n = labels.iter().max().map_or(0, |&m| m as usize + 1);
    let mut sums = vec![[0.0f64; 3]; n];
    let mut counts = vec![0usize; n];
    for (&l, p) in labels.iter().zip(image.pixels()) {
        let s = &mut sums[l as usize];
        s[0] += p[0];
        s[1] += p[1];
        s[2] += p[2];
        counts[l as usize] += 1;
    }
    Ok(sums
        .into_iter()
        .zip(counts)
        .map(|(s, c)| {
            if c == 0 {
                [0.0; 3]
            } else {
                let c = c as f64;
                [s[0] / c, s[1] / c, s[2] / c]
            }
        })
        .collect())
}

#[derive(Clone, Copy, Debug)]
struct Center {
    color: [f64; 3],
    x: f64,
    y: f64,
}

/// Chooses an `nx × ny` seeding grid with `nx·ny` close to `n_target`.
fn seed_grid(width: usize, height: usize, n_target: usize) -> (usize, usize) {
    let aspect = width as f64 / height as f64;
    let nx = ((n_target as f64 * aspect).sqrt().ceil() as usize).clamp(1, width);
    let mut ny = ((n_target as f64 / nx as f64).round() as usize).clamp(1, height);
    let mut nx = nx;
    let count = nx * ny;
    if count > 2 * n_target || 2 * count < n_target {
        nx = ((n_target as f64 / ny as f64).round() as usize).clamp(1, width);
        ny = ((n_target as f64 / nx as f64).round() as usize).clamp(1, height);
    }
    (nx, ny)
}

fn gradient(image: &LabImage, x: usize, y: usize) -> f64 {
    let (w, h) = (image.width(), image.height());
    let d = |a: [f64; 3], b: [f64; 3]| {
        (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
    };
    let gx = d(image.get((x + 1).min(w - 1), y), image.get(x.saturating_sub(1), y));
    let gy = d(image.get(x, (y + 1).min(h - 1)), image.get(x, y.saturating_sub(1)));
    gx + gy
}

/// Runs SLIC on a normalized Lab image.
///
/// Centers start on a regular grid, move to the lowest-gradient pixel of
/// their 3×3 neighborhood, then alternate assignment (restricted to a
/// `2S × 2S` window around each center) and mean updates for
/// [`SLIC_ITERATIONS`] sweeps. Disconnected fragments are finally merged into
/// the largest adjacent region (ties go to the smaller label). The procedure
/// is fully deterministic.
pub fn oversegment(
    image: &LabImage,
    n_target: usize,
    compactness: f64,
) -> Result<SuperpixelSegmentation> {
    let (w, h) = (image.width(), image.height());
    let npix = w * h;
    if n_target == 0 || n_target > npix {
        return Err(Error::InvalidInput(format!(
            "superpixel count {n_target} must be in 1..={npix}"
        )));
    }
    if !(compactness > 0.0 && compactness.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "compactness must be positive, got {compactness}"
        )));
    }

    let (nx, ny) = seed_grid(w, h, n_target);
    let step = (npix as f64 / (nx * ny) as f64).sqrt();
    let mut centers: Vec<Center> = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let cx = (i as f64 + 0.5) * w as f64 / nx as f64 - 0.5;
            let cy = (j as f64 + 0.5) * h as f64 / ny as f64 - 0.5;
            let (px, py) = (
                (cx.round().max(0.0) as usize).min(w - 1),
                (cy.round().max(0.0) as usize).min(h - 1),
            );
            // Perturb to the lowest gradient position in the 3x3 neighborhood.
            let mut best = (gradient(image, px, py), px, py);
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (qx, qy) = (px as i64 + dx, py as i64 + dy);
                    if qx < 0 || qy < 0 || qx >= w as i64 || qy >= h as i64 {
                        continue;
                    }
                    let g = gradient(image, qx as usize, qy as usize);
                    if g < best.0 {
                        best = (g, qx as usize, qy as usize);
                    }
                }
            }
            let (x, y) = if best.1 == px && best.2 == py {
                (cx, cy)
            } else {
                (best.1 as f64, best.2 as f64)
            };
            centers.push(Center {
                color: image.get(best.1, best.2),
                x,
                y,
            });
        }
    }

    let spatial_weight = (compactness / step).powi(2);
    let color_weight = COLOR_SCALE * COLOR_SCALE;
    let radius = step.ceil() as i64;
    let mut labels = vec![u32::MAX; npix];
    let mut dist = vec![f64::INFINITY; npix];

    for _ in 0..SLIC_ITERATIONS {
        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        for (k, c) in centers.iter().enumerate() {
            let x0 = (c.x.round() as i64 - radius).max(0) as usize;
            let x1 = ((c.x.round() as i64 + radius).min(w as i64 - 1)) as usize;
            let y0 = (c.y.round() as i64 - radius).max(0) as usize;
            let y1 = ((c.y.round() as i64 + radius).min(h as i64 - 1)) as usize;
            for y in y0..=y1 {
                let row = y * w;
                let dy = y as f64 - c.y;
                for x in x0..=x1 {
                    let p = image.get(x, y);
                    let dc = (p[0] - c.color[0]).powi(2)
                        + (p[1] - c.color[1]).powi(2)
                        + (p[2] - c.color[2]).powi(2);
                    let dx = x as f64 - c.x;
                    let d = color_weight * dc + spatial_weight * (dx * dx + dy * dy);
                    if d < dist[row + x] {
                        dist[row + x] = d;
                        labels[row + x] = k as u32;
                    }
                }
            }
        }

        let mut acc = vec![[0.0f64; 6]; centers.len()];
        for y in 0..h {
            for x in 0..w {
                let l = labels[y * w + x];
                if l == u32::MAX {
                    continue;
                }
                let p = image.get(x, y);
                let a = &mut acc[l as usize];
                a[0] += p[0];
                a[1] += p[1];
                a[2] += p[2];
                a[3] += x as f64;
                a[4] += y as f64;
                a[5] += 1.0;
            }
        }
        for (c, a) in centers.iter_mut().zip(&acc) {
            if a[5] > 0.0 {
                c.color = [a[0] / a[5], a[1] / a[5], a[2] / a[5]];
                c.x = a[3] / a[5];
                c.y = a[4] / a[5];
            }
        }
    }

    // A pixel outside every window can only occur with degenerate grids;
    // give it the nearest center in space.
    for y in 0..h {
        for x in 0..w {
            if labels[y * w + x] == u32::MAX {
                let nearest = centers
                    .iter()
                    .enumerate()
                    .min_by(|(_, a), (_, b)| {
                        let da = (a.x - x as f64).powi(2) + (a.y - y as f64).powi(2);
                        let db = (b.x - x as f64).powi(2) + (b.y - y as f64).powi(2);
                        da.total_cmp(&db)
                    })
                    .map(|(k, _)| k)
                    .unwrap_or(0);
                labels[y * w + x] = nearest as u32;
            }
        }
    }

    let labels = enforce_connectivity(&labels, w, h);
    SuperpixelSegmentation::from_labels(labels, image)
}

/// Keeps the largest 4-connected component of every label and merges the
/// remaining fragments into their largest adjacent region. Output labels are
/// compacted to `0..n` preserving the order of the input labels.
pub fn enforce_connectivity(labels: &[u32], width: usize, height: usize) -> Vec<u32> {
    let npix = width * height;
    let mut comp = vec![usize::MAX; npix];
    let mut comp_label = Vec::new();
    let mut comp_size = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..npix {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = comp_label.len();
        let label = labels[start];
        comp[start] = id;
        queue.push_back(start);
        let mut size = 0;
        while let Some(p) = queue.pop_front() {
            size += 1;
            for q in neighbors4(p, width, height) {
                if comp[q] == usize::MAX && labels[q] == label {
                    comp[q] = id;
                    queue.push_back(q);
                }
            }
        }
        comp_label.push(label);
        comp_size.push(size);
    }

    let n_labels = labels.iter().max().map_or(0, |&m| m as usize + 1);
    let mut keeper = vec![usize::MAX; n_labels];
    for (id, (&l, &s)) in comp_label.iter().zip(&comp_size).enumerate() {
        let k = &mut keeper[l as usize];
        if *k == usize::MAX || s > comp_size[*k] {
            *k = id;
        }
    }

    // Final label of each component; None for orphans not yet merged.
    let mut assigned: Vec<Option<u32>> = comp_label
        .iter()
        .enumerate()
        .map(|(id, &l)| (keeper[l as usize] == id).then_some(l))
        .collect();
    let mut region_size = vec![0usize; n_labels];
    for (id, a) in assigned.iter().enumerate() {
        if let Some(l) = a {
            region_size[*l as usize] += comp_size[id];
        }
    }

    let mut comp_neighbors: Vec<Vec<usize>> = vec![Vec::new(); comp_label.len()];
    for p in 0..npix {
        for q in neighbors4(p, width, height) {
            if comp[p] != comp[q] {
                comp_neighbors[comp[p]].push(comp[q]);
            }
        }
    }
    for n in &mut comp_neighbors {
        n.sort_unstable();
        n.dedup();
    }

    loop {
        let mut progressed = false;
        let mut pending = false;
        for id in 0..assigned.len() {
            if assigned[id].is_some() {
                continue;
            }
            let target = comp_neighbors[id]
                .iter()
                .filter_map(|&nb| assigned[nb])
                .max_by(|&a, &b| {
                    region_size[a as usize]
                        .cmp(&region_size[b as usize])
                        .then(b.cmp(&a))
                });
            match target {
                Some(l) => {
                    assigned[id] = Some(l);
                    region_size[l as usize] += comp_size[id];
                    progressed = true;
                }
                None => pending = true,
            }
        }
        if !pending || !progressed {
            break;
        }
    }

    let mut remap = vec![u32::MAX; n_labels];
    let mut used: Vec<u32> = assigned.iter().flatten().copied().collect();
    used.sort_unstable();
    used.dedup();
    for (new, &old) in used.iter().enumerate() {
        remap[old as usize] = new as u32;
    }
    comp.iter()
        .map(|&c| remap[assigned[c].unwrap_or(comp_label[c]) as usize])
        .collect()
}

pub(crate) fn neighbors4(p: usize, width: usize, height: usize) -> impl Iterator<Item = usize> {
    let (x, y) = (p % width, p / width);
    let left = (x > 0).then(|| p - 1);
    let right = (x + 1 < width).then(|| p + 1);
    let up = (y > 0).then(|| p - width);
    let down = (y + 1 < height).then(|| p + width);
    [left, right, up, down].into_iter().flatten()
}
