//! Superpixel adjacency graph: RBF affinities restricted to spatial
//! neighbors, the full RBF Gram matrix, and the unnormalized Laplacian.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::slic::SuperpixelSegmentation;

/// `exp(-‖xi − xj‖² / rho)`.
pub fn rbf_kernel(xi: &[f64], xj: &[f64], rho: f64) -> Result<f64> {
    if xi.len() != xj.len() {
        return Err(Error::Shape(format!(
            "feature dimensions differ: {} vs {}",
            xi.len(),
            xj.len()
        )));
    }
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::InvalidInput(format!("kernel scale must be positive, got {rho}")));
    }
    if xi.iter().chain(xj).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite feature value".into()));
    }
    Ok(rbf_unchecked(xi, xj, rho))
}

#[inline]
pub(crate) fn rbf_unchecked(xi: &[f64], xj: &[f64], rho: f64) -> f64 {
    let d2: f64 = xi.iter().zip(xj).map(|(a, b)| (a - b) * (a - b)).sum();
    (-d2 / rho).exp()
}

/// Unordered pairs `(i, j)`, `i < j`, of labels whose pixels 4-neighbor.
pub fn build_adjacency(labels: &[u32], width: usize, height: usize) -> BTreeSet<(usize, usize)> {
    let mut pairs = BTreeSet::new();
    let mut add = |a: u32, b: u32| {
        if a != b {
            let (a, b) = (a.min(b) as usize, a.max(b) as usize);
            pairs.insert((a, b));
        }
    };
    for y in 0..height {
        for x in 0..width {
            let l = labels[y * width + x];
            if x + 1 < width {
                add(l, labels[y * width + x + 1]);
            }
            if y + 1 < height {
                add(l, labels[(y + 1) * width + x]);
            }
        }
    }
    pairs
}

/// Dense affinity, Gram and Laplacian matrices over `n` superpixels.
#[derive(Clone, Debug)]
pub struct SuperpixelGraph {
    features: Vec<Vec<f64>>,
    affinity: DMatrix<f64>,
    gram: DMatrix<f64>,
    laplacian: DMatrix<f64>,
    rho: f64,
}

impl SuperpixelGraph {
    /// Builds `W` (RBF on adjacent pairs, zero elsewhere and on the diagonal),
    /// the full Gram matrix `K`, and `L = D − W`.
    pub fn build<F: AsRef<[f64]>>(
        features: &[F],
        adjacency: &BTreeSet<(usize, usize)>,
        rho: f64,
    ) -> Result<Self> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::InvalidInput(format!("kernel scale must be positive, got {rho}")));
        }
        let n = features.len();
        if n == 0 {
            return Err(Error::InvalidInput("graph needs at least one node".into()));
        }
        let dim = features[0].as_ref().len();
        let features: Vec<Vec<f64>> = features.iter().map(|f| f.as_ref().to_vec()).collect();
        for f in &features {
            if f.len() != dim {
                return Err(Error::Shape("features have differing dimensions".into()));
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput("non-finite feature value".into()));
            }
        }

        let mut gram = DMatrix::zeros(n, n);
        for i in 0..n {
            gram[(i, i)] = 1.0;
            for j in i + 1..n {
                let k = rbf_unchecked(&features[i], &features[j], rho);
                gram[(i, j)] = k;
                gram[(j, i)] = k;
            }
        }

        let mut affinity = DMatrix::zeros(n, n);
        for &(i, j) in adjacency {
            if i >= n || j >= n {
                return Err(Error::Shape(format!("adjacency pair ({i},{j}) outside {n} nodes")));
            }
            if i != j {
                affinity[(i, j)] = gram[(i, j)];
                affinity[(j, i)] = gram[(i, j)];
            }
        }

        let mut laplacian = -affinity.clone();
        for i in 0..n {
            laplacian[(i, i)] = affinity.row(i).sum();
        }

        Ok(Self {
            features,
            affinity,
            gram,
            laplacian,
            rho,
        })
    }

    /// Graph over the superpixels of a segmentation.
    pub fn from_segmentation(seg: &SuperpixelSegmentation, rho: f64) -> Result<Self> {
        let adjacency = build_adjacency(seg.labels(), seg.width(), seg.height());
        Self::build(seg.features(), &adjacency, rho)
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    /// `W`.
    pub fn affinity(&self) -> &DMatrix<f64> {
        &self.affinity
    }

    /// `K`.
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// `L = D − W`.
    pub fn laplacian(&self) -> &DMatrix<f64> {
        &self.laplacian
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }
}

/// Comma-separated rows, full precision.
pub fn matrix_to_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::with_capacity(m.nrows() * m.ncols() * 12);
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{}", m[(i, j)]);
        }
        out.push('\n');
    }
    out
}
