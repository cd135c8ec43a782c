//! Four-stage saliency map generation: DeepMap pooling onto superpixels,
//! boundary-seeded propagation, geometric fusion, and regression refinement.

use crate::config::Config;
use crate::error::{Error, Result};
use crate::graph::SuperpixelGraph;
use crate::image::{srgb_to_lab, RasterImage};
use crate::regression::{solve, RegressionProblem};
use crate::slic::{oversegment, SuperpixelSegmentation};

/// A per-pixel saliency map with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl SaliencyMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || values.len() != width * height {
            return Err(Error::Shape(format!(
                "{}x{} map needs {} values, got {}",
                width,
                height,
                width * height,
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidInput(format!("saliency value {bad} outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn to_raster(&self) -> RasterImage {
        RasterImage::new(self.width, self.height, 1, self.values.clone())
            .expect("saliency values are validated on construction")
    }
}

impl TryFrom<&RasterImage> for SaliencyMap {
    type Error = Error;

    /// Color images are reduced to luma.
    fn try_from(image: &RasterImage) -> Result<Self> {
        let gray = image.to_gray();
        SaliencyMap::new(gray.width(), gray.height(), gray.into_data())
    }
}

/// One score per superpixel, aligned with a [`SuperpixelSegmentation`].
#[derive(Clone, Debug, PartialEq)]
pub struct SuperpixelScores(pub Vec<f64>);

impl SuperpixelScores {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Affine rescale of `values` onto `[lo, hi]`; a constant input maps to the
/// midpoint.
pub fn min_max_rescale(values: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    if !(span > 1e-12 * max.abs().max(min.abs()).max(1.0)) {
        return vec![0.5 * (lo + hi); values.len()];
    }
    values
        .iter()
        .map(|&v| (lo + (v - min) / span * (hi - lo)).clamp(lo, hi))
        .collect()
}

/// Mean of the pixel values inside each superpixel.
pub fn pool_deepmap(map: &SaliencyMap, seg: &SuperpixelSegmentation) -> Result<SuperpixelScores> {
    if map.width != seg.width() || map.height != seg.height() {
        return Err(Error::Shape(format!(
            "map is {}x{} but segmentation is {}x{}",
            map.width,
            map.height,
            seg.width(),
            seg.height()
        )));
    }
    let mut means = vec![0.0; seg.len()];
    for (&l, &v) in seg.labels().iter().zip(&map.values) {
        means[l as usize] += v;
    }
    for (m, &n) in means.iter_mut().zip(seg.sizes()) {
        *m /= n as f64;
    }
    // Corrected two-pass mean; makes constant regions pool back exactly.
    let mut residuals = vec![0.0; seg.len()];
    for (&l, &v) in seg.labels().iter().zip(&map.values) {
        residuals[l as usize] += v - means[l as usize];
    }
    Ok(SuperpixelScores(
        means
            .iter()
            .zip(&residuals)
            .zip(seg.sizes())
            .map(|((m, r), &n)| (m + r / n as f64).clamp(0.0, 1.0))
            .collect(),
    ))
}

/// Propagates a background prior from the image border: border superpixels
/// are seeded with −1, the rest are unlabeled, and the regression output is
/// min–max normalized so that regions resembling the border score low.
pub fn boundary_map(
    graph: &SuperpixelGraph,
    seg: &SuperpixelSegmentation,
    gamma_a: f64,
    gamma_i: f64,
) -> Result<SuperpixelScores> {
    if graph.len() != seg.len() {
        return Err(Error::Shape(format!(
            "graph has {} nodes but segmentation {} superpixels",
            graph.len(),
            seg.len()
        )));
    }
    let seeds: Vec<(usize, f64)> = seg
        .boundary_flags()
        .iter()
        .enumerate()
        .filter(|(_, &b)| b)
        .map(|(i, _)| (i, -1.0))
        .collect();
    if seeds.is_empty() {
        return Err(Error::InvalidInput("segmentation has no border superpixels".into()));
    }
    let problem = RegressionProblem::new(graph, &seeds, gamma_a, gamma_i)?;
    let solution = solve(&problem)?;
    Ok(SuperpixelScores(min_max_rescale(solution.g.as_slice(), 0.0, 1.0)))
}

/// `deep^(1−β) · boundary^β`, elementwise.
pub fn fuse(
    deep: &SuperpixelScores,
    boundary: &SuperpixelScores,
    beta: f64,
) -> Result<SuperpixelScores> {
    if deep.len() != boundary.len() {
        return Err(Error::Shape(format!(
            "fusing {} scores with {}",
            deep.len(),
            boundary.len()
        )));
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::InvalidInput(format!("beta must be in [0, 1], got {beta}")));
    }
    // powf(0, 0) is 1, which is the convention needed at β ∈ {0, 1}.
    Ok(SuperpixelScores(
        deep.0
            .iter()
            .zip(&boundary.0)
            .map(|(&d, &b)| (d.powf(1.0 - beta) * b.powf(beta)).clamp(0.0, 1.0))
            .collect(),
    ))
}

/// Rescales scores to `[−1, 1]`, fits the regression with every superpixel
/// labeled, and rescales the fitted values back to `[0, 1]`.
pub fn refine(
    graph: &SuperpixelGraph,
    cg: &SuperpixelScores,
    gamma_a: f64,
    gamma_i: f64,
) -> Result<SuperpixelScores> {
    if graph.len() != cg.len() {
        return Err(Error::Shape(format!(
            "graph has {} nodes but {} scores were given",
            graph.len(),
            cg.len()
        )));
    }
    let y = min_max_rescale(&cg.0, -1.0, 1.0);
    let problem = RegressionProblem::fully_labeled(graph, y, gamma_a, gamma_i)?;
    let solution = solve(&problem)?;
    Ok(SuperpixelScores(min_max_rescale(solution.g.as_slice(), 0.0, 1.0)))
}

/// Paints each superpixel's score onto its pixels.
pub fn render(scores: &SuperpixelScores, seg: &SuperpixelSegmentation) -> Result<SaliencyMap> {
    if scores.len() != seg.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} superpixels",
            scores.len(),
            seg.len()
        )));
    }
    let values = seg.labels().iter().map(|&l| scores.0[l as usize]).collect();
    SaliencyMap::new(seg.width(), seg.height(), values)
}

/// Pipeline stage boundaries reported to [`run_pipeline_observed`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Lab,
    Segment,
    Graph,
    Pool,
    Boundary,
    Fuse,
    Refine,
    Render,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Lab,
        Stage::Segment,
        Stage::Graph,
        Stage::Pool,
        Stage::Boundary,
        Stage::Fuse,
        Stage::Refine,
        Stage::Render,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Lab => "lab",
            Stage::Segment => "segment",
            Stage::Graph => "graph",
            Stage::Pool => "pool",
            Stage::Boundary => "boundary",
            Stage::Fuse => "fuse",
            Stage::Refine => "refine",
            Stage::Render => "render",
        }
    }
}

/// Every intermediate product of one pipeline run.
#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub segmentation: SuperpixelSegmentation,
    pub graph: SuperpixelGraph,
    pub deep: SuperpixelScores,
    /// `None` when `β = 0`: the boundary prior cannot affect the result, so
    /// its solve is skipped.
    pub boundary: Option<SuperpixelScores>,
    pub coarse: SuperpixelScores,
    pub refined: SuperpixelScores,
    pub map: SaliencyMap,
}

pub fn run_pipeline(
    image: &RasterImage,
    deepmap: &SaliencyMap,
    config: &Config,
) -> Result<PipelineOutput> {
    run_pipeline_observed(image, deepmap, config, |_| {})
}

/// Runs the full pipeline, calling `on_stage` after each stage completes.
pub fn run_pipeline_observed(
    image: &RasterImage,
    deepmap: &SaliencyMap,
    config: &Config,
    mut on_stage: impl FnMut(Stage),
) -> Result<PipelineOutput> {
    if image.width() != deepmap.width || image.height() != deepmap.height {
        return Err(Error::Shape(format!(
            "image is {}x{} but DeepMap is {}x{}",
            image.width(),
            image.height(),
            deepmap.width,
            deepmap.height
        )));
    }
    config.validate()?;
    let lab = srgb_to_lab(&image.to_rgb())?;
    on_stage(Stage::Lab);
    let n_target = config.n_superpixels.min(image.width() * image.height());
    let segmentation = oversegment(&lab, n_target, config.slic_compactness)?;
    on_stage(Stage::Segment);
    let graph = SuperpixelGraph::from_segmentation(&segmentation, config.rho)?;
    on_stage(Stage::Graph);
    let deep = pool_deepmap(deepmap, &segmentation)?;
    on_stage(Stage::Pool);
    let boundary = if config.beta > 0.0 {
        Some(boundary_map(&graph, &segmentation, config.gamma_a, config.gamma_i)?)
    } else {
        None
    };
    on_stage(Stage::Boundary);
    let coarse = match &boundary {
        Some(b) => fuse(&deep, b, config.beta)?,
        None => deep.clone(),
    };
    on_stage(Stage::Fuse);
    let refined = refine(&graph, &coarse, config.gamma_a, config.gamma_i)?;
    on_stage(Stage::Refine);
    let map = render(&refined, &segmentation)?;
    on_stage(Stage::Render);
    Ok(PipelineOutput {
        segmentation,
        graph,
        deep,
        boundary,
        coarse,
        refined,
        map,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::LabImage;

    fn striped_seg() -> SuperpixelSegmentation {
        let lab = LabImage::from_normalized(4, 2, vec![[0.1; 3]; 8]).unwrap();
        SuperpixelSegmentation::from_labels(vec![0, 0, 1, 1, 2, 2, 3, 3], &lab).unwrap()
    }

    #[test]
    fn pooling() {
        let seg = striped_seg();
        let flat = SaliencyMap::new(4, 2, vec![0.7; 8]).unwrap();
        let pooled = pool_deepmap(&flat, &seg).unwrap();
        assert!(pooled.0.iter().all(|&v| (v - 0.7).abs() < 1e-15));

        let one_hot = SaliencyMap::new(4, 2, vec![1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(pool_deepmap(&one_hot, &seg).unwrap().0, vec![1.0, 0.0, 0.0, 0.0]);

        let wrong = SaliencyMap::new(2, 2, vec![0.0; 4]).unwrap();
        assert!(matches!(pool_deepmap(&wrong, &seg), Err(Error::Shape(_))));
    }

    #[test]
    fn fusion_values() {
        let deep = SuperpixelScores(vec![0.9, 0.5, 0.0, 0.3]);
        let boundary = SuperpixelScores(vec![0.4, 0.5, 0.7, 0.0]);
        assert_eq!(fuse(&deep, &boundary, 0.0).unwrap(), deep);
        assert_eq!(fuse(&deep, &boundary, 1.0).unwrap(), boundary);
        let f = fuse(&deep, &boundary, 0.2).unwrap();
        assert!((f.0[0] - 0.9f64.powf(0.8) * 0.4f64.powf(0.2)).abs() < 1e-15);
        assert!((f.0[0] - 0.765_255).abs() < 1e-6);
        for beta in [0.0, 0.3, 0.77, 1.0] {
            let half = fuse(&SuperpixelScores(vec![0.5]), &SuperpixelScores(vec![0.5]), beta);
            assert!((half.unwrap().0[0] - 0.5).abs() < 1e-15);
        }
        assert!(fuse(&deep, &boundary, 1.5).is_err());
    }

    #[test]
    fn render_paints_regions() {
        let seg = striped_seg();
        let map = render(&SuperpixelScores(vec![1.0; 4]), &seg).unwrap();
        assert!(map.values().iter().all(|&v| v == 1.0));
        let s = SuperpixelScores(vec![0.1, 0.9, 0.4, 0.25]);
        let map = render(&s, &seg).unwrap();
        assert_eq!(pool_deepmap(&map, &seg).unwrap(), s);
    }

    #[test]
    fn rescale_degenerate() {
        assert_eq!(min_max_rescale(&[0.3, 0.3], 0.0, 1.0), vec![0.5, 0.5]);
        assert_eq!(min_max_rescale(&[0.3, 0.3], -1.0, 1.0), vec![0.0, 0.0]);
        assert_eq!(min_max_rescale(&[2.0, 4.0, 3.0], -1.0, 1.0), vec![-1.0, 1.0, 0.0]);
    }

    #[test]
    fn single_superpixel_boundary_map_is_half() {
        let lab = LabImage::from_normalized(3, 3, vec![[0.2; 3]; 9]).unwrap();
        let seg = SuperpixelSegmentation::from_labels(vec![0; 9], &lab).unwrap();
        let graph = SuperpixelGraph::from_segmentation(&seg, 0.1).unwrap();
        assert_eq!(boundary_map(&graph, &seg, 1e-6, 1.0).unwrap().0, vec![0.5]);
    }

    #[test]
    fn constant_coarse_map_refines_to_half() {
        let seg = striped_seg();
        let graph = SuperpixelGraph::from_segmentation(&seg, 0.1).unwrap();
        let out = refine(&graph, &SuperpixelScores(vec![0.3; 4]), 1e-6, 1.0).unwrap();
        assert_eq!(out.0, vec![0.5; 4]);
    }
}
