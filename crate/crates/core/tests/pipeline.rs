mod common;

use std::collections::BTreeSet;

use rand::Rng;
use saliency_core::graph::SuperpixelGraph;
use saliency_core::image::{LabImage, RasterImage};
use saliency_core::metrics::{aggregate, evaluate_pair, BinaryMask, DEFAULT_ETA2};
use saliency_core::pipeline::{
    boundary_map, fuse, pool_deepmap, refine, render, run_pipeline, run_pipeline_observed,
    SaliencyMap, Stage, SuperpixelScores,
};
use saliency_core::slic::{oversegment, SuperpixelSegmentation};
use saliency_core::synth::{box_blur, disc_scene};
use saliency_core::Config;

fn variance(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
}

#[test]
fn pooling_matches_accumulate_oracle() {
    let seg = common::random_segmentation(4);
    let mut r = common::rng(4);
    let values: Vec<f64> = (0..seg.width() * seg.height()).map(|_| r.gen()).collect();
    let map = SaliencyMap::new(seg.width(), seg.height(), values.clone()).unwrap();
    let pooled = pool_deepmap(&map, &seg).unwrap();
    for i in 0..seg.len() {
        let members: Vec<f64> = seg
            .labels()
            .iter()
            .zip(&values)
            .filter(|(&l, _)| l as usize == i)
            .map(|(_, &v)| v)
            .collect();
        let mean = members.iter().sum::<f64>() / members.len() as f64;
        assert!((pooled.0[i] - mean).abs() < 1e-12);
    }
}

#[test]
fn render_then_pool_is_identity() {
    let seg = common::random_segmentation(12);
    let mut r = common::rng(12);
    let scores = SuperpixelScores((0..seg.len()).map(|_| r.gen()).collect());
    let map = render(&scores, &seg).unwrap();
    assert_eq!(pool_deepmap(&map, &seg).unwrap(), scores);
}

#[test]
fn boundary_prior_on_uniform_image() {
    let img = RasterImage::filled(60, 60, 3, 0.4).unwrap();
    let seg = oversegment(&common::lab(&img), 36, 10.0).unwrap();
    let graph = SuperpixelGraph::from_segmentation(&seg, 0.1).unwrap();
    let scores = boundary_map(&graph, &seg, 1e-6, 1.0).unwrap();
    assert!(scores.0.iter().all(|v| (0.0..=1.0).contains(v)));
    let mean_of = |border: bool| {
        let v: Vec<f64> = scores
            .0
            .iter()
            .zip(seg.boundary_flags())
            .filter(|(_, &b)| b == border)
            .map(|(&s, _)| s)
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    assert!(mean_of(true) <= mean_of(false));
}

#[test]
fn single_superpixel_boundary_map_is_half() {
    let lab = LabImage::from_normalized(3, 3, vec![[0.2; 3]; 9]).unwrap();
    let seg = SuperpixelSegmentation::from_labels(vec![0; 9], &lab).unwrap();
    let graph = SuperpixelGraph::from_segmentation(&seg, 0.1).unwrap();
    assert_eq!(boundary_map(&graph, &seg, 1e-6, 1.0).unwrap().0, vec![0.5]);
}

#[test]
fn fusion_is_monotone() {
    let mut r = common::rng(21);
    for _ in 0..500 {
        let beta = r.gen_range(0.01..0.99);
        let (d, b) = (r.gen::<f64>(), r.gen::<f64>());
        let (dd, db) = (r.gen_range(0.0..1.0 - d), r.gen_range(0.0..1.0 - b));
        let at = |d: f64, b: f64| fuse(&SuperpixelScores(vec![d]), &SuperpixelScores(vec![b]), beta).unwrap().0[0];
        assert!(at(d + dd, b) >= at(d, b));
        assert!(at(d, b + db) >= at(d, b));
    }
}

#[test]
fn refinement_without_smoothing_keeps_rank_order() {
    let mut r = common::rng(2);
    let features: Vec<[f64; 3]> = (0..12).map(|_| [r.gen(), r.gen(), r.gen()]).collect();
    let adj: BTreeSet<(usize, usize)> = (1..12).map(|i| (i - 1, i)).collect();
    let graph = SuperpixelGraph::build(&features, &adj, 0.1).unwrap();
    let cg = SuperpixelScores((0..12).map(|_| r.gen()).collect());
    let refined = refine(&graph, &cg, 1e-12, 0.0).unwrap();
    assert_eq!(common::spearman(&refined.0, &cg.0), 1.0);
}

#[test]
fn refinement_shrinks_within_cluster_variance() {
    // Two Lab-distinct blobs: left half dark blue, right half bright yellow.
    let mut r = common::rng(5);
    let img = RasterImage::from_fn(40, 20, 3, |x, _, c| {
        let base = if x < 20 { [0.1, 0.1, 0.6] } else { [0.9, 0.9, 0.2] };
        base[c]
    })
    .unwrap();
    let seg = oversegment(&common::lab(&img), 16, 10.0).unwrap();
    let graph = SuperpixelGraph::from_segmentation(&seg, 0.1).unwrap();
    let left: Vec<bool> = (0..seg.len())
        .map(|i| seg.labels().iter().position(|&l| l as usize == i).unwrap() % 40 < 20)
        .collect();
    let cg = SuperpixelScores(
        left.iter()
            .map(|&l| if l { 0.2 } else { 0.7 } + r.gen_range(-0.15..0.15))
            .collect(),
    );
    let refined = refine(&graph, &cg, 1e-6, 1.0).unwrap();
    for side in [true, false] {
        let pick = |s: &SuperpixelScores| -> Vec<f64> {
            s.0.iter().zip(&left).filter(|(_, &l)| l == side).map(|(&v, _)| v).collect()
        };
        let (before, after) = (variance(&pick(&cg)), variance(&pick(&refined)));
        assert!(after <= before, "side {side}: {after} > {before}");
    }
}

#[test]
fn pipeline_without_fusion_or_smoothing_keeps_deepmap_order() {
    // A 4×4 grid of well-separated random colors keeps the Gram matrix far
    // from singular even with a vanishing ridge term.
    let mut r = common::rng(3);
    let palette: Vec<[f64; 3]> = (0..16).map(|_| [r.gen(), r.gen(), r.gen()]).collect();
    let img = RasterImage::from_fn(48, 48, 3, |x, y, c| palette[(y / 12) * 4 + x / 12][c]).unwrap();
    let deepmap = SaliencyMap::new(48, 48, (0..48 * 48).map(|_| r.gen()).collect()).unwrap();
    let config = Config {
        n_superpixels: 16,
        beta: 0.0,
        gamma_i: 0.0,
        gamma_a: 1e-12,
        ..Config::default()
    };
    let out = run_pipeline(&img, &deepmap, &config).unwrap();
    let rho = common::spearman(&out.refined.0, &out.deep.0);
    assert!((rho - 1.0).abs() < 1e-12, "Spearman {rho}");
    let pixel_rho = common::spearman(out.map.values(), &render(&out.deep, &out.segmentation).unwrap().values().to_vec());
    assert!((pixel_rho - 1.0).abs() < 1e-12);
}

#[test]
fn pipeline_output_in_range_and_deterministic() {
    let scene = disc_scene(50, 40, 8);
    let deepmap = box_blur(&scene.ground_truth, 9);
    let a = run_pipeline(&scene.image, &deepmap, &Config::default()).unwrap();
    let b = run_pipeline(&scene.image, &deepmap, &Config::default()).unwrap();
    assert_eq!(a.map, b.map);
    assert!(a.map.values().iter().all(|v| (0.0..=1.0).contains(v)));
    let mut seen = Vec::new();
    run_pipeline_observed(&scene.image, &deepmap, &Config::default(), |s| seen.push(s)).unwrap();
    assert_eq!(seen, Stage::ALL);
}

#[test]
fn refinement_beats_blurred_deepmap_on_disc_scenes() {
    let (mut before, mut after) = (Vec::new(), Vec::new());
    for seed in 0..20 {
        let scene = disc_scene(80, 80, seed);
        let g = BinaryMask::from_ground_truth(&scene.ground_truth);
        let deepmap = box_blur(&scene.ground_truth, 9);
        let out = run_pipeline(&scene.image, &deepmap, &Config::default()).unwrap();
        before.push(evaluate_pair("deep", &deepmap, &g, DEFAULT_ETA2).unwrap());
        after.push(evaluate_pair("final", &out.map, &g, DEFAULT_ETA2).unwrap());
        assert!(after.last().unwrap().max_f >= before.last().unwrap().max_f, "fixture {seed}");
    }
    let (b, a) = (aggregate(before, DEFAULT_ETA2).unwrap(), aggregate(after, DEFAULT_ETA2).unwrap());
    assert!(a.max_f >= b.max_f, "{} < {}", a.max_f, b.max_f);
}
