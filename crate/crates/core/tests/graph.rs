mod common;

use std::collections::BTreeSet;

use nalgebra::SymmetricEigen;
use rand::Rng;
use saliency_core::graph::{build_adjacency, rbf_kernel, SuperpixelGraph};

#[test]
fn invariants_on_random_segmentations() {
    for seed in 0..100 {
        let seg = common::random_segmentation(seed);
        let g = SuperpixelGraph::from_segmentation(&seg, 0.1).unwrap();
        let (w, k, l) = (g.affinity(), g.gram(), g.laplacian());
        let n = g.len();
        assert_eq!(w, &w.transpose());
        assert_eq!(k, &k.transpose());
        for i in 0..n {
            assert_eq!(w[(i, i)], 0.0);
            assert_eq!(k[(i, i)], 1.0);
            assert!(l.row(i).sum().abs() <= 1e-10, "seed {seed} row {i}");
            for j in 0..n {
                assert!((0.0..=1.0).contains(&w[(i, j)]));
                assert!(k[(i, j)] > 0.0 && k[(i, j)] <= 1.0);
            }
        }
        let min_eig = SymmetricEigen::new(k.clone()).eigenvalues.min();
        assert!(min_eig >= -1e-8, "seed {seed}: K has eigenvalue {min_eig}");
        let mut r = common::rng(seed);
        let v = nalgebra::DVector::from_fn(n, |_, _| r.gen_range(-1.0..1.0));
        assert!(v.dot(&(l * &v)) >= -1e-10);
    }
}

#[test]
fn adjacency_matches_all_pairs_scan() {
    for seed in 0..30 {
        let mut r = common::rng(seed);
        let (w, h): (usize, usize) = (r.gen_range(1..15), r.gen_range(1..15));
        let labels: Vec<u32> = (0..w * h).map(|_| r.gen_range(0..6)).collect();
        let mut expected = BTreeSet::new();
        for p in 0..w * h {
            for q in 0..w * h {
                let (px, py, qx, qy) = (p % w, p / w, q % w, q / w);
                let adjacent = px.abs_diff(qx) + py.abs_diff(qy) == 1;
                if adjacent && labels[p] < labels[q] {
                    expected.insert((labels[p] as usize, labels[q] as usize));
                }
            }
        }
        assert_eq!(build_adjacency(&labels, w, h), expected);
    }
}

#[test]
fn adjacent_regions_only_carry_affinity() {
    for seed in 0..20 {
        let seg = common::random_segmentation(seed);
        let adj = build_adjacency(seg.labels(), seg.width(), seg.height());
        let g = SuperpixelGraph::from_segmentation(&seg, 0.1).unwrap();
        for i in 0..g.len() {
            for j in 0..g.len() {
                let pair = (i.min(j), i.max(j));
                if i != j && adj.contains(&pair) {
                    assert_eq!(g.affinity()[(i, j)], g.gram()[(i, j)]);
                } else {
                    assert_eq!(g.affinity()[(i, j)], 0.0);
                }
            }
        }
    }
}

#[test]
fn small_cases() {
    let g = SuperpixelGraph::build(&[[0.3, 0.1, 0.2]], &BTreeSet::new(), 0.1).unwrap();
    assert_eq!((g.affinity()[(0, 0)], g.gram()[(0, 0)], g.laplacian()[(0, 0)]), (0.0, 1.0, 0.0));

    let twins = SuperpixelGraph::build(&[[0.5; 3], [0.5; 3]], &BTreeSet::from([(0, 1)]), 0.1).unwrap();
    assert_eq!(twins.affinity().as_slice(), &[0.0, 1.0, 1.0, 0.0]);
    assert_eq!(twins.laplacian().as_slice(), &[1.0, -1.0, -1.0, 1.0]);
    assert!(twins.gram().iter().all(|&v| v == 1.0));

    // Path 0-1-2 on the x axis at 0, 0.2, 0.4.
    let f = [[0.0, 0.0, 0.0], [0.2, 0.0, 0.0], [0.4, 0.0, 0.0]];
    let g = SuperpixelGraph::build(&f, &BTreeSet::from([(0, 1), (1, 2)]), 0.1).unwrap();
    let (near, far) = ((-0.4f64).exp(), (-1.6f64).exp());
    let w = [[0.0, near, 0.0], [near, 0.0, near], [0.0, near, 0.0]];
    let k = [[1.0, near, far], [near, 1.0, near], [far, near, 1.0]];
    let l = [[near, -near, 0.0], [-near, 2.0 * near, -near], [0.0, -near, near]];
    for i in 0..3 {
        for j in 0..3 {
            assert!((g.affinity()[(i, j)] - w[i][j]).abs() < 1e-15);
            assert!((g.gram()[(i, j)] - k[i][j]).abs() < 1e-15);
            assert!((g.laplacian()[(i, j)] - l[i][j]).abs() < 1e-15);
        }
    }
}

#[test]
fn kernel_scalar_value() {
    let v = rbf_kernel(&[0.0, 0.0, 0.0], &[0.1f64.sqrt(), 0.0, 0.0], 0.1).unwrap();
    assert!((v - 0.367879441171).abs() < 1e-12);
    assert!(rbf_kernel(&[0.0], &[1e3], 0.1).unwrap() >= 0.0);
}
