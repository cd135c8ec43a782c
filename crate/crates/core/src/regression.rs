//! Graph-Laplacian regularized kernel regression over superpixels.
//!
//! With the representer expansion `g(x) = Σ αᵢ K(x, xᵢ)` the objective over
//! coefficients is
//!
//! ```text
//! F(α) = (1/l)‖y − J K α‖² + γ_A αᵀKα + γ_I/(l+u)² αᵀ K L K α
//! ```
//!
//! where `J` selects the `l` labeled nodes. Its stationary point is
//!
//! ```text
//! α* = (J K + γ_A l I + γ_I l/(l+u)² L K)⁻¹ y
//! ```
//!
//! which holds exactly because unlabeled entries of `y` are zero (`J y = y`).
//! The labeled set may be any subset of nodes; `J` is a diagonal mask, so no
//! reordering is needed.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::graph::{rbf_kernel, SuperpixelGraph};

pub const DEFAULT_GAMMA_A: f64 = 1e-6;
pub const DEFAULT_GAMMA_I: f64 = 1.0;

/// Systems with a 1-norm condition estimate above this are rejected.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Clone, Debug)]
pub struct RegressionProblem<'g> {
    graph: &'g SuperpixelGraph,
    y: DVector<f64>,
    labeled: Vec<bool>,
    gamma_a: f64,
    gamma_i: f64,
}

impl<'g> RegressionProblem<'g> {
    /// Seeds are `(node, score)` pairs; every other node is unlabeled with
    /// score 0.
    pub fn new(
        graph: &'g SuperpixelGraph,
        seeds: &[(usize, f64)],
        gamma_a: f64,
        gamma_i: f64,
    ) -> Result<Self> {
        let n = graph.len();
        let mut y = vec![0.0; n];
        let mut labeled = vec![false; n];
        for &(i, s) in seeds {
            if i >= n {
                return Err(Error::Shape(format!("seed index {i} outside {n} nodes")));
            }
            if labeled[i] {
                return Err(Error::InvalidInput(format!("node {i} seeded twice")));
            }
            labeled[i] = true;
            y[i] = s;
        }
        Self::from_dense(graph, y, labeled, gamma_a, gamma_i)
    }

    /// Every node labeled with the given score.
    pub fn fully_labeled(
        graph: &'g SuperpixelGraph,
        y: Vec<f64>,
        gamma_a: f64,
        gamma_i: f64,
    ) -> Result<Self> {
        let n = y.len();
        Self::from_dense(graph, y, vec![true; n], gamma_a, gamma_i)
    }

    pub fn from_dense(
        graph: &'g SuperpixelGraph,
        y: Vec<f64>,
        labeled: Vec<bool>,
        gamma_a: f64,
        gamma_i: f64,
    ) -> Result<Self> {
        let n = graph.len();
        if y.len() != n || labeled.len() != n {
            return Err(Error::Shape(format!(
                "score vector has {} entries and mask {} for {n} nodes",
                y.len(),
                labeled.len()
            )));
        }
        if !labeled.iter().any(|&b| b) {
            return Err(Error::InvalidInput("at least one node must be labeled".into()));
        }
        for (i, (&v, &lab)) in y.iter().zip(&labeled).enumerate() {
            if !v.is_finite() || !(-1.0..=1.0).contains(&v) {
                return Err(Error::InvalidInput(format!("score {v} at node {i} outside [-1, 1]")));
            }
            if !lab && v != 0.0 {
                return Err(Error::InvalidInput(format!(
                    "unlabeled node {i} carries nonzero score {v}"
                )));
            }
        }
        if !(gamma_a > 0.0 && gamma_a.is_finite()) {
            return Err(Error::InvalidInput(format!("gamma_A must be positive, got {gamma_a}")));
        }
        if !(gamma_i >= 0.0 && gamma_i.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "gamma_I must be non-negative, got {gamma_i}"
            )));
        }
        Ok(Self {
            graph,
            y: DVector::from_vec(y),
            labeled,
            gamma_a,
            gamma_i,
        })
    }

    pub fn graph(&self) -> &'g SuperpixelGraph {
        self.graph
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn labeled(&self) -> &[bool] {
        &self.labeled
    }

    /// `l`.
    pub fn labeled_count(&self) -> usize {
        self.labeled.iter().filter(|&&b| b).count()
    }

    pub fn gamma_a(&self) -> f64 {
        self.gamma_a
    }

    pub fn gamma_i(&self) -> f64 {
        self.gamma_i
    }

    fn mask(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.labeled.len(),
            self.labeled.iter().map(|&b| if b { 1.0 } else { 0.0 }),
        )
    }

    /// `J K + γ_A l I + γ_I l/n² L K`.
    pub fn system_matrix(&self) -> DMatrix<f64> {
        let k = self.graph.gram();
        let n = k.nrows();
        let l = self.labeled_count() as f64;
        let nn = (n * n) as f64;
        let mut a = self.graph.laplacian() * k * (self.gamma_i * l / nn);
        for i in 0..n {
            if self.labeled[i] {
                for j in 0..n {
                    a[(i, j)] += k[(i, j)];
                }
            }
            a[(i, i)] += self.gamma_a * l;
        }
        a
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegressionSolution {
    /// Coefficients `α*`.
    pub alpha: DVector<f64>,
    /// Fitted node scores `K α*`.
    pub g: DVector<f64>,
    /// 1-norm condition estimate of the solved system.
    pub condition: f64,
}

/// Solves for `α*` by LU with partial pivoting.
pub fn solve(problem: &RegressionProblem<'_>) -> Result<RegressionSolution> {
    let a = problem.system_matrix();
    let lu = a.clone().lu();
    let inverse = lu
        .try_inverse()
        .ok_or(Error::IllConditioned { estimate: f64::INFINITY })?;
    let condition = one_norm(&a) * one_norm(&inverse);
    if !condition.is_finite() || condition > MAX_CONDITION {
        return Err(Error::IllConditioned { estimate: condition });
    }
    let alpha = lu
        .solve(problem.y())
        .ok_or(Error::IllConditioned { estimate: condition })?;
    if alpha.iter().any(|v| !v.is_finite()) {
        return Err(Error::IllConditioned { estimate: condition });
    }
    let g = problem.graph().gram() * &alpha;
    Ok(RegressionSolution {
        alpha,
        g,
        condition,
    })
}

fn one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `F(α)`.
pub fn objective(problem: &RegressionProblem<'_>, alpha: &DVector<f64>) -> f64 {
    let k = problem.graph().gram();
    let n = k.nrows() as f64;
    let l = problem.labeled_count() as f64;
    let ka = k * alpha;
    let fit: f64 = ka
        .iter()
        .zip(problem.y().iter())
        .zip(problem.labeled())
        .map(|((&g, &y), &lab)| if lab { (y - g).powi(2) } else { y * y })
        .sum();
    let ambient = alpha.dot(&ka);
    let smooth = ka.dot(&(problem.graph().laplacian() * &ka));
    fit / l + problem.gamma_a() * ambient + problem.gamma_i() / (n * n) * smooth
}

/// `∇F(α) = (2/l) K J (J K α − y) + 2γ_A K α + 2γ_I/(l+u)² K L K α`.
pub fn gradient(problem: &RegressionProblem<'_>, alpha: &DVector<f64>) -> DVector<f64> {
    let k = problem.graph().gram();
    let n = k.nrows() as f64;
    let l = problem.labeled_count() as f64;
    let ka = k * alpha;
    let residual = (&ka - problem.y()).component_mul(&problem.mask());
    let inner = residual * (2.0 / l)
        + alpha * (2.0 * problem.gamma_a())
        + problem.graph().laplacian() * &ka * (2.0 * problem.gamma_i() / (n * n));
    k * inner
}

/// Norm of [`gradient`] at `α`.
pub fn stationarity_residual(problem: &RegressionProblem<'_>, alpha: &DVector<f64>) -> f64 {
    gradient(problem, alpha).norm()
}

/// Evaluates `g(x) = Σ αᵢ K(x, xᵢ)` at each query feature.
pub fn predict<F: AsRef<[f64]>>(
    solution: &RegressionSolution,
    graph: &SuperpixelGraph,
    queries: &[F],
) -> Result<Vec<f64>> {
    if solution.alpha.len() != graph.len() {
        return Err(Error::Shape(format!(
            "{} coefficients for {} nodes",
            solution.alpha.len(),
            graph.len()
        )));
    }
    queries
        .iter()
        .map(|q| {
            graph
                .features()
                .iter()
                .zip(solution.alpha.iter())
                .try_fold(0.0, |acc, (x, &a)| {
                    Ok(acc + a * rbf_kernel(q.as_ref(), x, graph.rho())?)
                })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn path_graph() -> SuperpixelGraph {
        let adj: BTreeSet<_> = [(0, 1), (1, 2)].into_iter().collect();
        SuperpixelGraph::build(&[[0.0, 0.0, 0.0], [0.2, 0.0, 0.0], [0.4, 0.0, 0.0]], &adj, 0.1)
            .unwrap()
    }

    #[test]
    fn zero_rhs_gives_zero_solution() {
        let g = path_graph();
        let p = RegressionProblem::new(&g, &[(0, 0.0)], 1e-6, 1.0).unwrap();
        let s = solve(&p).unwrap();
        assert!(s.alpha.iter().all(|&v| v == 0.0));
        assert!(s.g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn interpolation_limit() {
        let g = path_graph();
        let y = vec![-1.0, 0.3, 0.8];
        let p = RegressionProblem::fully_labeled(&g, y.clone(), 1e-12, 0.0).unwrap();
        let s = solve(&p).unwrap();
        for (gi, yi) in s.g.iter().zip(&y) {
            assert!((gi - yi).abs() <= 1e-6);
        }
    }

    #[test]
    fn objective_at_zero() {
        let g = path_graph();
        let p = RegressionProblem::new(&g, &[(0, -1.0), (2, 0.5)], 1e-6, 1.0).unwrap();
        let f = objective(&p, &DVector::zeros(3));
        assert!((f - (1.0 + 0.25) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn invariant_violations_rejected() {
        let g = path_graph();
        assert!(RegressionProblem::new(&g, &[], 1e-6, 1.0).is_err());
        assert!(RegressionProblem::new(&g, &[(0, 1.5)], 1e-6, 1.0).is_err());
        assert!(RegressionProblem::new(&g, &[(0, 1.0)], 0.0, 1.0).is_err());
        assert!(RegressionProblem::new(&g, &[(0, 1.0)], 1e-6, -1.0).is_err());
        assert!(RegressionProblem::new(&g, &[(3, 1.0)], 1e-6, 1.0).is_err());
        assert!(RegressionProblem::new(&g, &[(0, 1.0), (0, 0.5)], 1e-6, 1.0).is_err());
        assert!(RegressionProblem::from_dense(
            &g,
            vec![1.0, 0.5, 0.0],
            vec![true, false, false],
            1e-6,
            1.0
        )
        .is_err());
    }

    #[test]
    fn ill_conditioned_system_reported() {
        // Identical features make K rank one; a vanishing ridge leaves the
        // system numerically singular.
        let adj: BTreeSet<_> = [(0, 1), (1, 2)].into_iter().collect();
        let g = SuperpixelGraph::build(&[[0.5; 3], [0.5; 3], [0.5; 3]], &adj, 0.1).unwrap();
        let p = RegressionProblem::fully_labeled(&g, vec![1.0, 0.0, -1.0], 1e-300, 0.0).unwrap();
        match solve(&p) {
            Err(Error::IllConditioned { estimate }) => assert!(estimate > MAX_CONDITION),
            other => panic!("expected ill-conditioning, got {other:?}"),
        }
    }

    #[test]
    fn prediction_at_training_nodes_matches_fit() {
        let g = path_graph();
        let p = RegressionProblem::new(&g, &[(0, -1.0)], 1e-6, 1.0).unwrap();
        let s = solve(&p).unwrap();
        let pred = predict(&s, &g, g.features()).unwrap();
        for (a, b) in pred.iter().zip(s.g.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        let zero = RegressionSolution {
            alpha: DVector::zeros(3),
            g: DVector::zeros(3),
            condition: 1.0,
        };
        assert_eq!(predict(&zero, &g, &[[0.7, 0.1, 0.2]]).unwrap(), vec![0.0]);
    }
}
