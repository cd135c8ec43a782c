//! Salient object detection by graph-Laplacian regularized kernel regression
//! over SLIC superpixels.
//!
//! The crate is organised bottom-up:
//!
//! * [`image`]: raster types, PNM I/O, sRGB to CIELab, bilinear resize.
//! * [`slic`]: SLIC oversegmentation into connected superpixels.
//! * [`graph`]: superpixel adjacency, RBF affinities, Gram matrix, Laplacian.
//! * [`regression`]: the manifold-regularized kernel regression solver.
//! * [`pipeline`]: DeepMap pooling, boundary propagation, fusion, refinement.
//! * [`tinynet`]: a small shared-trunk two-head FCN trained by alternating SGD.
//! * [`metrics`]: PR/ROC curves, F-measure, MAE, AUC and dataset reports.
//! * [`config`]: the hyperparameter table and `key = value` config files.
//! * [`synth`]: synthetic disc scenes used by training, tests and demos.

pub mod config;
pub mod error;
pub mod graph;
pub mod image;
pub mod metrics;
pub mod pipeline;
pub mod regression;
pub mod slic;
pub mod synth;
pub mod tinynet;

pub use config::Config;
pub use error::{Error, Result};
pub use graph::SuperpixelGraph;
pub use image::{LabImage, RasterImage};
pub use pipeline::{SaliencyMap, SuperpixelScores};
pub use regression::{RegressionProblem, RegressionSolution};
pub use slic::SuperpixelSegmentation;
