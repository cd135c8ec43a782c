use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use saliency_core::Config;

#[derive(Parser, Debug)]
#[command(name = "sal", version, about = "Superpixel saliency refinement toolkit")]
pub struct Cli {
    /// Plain-text `key = value` config file; command-line flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Oversegment an image; writes labels.pgm and features.csv.
    Segment(SegmentArgs),
    /// Refine a DeepMap into a final saliency map (single file or directory).
    Run(RunArgs),
    /// Score predictions against ground truth; writes report.csv, pr.csv, roc.csv.
    Eval(EvalArgs),
    /// Train the toy multi-task network on synthetic disc scenes.
    TrainToy(TrainArgs),
    /// Produce a DeepMap with a trained toy network.
    Infer(InferArgs),
    /// Time the pipeline over a directory of images.
    Bench(BenchArgs),
}

/// Overrides for individual config keys.
#[derive(Args, Debug, Default, Clone)]
pub struct ConfigArgs {
    /// Target number of superpixels.
    #[arg(long = "n", value_name = "N")]
    pub n_superpixels: Option<usize>,
    /// RBF kernel scale.
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long = "gamma-a")]
    pub gamma_a: Option<f64>,
    #[arg(long = "gamma-i")]
    pub gamma_i: Option<f64>,
    /// Weight of the boundary prior in the fusion.
    #[arg(long)]
    pub beta: Option<f64>,
    /// SLIC compactness.
    #[arg(long)]
    pub compactness: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// F-measure weight.
    #[arg(long)]
    pub eta2: Option<f64>,
}

impl ConfigArgs {
    pub fn apply(&self, config: &mut Config) {
        if let Some(v) = self.n_superpixels {
            config.n_superpixels = v;
        }
        if let Some(v) = self.rho {
            config.rho = v;
        }
        if let Some(v) = self.gamma_a {
            config.gamma_a = v;
        }
        if let Some(v) = self.gamma_i {
            config.gamma_i = v;
        }
        if let Some(v) = self.beta {
            config.beta = v;
        }
        if let Some(v) = self.compactness {
            config.slic_compactness = v;
        }
        if let Some(v) = self.seed {
            config.seed = v;
        }
        if let Some(v) = self.eta2 {
            config.eta2 = v;
        }
    }
}

#[derive(Args, Debug)]
pub struct SegmentArgs {
    /// Input PPM/PGM image.
    pub image: PathBuf,
    /// Output directory.
    #[arg(short, long, default_value = ".")]
    pub out: PathBuf,
    /// Also write the W, K and L matrices as CSV.
    #[arg(long)]
    pub dump_graph: bool,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    /// Input image, or a directory of images.
    pub image: PathBuf,
    /// DeepMap for the image, or a directory of DeepMaps matched by file stem.
    pub deepmap: PathBuf,
    /// Output PGM, or an output directory in batch mode.
    #[arg(short, long)]
    pub out: PathBuf,
    /// Resample the DeepMap to the image size when they differ.
    #[arg(long)]
    pub resize: bool,
    /// Also write the pooled DeepMap, BoundaryMap and CgMap.
    #[arg(long)]
    pub dump_stages: bool,
    /// JSON-lines manifest to append to (default: manifest.jsonl next to the output).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Worker threads for batch mode (capped by SAL_THREADS).
    #[arg(short, long, default_value_t = 1)]
    pub jobs: usize,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    pub pred_dir: PathBuf,
    pub gt_dir: PathBuf,
    /// Directory for report.csv, pr.csv and roc.csv.
    #[arg(short, long, default_value = ".")]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Checkpoint path.
    #[arg(short, long)]
    pub out: PathBuf,
    /// Loss log (default: loss.csv next to the checkpoint).
    #[arg(long)]
    pub loss_log: Option<PathBuf>,
    /// Images per task in the synthetic training sets.
    #[arg(long, default_value_t = 32)]
    pub images: usize,
    /// Side length of the synthetic images (even).
    #[arg(long, default_value_t = 16)]
    pub size: usize,
    #[arg(long, default_value_t = 3)]
    pub rounds: usize,
    #[arg(long, default_value_t = 200)]
    pub steps: usize,
    #[arg(long, default_value_t = 5e-5)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.99)]
    pub momentum: f64,
    #[arg(long, default_value_t = 5e-4)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 4)]
    pub batch_size: usize,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    /// Checkpoint written by train-toy.
    #[arg(short, long)]
    pub checkpoint: PathBuf,
    pub image: PathBuf,
    /// Output DeepMap PGM.
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Directory of input images.
    pub image_dir: PathBuf,
    /// DeepMaps matched by stem; a center prior is used when omitted.
    #[arg(long)]
    pub deepmap_dir: Option<PathBuf>,
    /// Output directory for maps, manifest.jsonl and bench.csv.
    #[arg(short, long)]
    pub out: PathBuf,
    #[arg(short, long, default_value_t = 1)]
    pub jobs: usize,
    #[command(flatten)]
    pub config: ConfigArgs,
}
