//! Per-image pipeline runs with stage timing, the run manifest, and the
//! worker pool shared by `run` and `bench`.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use saliency_core::image::{read_pnm, resize_bilinear, write_pgm, BitDepth};
use saliency_core::pipeline::{render, run_pipeline_observed, PipelineOutput, SaliencyMap, Stage};
use saliency_core::synth::center_prior;
use saliency_core::{Config, RasterImage};
use serde::Serialize;

#[derive(Serialize, Debug, Clone)]
pub struct StageTiming {
    pub stage: &'static str,
    pub ms: f64,
}

#[derive(Serialize, Debug, Clone)]
pub struct ConfigSnapshot {
    pub n_superpixels: usize,
    pub rho: f64,
    pub gamma_a: f64,
    pub gamma_i: f64,
    pub beta: f64,
    pub slic_compactness: f64,
    pub seed: u64,
    pub eta2: f64,
}

impl From<&Config> for ConfigSnapshot {
    fn from(c: &Config) -> Self {
        Self {
            n_superpixels: c.n_superpixels,
            rho: c.rho,
            gamma_a: c.gamma_a,
            gamma_i: c.gamma_i,
            beta: c.beta,
            slic_compactness: c.slic_compactness,
            seed: c.seed,
            eta2: c.eta2,
        }
    }
}

/// One JSON line per processed image.
#[derive(Serialize, Debug, Clone)]
pub struct RunManifest {
    pub image: String,
    pub output: String,
    pub width: usize,
    pub height: usize,
    pub superpixels: usize,
    pub stages: Vec<StageTiming>,
    pub total_ms: f64,
    pub config: ConfigSnapshot,
    pub version: &'static str,
}

impl RunManifest {
    pub fn stage_sum_ms(&self) -> f64 {
        self.stages.iter().map(|s| s.ms).sum()
    }
}

pub struct Job {
    pub name: String,
    pub image: PathBuf,
    /// `None` selects the center prior.
    pub deepmap: Option<PathBuf>,
    pub output: PathBuf,
}

pub struct JobOptions<'a> {
    pub config: &'a Config,
    pub resize: bool,
    pub dump_stages: bool,
}

pub fn load_map(path: &Path) -> Result<SaliencyMap> {
    let raster = read_pnm(path)?;
    Ok(SaliencyMap::try_from(&raster).with_context(|| format!("{}", path.display()))?)
}

fn load_deepmap(job: &Job, image: &RasterImage, resize: bool) -> Result<SaliencyMap> {
    let Some(path) = &job.deepmap else {
        return Ok(center_prior(image.width(), image.height()));
    };
    let map = load_map(path)?;
    if (map.width(), map.height()) == (image.width(), image.height()) {
        return Ok(map);
    }
    if !resize {
        return Err(saliency_core::Error::Shape(format!(
            "{} is {}x{} but {} is {}x{} (pass --resize to resample)",
            path.display(),
            map.width(),
            map.height(),
            job.image.display(),
            image.width(),
            image.height()
        ))
        .into());
    }
    let resized = resize_bilinear(&map.to_raster(), image.width(), image.height())?;
    Ok(SaliencyMap::try_from(&resized)?)
}

fn write_map(map: &SaliencyMap, path: &Path) -> Result<()> {
    write_pgm(&map.to_raster(), path, BitDepth::Eight)?;
    Ok(())
}

fn stage_path(output: &Path, suffix: &str) -> PathBuf {
    let stem = output.file_stem().and_then(|s| s.to_str()).unwrap_or("map");
    output.with_file_name(format!("{stem}.{suffix}.pgm"))
}

fn dump_stages(out: &PipelineOutput, output: &Path) -> Result<()> {
    let seg = &out.segmentation;
    write_map(&render(&out.deep, seg)?, &stage_path(output, "deep"))?;
    if let Some(boundary) = &out.boundary {
        write_map(&render(boundary, seg)?, &stage_path(output, "boundary"))?;
    }
    write_map(&render(&out.coarse, seg)?, &stage_path(output, "cg"))?;
    Ok(())
}

/// Loads one image and its DeepMap, runs the pipeline and writes the map.
pub fn process(job: &Job, opts: &JobOptions) -> Result<RunManifest> {
    let image = read_pnm(&job.image)?;
    let deepmap = load_deepmap(job, &image, opts.resize)?;

    let mut stages = Vec::with_capacity(Stage::ALL.len());
    let start = Instant::now();
    let mut last = start;
    let out = run_pipeline_observed(&image, &deepmap, opts.config, |stage| {
        let now = Instant::now();
        stages.push(StageTiming {
            stage: stage.name(),
            ms: (now - last).as_secs_f64() * 1e3,
        });
        last = now;
    })
    .with_context(|| format!("processing {}", job.image.display()))?;
    let total_ms = start.elapsed().as_secs_f64() * 1e3;

    write_map(&out.map, &job.output)?;
    if opts.dump_stages {
        dump_stages(&out, &job.output)?;
    }
    Ok(RunManifest {
        image: job.image.display().to_string(),
        output: job.output.display().to_string(),
        width: image.width(),
        height: image.height(),
        superpixels: out.segmentation.len(),
        stages,
        total_ms,
        config: opts.config.into(),
        version: env!("CARGO_PKG_VERSION"),
    })
}

/// Worker count after applying the `SAL_THREADS` cap.
pub fn worker_count(jobs: usize) -> Result<usize> {
    let mut n = jobs.max(1);
    if let Ok(cap) = std::env::var("SAL_THREADS") {
        let cap: usize = cap
            .trim()
            .parse()
            .with_context(|| format!("SAL_THREADS must be a positive integer, got {cap:?}"))?;
        n = n.min(cap.max(1));
    }
    Ok(n)
}

/// Runs every job on a pool of `workers` threads. Results come back in job
/// order regardless of scheduling.
pub fn run_jobs(jobs: &[Job], opts: &JobOptions, workers: usize) -> Result<Vec<Result<RunManifest>>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .context("starting worker pool")?;
    Ok(pool.install(|| jobs.par_iter().map(|job| process(job, opts)).collect()))
}

/// Appends manifest records as JSON lines.
pub fn append_manifest(path: &Path, records: &[RunManifest]) -> Result<()> {
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("opening manifest {}", path.display()))?;
    for r in records {
        serde_json::to_writer(&mut file, r)?;
        file.write_all(b"\n")?;
    }
    Ok(())
}

/// PNM files in `dir` keyed by stem.
pub fn pnm_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    let entries = fs::read_dir(dir).map_err(|e| saliency_core::Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    for entry in entries {
        let path = entry?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if path.is_file() && matches!(ext.as_deref(), Some("ppm" | "pgm" | "pnm")) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string(), path.clone());
            }
        }
    }
    if out.is_empty() {
        bail!(saliency_core::Error::EmptyDataset);
    }
    Ok(out)
}
