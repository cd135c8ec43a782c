use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use saliency_core::graph::{matrix_to_csv, SuperpixelGraph};
use saliency_core::image::{read_pnm, srgb_to_lab, write_label_pgm, write_pgm, BitDepth};
use saliency_core::metrics::evaluate_dataset;
use saliency_core::slic::oversegment;
use saliency_core::tinynet::{
    alternate_train, batch_loss, predict_saliency, read_checkpoint, synthetic_datasets,
    write_checkpoint, Architecture, Hyper, LossRecord, TinyNetParams,
};
use saliency_core::Config;

use crate::args::{BenchArgs, EvalArgs, InferArgs, RunArgs, SegmentArgs, TrainArgs};
use crate::batch::{append_manifest, pnm_files, run_jobs, worker_count, Job, JobOptions, RunManifest};

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| saliency_core::Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).map_err(|e| saliency_core::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

pub fn segment(args: &SegmentArgs, config: &Config) -> Result<()> {
    let image = read_pnm(&args.image)?;
    let lab = srgb_to_lab(&image.to_rgb())?;
    let n = config.n_superpixels.min(image.width() * image.height());
    let seg = oversegment(&lab, n, config.slic_compactness)?;
    create_dir(&args.out)?;
    write_label_pgm(seg.labels(), seg.width(), seg.height(), args.out.join("labels.pgm"))?;

    let mut csv = String::from("index,L,a,b,size,is_boundary\n");
    for (i, ((f, size), boundary)) in seg
        .features()
        .iter()
        .zip(seg.sizes())
        .zip(seg.boundary_flags())
        .enumerate()
    {
        csv.push_str(&format!("{i},{},{},{},{size},{}\n", f[0], f[1], f[2], *boundary as u8));
    }
    write_file(&args.out.join("features.csv"), &csv)?;

    if args.dump_graph {
        let graph = SuperpixelGraph::from_segmentation(&seg, config.rho)?;
        write_file(&args.out.join("W.csv"), &matrix_to_csv(graph.affinity()))?;
        write_file(&args.out.join("K.csv"), &matrix_to_csv(graph.gram()))?;
        write_file(&args.out.join("L.csv"), &matrix_to_csv(graph.laplacian()))?;
    }
    eprintln!("{}: {} superpixels", args.image.display(), seg.len());
    Ok(())
}

/// Splits results into records and the first failure. In batch mode every
/// failure is reported as it is found and the returned error summarizes them.
fn report(results: Vec<Result<RunManifest>>) -> (Vec<RunManifest>, Option<anyhow::Error>) {
    let total = results.len();
    let mut ok = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(m) => ok.push(m),
            Err(e) => failures.push(e),
        }
    }
    if total > 1 {
        for e in &failures {
            eprintln!("error: {e:#}");
        }
    }
    let count = failures.len();
    let first = failures.into_iter().next().map(|e| {
        if total > 1 {
            e.context(format!("{count} of {total} images failed"))
        } else {
            e
        }
    });
    (ok, first)
}

pub fn run(args: &RunArgs, config: &Config) -> Result<()> {
    let opts = JobOptions {
        config,
        resize: args.resize,
        dump_stages: args.dump_stages,
    };
    let jobs = if args.image.is_dir() {
        if !args.deepmap.is_dir() {
            bail!("{} is a directory, so {} must be one too", args.image.display(), args.deepmap.display());
        }
        let images = pnm_files(&args.image)?;
        let deepmaps = pnm_files(&args.deepmap)?;
        create_dir(&args.out)?;
        let mut jobs = Vec::new();
        for (stem, image) in images {
            match deepmaps.get(&stem) {
                Some(d) => jobs.push(Job {
                    output: args.out.join(format!("{stem}.pgm")),
                    name: stem,
                    image,
                    deepmap: Some(d.clone()),
                }),
                None => eprintln!("warning: no DeepMap for {}", image.display()),
            }
        }
        if jobs.is_empty() {
            bail!(saliency_core::Error::EmptyDataset);
        }
        jobs
    } else {
        if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
            create_dir(parent)?;
        }
        vec![Job {
            name: args.image.display().to_string(),
            image: args.image.clone(),
            deepmap: Some(args.deepmap.clone()),
            output: args.out.clone(),
        }]
    };

    let results = run_jobs(&jobs, &opts, worker_count(args.jobs)?)?;
    let (records, err) = report(results);
    let manifest = args.manifest.clone().unwrap_or_else(|| {
        let dir = if args.image.is_dir() {
            args.out.clone()
        } else {
            args.out.parent().map(Path::to_path_buf).unwrap_or_default()
        };
        dir.join("manifest.jsonl")
    });
    append_manifest(&manifest, &records)?;
    for (job, r) in jobs.iter().zip(&records) {
        eprintln!("{} -> {} ({:.1} ms)", job.name, r.output, r.total_ms);
    }
    match err {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

pub fn eval(args: &EvalArgs, config: &Config) -> Result<()> {
    for dir in [&args.pred_dir, &args.gt_dir] {
        if !dir.is_dir() {
            return Err(saliency_core::Error::Io {
                path: dir.clone(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "not a directory"),
            }
            .into());
        }
    }
    let result = evaluate_dataset(&args.pred_dir, &args.gt_dir, config.eta2)?;
    for stem in &result.unmatched {
        eprintln!("unmatched: {stem}");
    }
    for (stem, why) in &result.skipped {
        eprintln!("skipped {stem}: {why}");
    }
    result.report.write_csvs(&args.out)?;
    let r = &result.report;
    println!(
        "images={} aveF={:.4} maxF={:.4} AUC={:.4} MAE={:.4}",
        r.images.len(),
        r.ave_f,
        r.max_f,
        r.auc,
        r.mae
    );
    Ok(())
}

fn write_loss_log(path: &Path, log: &[LossRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| saliency_core::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut out = BufWriter::new(file);
    writeln!(out, "round,phase,step,loss")?;
    for r in log {
        writeln!(out, "{},{},{},{}", r.round, r.head.name(), r.step, r.loss)?;
    }
    out.flush()?;
    Ok(())
}

pub fn train_toy(args: &TrainArgs, config: &Config) -> Result<()> {
    let hyper = Hyper {
        lr: args.lr,
        momentum: args.momentum,
        weight_decay: args.weight_decay,
        batch_size: args.batch_size,
        rounds: args.rounds,
        steps_per_phase: args.steps,
        seed: config.seed,
    };
    let (seg, sal) = synthetic_datasets(args.images, args.size, config.seed)?;
    let init = TinyNetParams::init(Architecture::default(), config.seed);
    let (j1_start, j2_start) = (batch_loss(&init, &seg)?, batch_loss(&init, &sal)?);

    let loss_path = args.loss_log.clone().unwrap_or_else(|| {
        args.out
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default()
            .join("loss.csv")
    });
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }

    let mut log = Vec::new();
    let trained = alternate_train(init, &seg, &sal, &hyper, |r| log.push(r));
    write_loss_log(&loss_path, &log)?;
    let params = match trained {
        Ok(p) => p,
        Err(e) => {
            for r in log.iter().rev().take(5).rev() {
                eprintln!("round {} {} step {}: loss {}", r.round, r.head.name(), r.step, r.loss);
            }
            return Err(e.into());
        }
    };

    let file = File::create(&args.out).map_err(|e| saliency_core::Error::Io {
        path: args.out.clone(),
        source: e,
    })?;
    let mut w = BufWriter::new(file);
    write_checkpoint(&params, &mut w).context("writing checkpoint")?;
    w.flush()?;

    let (j1, j2) = (batch_loss(&params, &seg)?, batch_loss(&params, &sal)?);
    println!("J1 {j1_start:.4} -> {j1:.4} ({:.1}%)", 100.0 * j1 / j1_start);
    println!("J2 {j2_start:.4} -> {j2:.4} ({:.1}%)", 100.0 * j2 / j2_start);
    Ok(())
}

pub fn infer(args: &InferArgs) -> Result<()> {
    let file = File::open(&args.checkpoint).map_err(|e| saliency_core::Error::Io {
        path: args.checkpoint.clone(),
        source: e,
    })?;
    let params = read_checkpoint(std::io::BufReader::new(file))
        .with_context(|| format!("reading {}", args.checkpoint.display()))?;
    let image = read_pnm(&args.image)?;
    let map = predict_saliency(&params, &image)?;
    write_pgm(&map.to_raster(), &args.out, BitDepth::Eight)?;
    Ok(())
}

/// Nearest-rank percentile of an ascending slice.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn bench(args: &BenchArgs, config: &Config) -> Result<()> {
    let images = pnm_files(&args.image_dir)?;
    let deepmaps = match &args.deepmap_dir {
        Some(d) => Some(pnm_files(d)?),
        None => None,
    };
    create_dir(&args.out)?;
    let jobs: Vec<Job> = images
        .into_iter()
        .map(|(stem, image)| Job {
            output: args.out.join(format!("{stem}.pgm")),
            deepmap: deepmaps.as_ref().and_then(|d| d.get(&stem).cloned()),
            name: stem,
            image,
        })
        .collect();
    let opts = JobOptions {
        config,
        resize: true,
        dump_stages: false,
    };
    let workers = worker_count(args.jobs)?;
    let (records, _) = report(run_jobs(&jobs, &opts, workers)?);
    if records.is_empty() {
        bail!("no image could be processed");
    }
    let manifest: PathBuf = args.out.join("manifest.jsonl");
    let _ = fs::remove_file(&manifest);
    append_manifest(&manifest, &records)?;

    let mut csv = String::from("stage,median_ms,p95_ms\n");
    println!("{:<10} {:>10} {:>10}", "stage", "median_ms", "p95_ms");
    let mut rows: Vec<(&str, Vec<f64>)> = records[0]
        .stages
        .iter()
        .enumerate()
        .map(|(i, s)| (s.stage, records.iter().map(|r| r.stages[i].ms).collect()))
        .collect();
    rows.push(("total", records.iter().map(|r| r.total_ms).collect()));
    for (stage, mut times) in rows {
        times.sort_by(f64::total_cmp);
        let (median, p95) = (percentile(&times, 50.0), percentile(&times, 95.0));
        println!("{stage:<10} {median:>10.3} {p95:>10.3}");
        csv.push_str(&format!("{stage},{median},{p95}\n"));
    }
    write_file(&args.out.join("bench.csv"), &csv)?;

    let worst = records
        .iter()
        .map(|r| (r.stage_sum_ms() - r.total_ms).abs() / r.total_ms.max(1e-9))
        .fold(0.0, f64::max);
    println!(
        "{} images, {workers} worker(s); stage sums within {:.2}% of totals",
        records.len(),
        100.0 * worst
    );
    Ok(())
}
