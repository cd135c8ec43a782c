//! Saliency benchmark metrics: PR and ROC curves over the 256 gray-level
//! thresholds, F-measure (adaptive-threshold aveF and curve maximum maxF),
//! AUC and MAE, plus dataset-level aggregation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::image::read_pnm;
use crate::pipeline::SaliencyMap;

pub const DEFAULT_ETA2: f64 = 0.3;
pub const LEVELS: usize = 256;

/// Gray level of a saliency value: `round(v · 255)`.
#[inline]
pub fn level(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::Shape(format!(
                "{}x{} mask needs {} entries, got {}",
                width,
                height,
                width * height,
                bits.len()
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    /// Ground truth: gray level above 127 is foreground.
    pub fn from_ground_truth(map: &SaliencyMap) -> Self {
        Self {
            width: map.width(),
            height: map.height(),
            bits: map.values().iter().map(|&v| level(v) > 127).collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    fn check_same_shape(&self, other: &BinaryMask) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::Shape(format!(
                "masks are {}x{} and {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }
}

/// Pixel is set iff its gray level is strictly above `threshold`.
pub fn binarize(map: &SaliencyMap, threshold: u8) -> BinaryMask {
    BinaryMask {
        width: map.width(),
        height: map.height(),
        bits: map.values().iter().map(|&v| level(v) > threshold).collect(),
    }
}

fn overlap(m: &BinaryMask, g: &BinaryMask) -> usize {
    m.bits.iter().zip(&g.bits).filter(|(&a, &b)| a && b).count()
}

/// `(|M∩G| / |M|, |M∩G| / |G|)`; precision of an empty prediction is 1.
pub fn precision_recall(m: &BinaryMask, g: &BinaryMask) -> Result<(f64, f64)> {
    m.check_same_shape(g)?;
    let positives = g.count();
    if positives == 0 {
        return Err(Error::InvalidInput("ground truth is empty; recall is undefined".into()));
    }
    let tp = overlap(m, g) as f64;
    let predicted = m.count();
    let precision = if predicted == 0 { 1.0 } else { tp / predicted as f64 };
    Ok((precision, tp / positives as f64))
}

/// `(|M∩Ḡ| / |Ḡ|, |M∩G| / |G|)`.
pub fn roc_point(m: &BinaryMask, g: &BinaryMask) -> Result<(f64, f64)> {
    m.check_same_shape(g)?;
    let positives = g.count();
    let negatives = g.bits.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::InvalidInput(
            "ground truth must contain both foreground and background for ROC".into(),
        ));
    }
    let tp = overlap(m, g);
    let fp = m.count() - tp;
    Ok((fp as f64 / negatives as f64, tp as f64 / positives as f64))
}

/// `(1 + η²) p r / (η² p + r)`, zero when both rates are zero.
pub fn f_measure(precision: f64, recall: f64, eta2: f64) -> f64 {
    let denom = eta2 * precision + recall;
    if denom <= 0.0 {
        0.0
    } else {
        (1.0 + eta2) * precision * recall / denom
    }
}

/// Twice the mean saliency, capped at 1, as a gray level.
pub fn adaptive_threshold(map: &SaliencyMap) -> u8 {
    level((2.0 * map.mean()).min(1.0))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrPoint {
    pub threshold: u8,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RocPoint {
    pub threshold: u8,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Curves {
    pub pr: Vec<PrPoint>,
    pub roc: Vec<RocPoint>,
    pub auc: f64,
}

/// Trapezoidal area under ROC points sorted by `(fpr, tpr)`, with `(0, 0)`
/// and `(1, 1)` appended.
pub fn roc_auc(points: impl IntoIterator<Item = (f64, f64)>) -> f64 {
    let mut pts: Vec<(f64, f64)> = points.into_iter().collect();
    pts.push((0.0, 0.0));
    pts.push((1.0, 1.0));
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

/// PR and ROC curves for thresholds `0..=255` and the ROC area.
pub fn curves(map: &SaliencyMap, g: &BinaryMask) -> Result<Curves> {
    if map.width() != g.width || map.height() != g.height {
        return Err(Error::Shape(format!(
            "map is {}x{} but ground truth is {}x{}",
            map.width(),
            map.height(),
            g.width,
            g.height
        )));
    }
    let mut pos_hist = [0usize; LEVELS];
    let mut neg_hist = [0usize; LEVELS];
    for (&v, &gt) in map.values().iter().zip(&g.bits) {
        if gt {
            pos_hist[level(v) as usize] += 1;
        } else {
            neg_hist[level(v) as usize] += 1;
        }
    }
    let positives: usize = pos_hist.iter().sum();
    let negatives: usize = neg_hist.iter().sum();
    if positives == 0 || negatives == 0 {
        return Err(Error::InvalidInput(
            "ground truth must contain both foreground and background".into(),
        ));
    }
    // tp[t] = pixels of level > t.
    let mut pr = Vec::with_capacity(LEVELS);
    let mut roc = Vec::with_capacity(LEVELS);
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut above = [(0usize, 0usize); LEVELS];
    for t in (0..LEVELS).rev() {
        above[t] = (tp, fp);
        tp += pos_hist[t];
        fp += neg_hist[t];
    }
    for (t, &(tp, fp)) in above.iter().enumerate() {
        let predicted = tp + fp;
        let precision = if predicted == 0 { 1.0 } else { tp as f64 / predicted as f64 };
        let recall = tp as f64 / positives as f64;
        pr.push(PrPoint {
            threshold: t as u8,
            precision,
            recall,
        });
        roc.push(RocPoint {
            threshold: t as u8,
            fpr: fp as f64 / negatives as f64,
            tpr: recall,
        });
    }
    let auc = roc_auc(roc.iter().map(|p| (p.fpr, p.tpr)));
    Ok(Curves { pr, roc, auc })
}

/// Mean absolute difference between the map and the `{0, 1}` ground truth.
pub fn mae(map: &SaliencyMap, g: &BinaryMask) -> Result<f64> {
    if map.width() != g.width || map.height() != g.height {
        return Err(Error::Shape("map and ground truth differ in size".into()));
    }
    let total: f64 = map
        .values()
        .iter()
        .zip(&g.bits)
        .map(|(&v, &b)| (v - if b { 1.0 } else { 0.0 }).abs())
        .sum();
    Ok(total / map.values().len() as f64)
}

/// Metrics for one prediction/ground-truth pair.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageScores {
    pub name: String,
    pub ave_f: f64,
    pub max_f: f64,
    pub auc: f64,
    pub mae: f64,
    pub curves: Curves,
}

pub fn evaluate_pair(
    name: impl Into<String>,
    map: &SaliencyMap,
    g: &BinaryMask,
    eta2: f64,
) -> Result<ImageScores> {
    let curves = curves(map, g)?;
    let (p, r) = precision_recall(&binarize(map, adaptive_threshold(map)), g)?;
    let max_f = curves
        .pr
        .iter()
        .map(|pt| f_measure(pt.precision, pt.recall, eta2))
        .fold(0.0, f64::max);
    Ok(ImageScores {
        name: name.into(),
        ave_f: f_measure(p, r, eta2),
        max_f,
        auc: curves.auc,
        mae: mae(map, g)?,
        curves,
    })
}

/// Dataset means. `max_f` is the maximum F-measure along the threshold-wise
/// mean PR curve; the other scalars are means of per-image values.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub images: Vec<ImageScores>,
    pub ave_f: f64,
    pub max_f: f64,
    pub auc: f64,
    pub mae: f64,
    pub mean_pr: Vec<PrPoint>,
    pub mean_roc: Vec<RocPoint>,
}

pub fn aggregate(images: Vec<ImageScores>, eta2: f64) -> Result<EvalReport> {
    if images.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = images.len() as f64;
    let mean = |f: fn(&ImageScores) -> f64| images.iter().map(f).sum::<f64>() / n;
    let mean_pr: Vec<PrPoint> = (0..LEVELS)
        .map(|t| PrPoint {
            threshold: t as u8,
            precision: images.iter().map(|s| s.curves.pr[t].precision).sum::<f64>() / n,
            recall: images.iter().map(|s| s.curves.pr[t].recall).sum::<f64>() / n,
        })
        .collect();
    let mean_roc: Vec<RocPoint> = (0..LEVELS)
        .map(|t| RocPoint {
            threshold: t as u8,
            fpr: images.iter().map(|s| s.curves.roc[t].fpr).sum::<f64>() / n,
            tpr: images.iter().map(|s| s.curves.roc[t].tpr).sum::<f64>() / n,
        })
        .collect();
    let max_f = mean_pr
        .iter()
        .map(|p| f_measure(p.precision, p.recall, eta2))
        .fold(0.0, f64::max);
    Ok(EvalReport {
        ave_f: mean(|s| s.ave_f),
        auc: mean(|s| s.auc),
        mae: mean(|s| s.mae),
        max_f,
        mean_pr,
        mean_roc,
        images,
    })
}

impl EvalReport {
    /// `image,aveF,maxF,AUC,MAE` with the dataset summary first.
    pub fn report_csv(&self) -> String {
        let mut out = String::from("image,aveF,maxF,AUC,MAE\n");
        let _ = writeln!(out, "mean,{},{},{},{}", self.ave_f, self.max_f, self.auc, self.mae);
        for s in &self.images {
            let _ = writeln!(out, "{},{},{},{},{}", s.name, s.ave_f, s.max_f, s.auc, s.mae);
        }
        out
    }

    pub fn pr_csv(&self) -> String {
        let mut out = String::from("threshold,precision,recall\n");
        for p in &self.mean_pr {
            let _ = writeln!(out, "{},{},{}", p.threshold, p.precision, p.recall);
        }
        out
    }

    pub fn roc_csv(&self) -> String {
        let mut out = String::from("threshold,fpr,tpr\n");
        for p in &self.mean_roc {
            let _ = writeln!(out, "{},{},{}", p.threshold, p.fpr, p.tpr);
        }
        out
    }

    pub fn write_csvs(&self, out_dir: impl AsRef<Path>) -> Result<()> {
        let dir = out_dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, body) in [
            ("report.csv", self.report_csv()),
            ("pr.csv", self.pr_csv()),
            ("roc.csv", self.roc_csv()),
        ] {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// Outcome of a directory evaluation, including the files that could not be
/// scored.
#[derive(Clone, Debug)]
pub struct DatasetEvaluation {
    pub report: EvalReport,
    /// Stems present in only one of the two directories.
    pub unmatched: Vec<String>,
    /// Matched stems that failed to load or evaluate, with the reason.
    pub skipped: Vec<(String, String)>,
}

fn pnm_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_pnm = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "pgm" | "ppm" | "pnm"));
        if path.is_file() && is_pnm {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string(), path.clone());
            }
        }
    }
    Ok(out)
}

/// Scores every prediction against the ground truth with the same file stem.
pub fn evaluate_dataset(
    pred_dir: impl AsRef<Path>,
    gt_dir: impl AsRef<Path>,
    eta2: f64,
) -> Result<DatasetEvaluation> {
    let preds = pnm_files(pred_dir.as_ref())?;
    let gts = pnm_files(gt_dir.as_ref())?;
    let mut unmatched: Vec<String> = preds
        .keys()
        .filter(|k| !gts.contains_key(*k))
        .chain(gts.keys().filter(|k| !preds.contains_key(*k)))
        .cloned()
        .collect();
    unmatched.sort();

    let mut images = Vec::new();
    let mut skipped = Vec::new();
    for (stem, pred_path) in &preds {
        let Some(gt_path) = gts.get(stem) else { continue };
        let scored = (|| {
            let map = SaliencyMap::try_from(&read_pnm(pred_path)?)?;
            let gt = BinaryMask::from_ground_truth(&SaliencyMap::try_from(&read_pnm(gt_path)?)?);
            evaluate_pair(stem.clone(), &map, &gt, eta2)
        })();
        match scored {
            Ok(s) => images.push(s),
            Err(e) => skipped.push((stem.clone(), e.to_string())),
        }
    }
    Ok(DatasetEvaluation {
        report: aggregate(images, eta2)?,
        unmatched,
        skipped,
    })
}
