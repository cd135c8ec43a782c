//! Browser demo bindings. [`Explorer`] holds the state and does the work in
//! plain Rust; [`Demo`] is the thin wasm-bindgen face the page talks to.

use saliency_core::image::{srgb_to_lab, RasterImage};
use saliency_core::metrics::{evaluate_pair, BinaryMask, DEFAULT_ETA2};
use saliency_core::pipeline::{render, run_pipeline, SaliencyMap};
use saliency_core::slic::{oversegment, SuperpixelSegmentation};
use saliency_core::synth::{box_blur, center_prior, disc_scene};
use saliency_core::Config;
use wasm_bindgen::prelude::*;

/// Stage maps of one refinement run, as RGBA bytes.
#[derive(Clone, Debug)]
pub struct Stages {
    pub deep: Vec<u8>,
    /// Absent when `β = 0`.
    pub boundary: Option<Vec<u8>>,
    pub coarse: Vec<u8>,
    pub refined: Vec<u8>,
    pub superpixels: usize,
    /// maxF of the DeepMap and of the refined map, when ground truth exists.
    pub max_f: Option<(f64, f64)>,
}

pub struct Explorer {
    image: RasterImage,
    deepmap: SaliencyMap,
    ground_truth: Option<SaliencyMap>,
    segmentation: Option<SuperpixelSegmentation>,
}

fn gray_rgba(map: &SaliencyMap) -> Vec<u8> {
    map.values()
        .iter()
        .flat_map(|&v| {
            let g = (v * 255.0).round() as u8;
            [g, g, g, 255]
        })
        .collect()
}

impl Explorer {
    /// A synthetic disc scene whose DeepMap is its ground truth blurred by a
    /// `blur × blur` box.
    pub fn synthetic(size: usize, seed: u64, blur: usize) -> Result<Self, String> {
        if !(8..=512).contains(&size) {
            return Err(format!("scene size {size} outside 8..=512"));
        }
        let scene = disc_scene(size, size, seed);
        let deepmap = box_blur(&scene.ground_truth, blur.max(1) | 1);
        Ok(Self {
            image: scene.image,
            deepmap,
            ground_truth: Some(scene.ground_truth),
            segmentation: None,
        })
    }

    /// An uploaded RGBA image. Without a network DeepMap, a center prior
    /// stands in for it.
    pub fn from_rgba(width: usize, height: usize, rgba: &[u8]) -> Result<Self, String> {
        if rgba.len() != width * height * 4 {
            return Err(format!("{} bytes for a {width}x{height} RGBA image", rgba.len()));
        }
        let data = rgba
            .chunks_exact(4)
            .flat_map(|px| px[..3].iter().map(|&c| c as f64 / 255.0))
            .collect();
        let image = RasterImage::new(width, height, 3, data).map_err(|e| e.to_string())?;
        Ok(Self {
            image,
            deepmap: center_prior(width, height),
            ground_truth: None,
            segmentation: None,
        })
    }

    pub fn width(&self) -> usize {
        self.image.width()
    }

    pub fn height(&self) -> usize {
        self.image.height()
    }

    pub fn image_rgba(&self) -> Vec<u8> {
        self.image
            .data()
            .chunks_exact(3)
            .flat_map(|px| {
                let c = |v: f64| (v * 255.0).round() as u8;
                [c(px[0]), c(px[1]), c(px[2]), 255]
            })
            .collect()
    }

    /// Oversegments and returns the number of superpixels.
    pub fn segment(&mut self, n: usize, compactness: f64) -> Result<usize, String> {
        let lab = srgb_to_lab(&self.image).map_err(|e| e.to_string())?;
        let n = n.clamp(1, self.width() * self.height());
        let seg = oversegment(&lab, n, compactness).map_err(|e| e.to_string())?;
        let count = seg.len();
        self.segmentation = Some(seg);
        Ok(count)
    }

    /// The image with superpixel borders drawn in yellow. Plain image when
    /// nothing has been segmented yet.
    pub fn overlay_rgba(&self) -> Vec<u8> {
        let mut out = self.image_rgba();
        let Some(seg) = &self.segmentation else {
            return out;
        };
        let (w, h) = (seg.width(), seg.height());
        let labels = seg.labels();
        for y in 0..h {
            for x in 0..w {
                let l = labels[y * w + x];
                let edge = (x + 1 < w && labels[y * w + x + 1] != l) || (y + 1 < h && labels[(y + 1) * w + x] != l);
                if edge {
                    out[(y * w + x) * 4..][..3].copy_from_slice(&[255, 220, 0]);
                }
            }
        }
        out
    }

    pub fn refine(&self, config: &Config) -> Result<Stages, String> {
        let out = run_pipeline(&self.image, &self.deepmap, config).map_err(|e| e.to_string())?;
        let seg = &out.segmentation;
        let show = |s| render(s, seg).map(|m| gray_rgba(&m)).map_err(|e| e.to_string());
        let max_f = match &self.ground_truth {
            Some(gt) => {
                let g = BinaryMask::from_ground_truth(gt);
                let before = evaluate_pair("deep", &self.deepmap, &g, DEFAULT_ETA2).map_err(|e| e.to_string())?;
                let after = evaluate_pair("refined", &out.map, &g, DEFAULT_ETA2).map_err(|e| e.to_string())?;
                Some((before.max_f, after.max_f))
            }
            None => None,
        };
        Ok(Stages {
            deep: show(&out.deep)?,
            boundary: out.boundary.as_ref().map(show).transpose()?,
            coarse: show(&out.coarse)?,
            refined: gray_rgba(&out.map),
            superpixels: seg.len(),
            max_f,
        })
    }
}

#[wasm_bindgen]
pub struct Demo {
    inner: Explorer,
    last: Option<Stages>,
}

#[wasm_bindgen]
impl Demo {
    /// Disc scene with a blurred-ground-truth DeepMap.
    pub fn synthetic(size: usize, seed: u32, blur: usize) -> Result<Demo, JsError> {
        let inner = Explorer::synthetic(size, seed as u64, blur).map_err(|e| JsError::new(&e))?;
        Ok(Demo { inner, last: None })
    }

    /// Canvas `ImageData` bytes.
    #[wasm_bindgen(js_name = fromRgba)]
    pub fn from_rgba(width: usize, height: usize, rgba: &[u8]) -> Result<Demo, JsError> {
        let inner = Explorer::from_rgba(width, height, rgba).map_err(|e| JsError::new(&e))?;
        Ok(Demo { inner, last: None })
    }

    #[wasm_bindgen(getter)]
    pub fn width(&self) -> usize {
        self.inner.width()
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> usize {
        self.inner.height()
    }

    pub fn segment(&mut self, n: usize, compactness: f64) -> Result<usize, JsError> {
        self.inner.segment(n, compactness).map_err(|e| JsError::new(&e))
    }

    pub fn overlay(&self) -> Vec<u8> {
        self.inner.overlay_rgba()
    }

    /// Runs the pipeline; fetch the maps with [`Demo::stage`].
    pub fn refine(&mut self, n: usize, beta: f64, gamma_i: f64) -> Result<usize, JsError> {
        let config = Config {
            n_superpixels: n,
            beta,
            gamma_i,
            ..Config::default()
        };
        let stages = self.inner.refine(&config).map_err(|e| JsError::new(&e))?;
        let count = stages.superpixels;
        self.last = Some(stages);
        Ok(count)
    }

    /// RGBA bytes of `"deep"`, `"boundary"`, `"coarse"` or `"refined"` from
    /// the last refinement; empty when unavailable.
    pub fn stage(&self, name: &str) -> Vec<u8> {
        let Some(s) = &self.last else {
            return Vec::new();
        };
        match name {
            "deep" => s.deep.clone(),
            "boundary" => s.boundary.clone().unwrap_or_default(),
            "coarse" => s.coarse.clone(),
            "refined" => s.refined.clone(),
            _ => Vec::new(),
        }
    }

    /// `[maxF of DeepMap, maxF refined]`, or empty without ground truth.
    #[wasm_bindgen(js_name = maxF)]
    pub fn max_f(&self) -> Vec<f64> {
        match self.last.as_ref().and_then(|s| s.max_f) {
            Some((a, b)) => vec![a, b],
            None => Vec::new(),
        }
    }
}
