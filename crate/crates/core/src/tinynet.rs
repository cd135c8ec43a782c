//! A desk-scale multi-task fully convolutional network.
//!
//! Shared trunk: three 3×3 convolutions with ReLU and one 2× max-pool
//! (after the second convolution). Two heads sit on the trunk output:
//!
//! * segmentation: 1×1 convolution to `C` class scores, learnable 2×
//!   up-sampling, per-pixel softmax;
//! * saliency: 1×1 convolution to one score, learnable 2× up-sampling,
//!   sigmoid.
//!
//! Up-sampling is a per-channel transposed convolution (kernel 4, stride 2)
//! initialized to exact bilinear weights, applied to the edge-replicated input
//! and center-cropped back to the input resolution. Input height and width
//! must therefore be even.
//!
//! The losses are
//!
//! ```text
//! J1 = −(1/N₁) Σᵢ Σ_c Σ_jk 1{Y_ijk = c} log h_cjk(Xᵢ)
//! J2 =  (1/N₂) Σᵢ ‖Mᵢ − f(Zᵢ)‖²_F
//! ```
//!
//! and training alternates SGD phases on `(θ_s, θ_h)` and `(θ_s, θ_f)`.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::image::{resize_bilinear, RasterImage};
use crate::pipeline::SaliencyMap;

/// Guard for `log(0)` in the cross-entropy.
pub const LOG_EPS: f64 = 1e-12;

/// `(batch, channels, height, width)` tensor, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4 {
    shape: [usize; 4],
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn new(shape: [usize; 4], data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(Error::Shape(format!(
                "tensor of shape {shape:?} needs {} values, got {}",
                shape.iter().product::<usize>(),
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("tensor contains non-finite values".into()));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: [usize; 4]) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    /// Stacks images (all the same size and channel count) into a batch.
    pub fn from_images(images: &[RasterImage]) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| Error::InvalidInput("empty image batch".into()))?;
        let (w, h, c) = (first.width(), first.height(), first.channels());
        let mut data = Vec::with_capacity(images.len() * c * h * w);
        for img in images {
            if (img.width(), img.height(), img.channels()) != (w, h, c) {
                return Err(Error::Shape("images in a batch must share a shape".into()));
            }
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        data.push(img.get(x, y, ch));
                    }
                }
            }
        }
        Self::new([images.len(), c, h, w], data)
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    fn idx(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape[1] + c) * self.shape[2] + y) * self.shape[3] + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.idx(n, c, y, x)]
    }

    /// Items `indices` of the batch, in order.
    pub fn select(&self, indices: &[usize]) -> Tensor4 {
        let item = self.shape[1] * self.shape[2] * self.shape[3];
        let mut data = Vec::with_capacity(indices.len() * item);
        for &i in indices {
            data.extend_from_slice(&self.data[i * item..(i + 1) * item]);
        }
        Tensor4 {
            shape: [indices.len(), self.shape[1], self.shape[2], self.shape[3]],
            data,
        }
    }
}

/// Which head to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    Segmentation,
    Saliency,
}

impl Head {
    pub fn name(self) -> &'static str {
        match self {
            Head::Segmentation => "seg",
            Head::Saliency => "sal",
        }
    }
}

/// A named parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Param {
    fn zeros(name: &str, shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            name: name.to_string(),
            shape,
            data: vec![0.0; len],
        }
    }
}

/// Channel widths of the trunk and the number of segmentation classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Architecture {
    pub in_channels: usize,
    pub widths: [usize; 3],
    pub classes: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            in_channels: 3,
            widths: [8, 8, 16],
            classes: 2,
        }
    }
}

// Parameter slots within each group.
const CONV1_W: usize = 0;
const CONV1_B: usize = 1;
const CONV2_W: usize = 2;
const CONV2_B: usize = 3;
const CONV3_W: usize = 4;
const CONV3_B: usize = 5;
const SCORE_W: usize = 0;
const SCORE_B: usize = 1;
const UP_W: usize = 2;

/// `θ_s`, `θ_h` and `θ_f`.
#[derive(Clone, Debug, PartialEq)]
pub struct TinyNetParams {
    pub arch: Architecture,
    pub shared: Vec<Param>,
    pub seg_head: Vec<Param>,
    pub sal_head: Vec<Param>,
}

/// Weights of a 4-tap, factor-2 bilinear up-sampling kernel (outer product
/// of `[1/4, 3/4, 3/4, 1/4]`).
pub fn bilinear_kernel() -> [f64; 16] {
    let taps = [0.25, 0.75, 0.75, 0.25];
    let mut k = [0.0; 16];
    for (i, a) in taps.iter().enumerate() {
        for (j, b) in taps.iter().enumerate() {
            k[i * 4 + j] = a * b;
        }
    }
    k
}

fn head_params(prefix: &str, in_ch: usize, out_ch: usize) -> Vec<Param> {
    let mut up = Param::zeros(&format!("{prefix}.up.weight"), vec![out_ch, 4, 4]);
    let k = bilinear_kernel();
    for c in 0..out_ch {
        up.data[c * 16..(c + 1) * 16].copy_from_slice(&k);
    }
    vec![
        Param::zeros(&format!("{prefix}.score.weight"), vec![out_ch, in_ch, 1, 1]),
        Param::zeros(&format!("{prefix}.score.bias"), vec![out_ch]),
        up,
    ]
}

impl TinyNetParams {
    /// All convolution weights and biases zero, up-sampling kernels bilinear.
    pub fn zeros(arch: Architecture) -> Self {
        let [c1, c2, c3] = arch.widths;
        let shared = vec![
            Param::zeros("shared.conv1.weight", vec![c1, arch.in_channels, 3, 3]),
            Param::zeros("shared.conv1.bias", vec![c1]),
            Param::zeros("shared.conv2.weight", vec![c2, c1, 3, 3]),
            Param::zeros("shared.conv2.bias", vec![c2]),
            Param::zeros("shared.conv3.weight", vec![c3, c2, 3, 3]),
            Param::zeros("shared.conv3.bias", vec![c3]),
        ];
        Self {
            arch,
            shared,
            seg_head: head_params("seg", c3, arch.classes),
            sal_head: head_params("sal", c3, 1),
        }
    }

    /// Xavier-uniform trunk weights, normally distributed head scores
    /// (σ = 0.1), zero biases and bilinear up-sampling kernels.
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let mut params = Self::zeros(arch);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for slot in [CONV1_W, CONV2_W, CONV3_W] {
            let p = &mut params.shared[slot];
            let (out, inp, kh, kw) = (p.shape[0], p.shape[1], p.shape[2], p.shape[3]);
            let bound = (6.0 / ((inp + out) * kh * kw) as f64).sqrt();
            p.data.iter_mut().for_each(|v| *v = rng.gen_range(-bound..bound));
        }
        let normal = Normal::new(0.0, 0.1).expect("valid normal parameters");
        for head in [&mut params.seg_head, &mut params.sal_head] {
            head[SCORE_W]
                .data
                .iter_mut()
                .for_each(|v| *v = normal.sample(&mut rng));
        }
        params
    }

    pub fn head(&self, head: Head) -> &[Param] {
        match head {
            Head::Segmentation => &self.seg_head,
            Head::Saliency => &self.sal_head,
        }
    }

    pub fn head_mut(&mut self, head: Head) -> &mut [Param] {
        match head {
            Head::Segmentation => &mut self.seg_head,
            Head::Saliency => &mut self.sal_head,
        }
    }

    /// Every tensor in checkpoint order: trunk, segmentation head, saliency
    /// head.
    pub fn tensors(&self) -> impl Iterator<Item = &Param> {
        self.shared.iter().chain(&self.seg_head).chain(&self.sal_head)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.shared
            .iter_mut()
            .chain(self.seg_head.iter_mut())
            .chain(self.sal_head.iter_mut())
    }
}

// ---------------------------------------------------------------------------
// Layers

/// Same-padded convolution with a square odd kernel.
fn conv_forward(x: &Tensor4, w: &Param, b: &Param) -> Tensor4 {
    let [n, cin, h, wd] = x.shape;
    let (cout, k) = (w.shape[0], w.shape[2]);
    let pad = (k / 2) as i64;
    let mut out = Tensor4::zeros([n, cout, h, wd]);
    for ni in 0..n {
        for o in 0..cout {
            let base = out.idx(ni, o, 0, 0);
            out.data[base..base + h * wd].iter_mut().for_each(|v| *v = b.data[o]);
            for i in 0..cin {
                let in_base = x.idx(ni, i, 0, 0);
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = w.data[((o * cin + i) * k + ky) * k + kx];
                        let (oy, ox) = (ky as i64 - pad, kx as i64 - pad);
                        for y in 0..h {
                            let sy = y as i64 + oy;
                            if sy < 0 || sy >= h as i64 {
                                continue;
                            }
                            let x0 = (-ox).max(0) as usize;
                            let x1 = (wd as i64 - ox).min(wd as i64) as usize;
                            let src = in_base + sy as usize * wd;
                            let dst = base + y * wd;
                            for xx in x0..x1 {
                                out.data[dst + xx] +=
                                    wv * x.data[src + (xx as i64 + ox) as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns `(dx, dw, db)`.
fn conv_backward(x: &Tensor4, w: &Param, dout: &Tensor4) -> (Tensor4, Vec<f64>, Vec<f64>) {
    let [n, cin, h, wd] = x.shape;
    let (cout, k) = (w.shape[0], w.shape[2]);
    let pad = (k / 2) as i64;
    let mut dx = Tensor4::zeros(x.shape);
    let mut dw = vec![0.0; w.data.len()];
    let mut db = vec![0.0; cout];
    for ni in 0..n {
        for o in 0..cout {
            let base = dout.idx(ni, o, 0, 0);
            db[o] += dout.data[base..base + h * wd].iter().sum::<f64>();
            for i in 0..cin {
                let in_base = x.idx(ni, i, 0, 0);
                for ky in 0..k {
                    for kx in 0..k {
                        let widx = ((o * cin + i) * k + ky) * k + kx;
                        let wv = w.data[widx];
                        let (oy, ox) = (ky as i64 - pad, kx as i64 - pad);
                        let mut acc = 0.0;
                        for y in 0..h {
                            let sy = y as i64 + oy;
                            if sy < 0 || sy >= h as i64 {
                                continue;
                            }
                            let x0 = (-ox).max(0) as usize;
                            let x1 = (wd as i64 - ox).min(wd as i64) as usize;
                            let src = in_base + sy as usize * wd;
                            let g = base + y * wd;
                            for xx in x0..x1 {
                                let s = src + (xx as i64 + ox) as usize;
                                acc += dout.data[g + xx] * x.data[s];
                                dx.data[s] += wv * dout.data[g + xx];
                            }
                        }
                        dw[widx] += acc;
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

fn relu(x: &Tensor4) -> Tensor4 {
    Tensor4 {
        shape: x.shape,
        data: x.data.iter().map(|&v| v.max(0.0)).collect(),
    }
}

fn relu_backward(pre: &Tensor4, dout: &Tensor4) -> Tensor4 {
    Tensor4 {
        shape: pre.shape,
        data: pre
            .data
            .iter()
            .zip(&dout.data)
            .map(|(&p, &g)| if p > 0.0 { g } else { 0.0 })
            .collect(),
    }
}

/// 2×2 max-pool, stride 2; returns the pooled tensor and the flat source
/// index of each maximum (first wins on ties).
fn maxpool_forward(x: &Tensor4) -> (Tensor4, Vec<usize>) {
    let [n, c, h, w] = x.shape;
    let (ph, pw) = (h / 2, w / 2);
    let mut out = Tensor4::zeros([n, c, ph, pw]);
    let mut arg = vec![0usize; n * c * ph * pw];
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..ph {
                for xx in 0..pw {
                    let mut best = x.idx(ni, ci, 2 * y, 2 * xx);
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let j = x.idx(ni, ci, 2 * y + dy, 2 * xx + dx);
                        if x.data[j] > x.data[best] {
                            best = j;
                        }
                    }
                    let o = out.idx(ni, ci, y, xx);
                    out.data[o] = x.data[best];
                    arg[o] = best;
                }
            }
        }
    }
    (out, arg)
}

fn maxpool_backward(input_shape: [usize; 4], arg: &[usize], dout: &Tensor4) -> Tensor4 {
    let mut dx = Tensor4::zeros(input_shape);
    for (&src, &g) in arg.iter().zip(&dout.data) {
        dx.data[src] += g;
    }
    dx
}

/// Learnable 2× up-sampling: replicate-pad by one, per-channel transposed
/// convolution (kernel 4, stride 2), crop offset 3.
fn upsample_forward(x: &Tensor4, k: &Param) -> Tensor4 {
    let [n, c, h, w] = x.shape;
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = Tensor4::zeros([n, c, oh, ow]);
    for ni in 0..n {
        for ci in 0..c {
            let kern = &k.data[ci * 16..(ci + 1) * 16];
            for py in 0..h + 2 {
                let sy = py.saturating_sub(1).min(h - 1);
                for px in 0..w + 2 {
                    let sx = px.saturating_sub(1).min(w - 1);
                    let v = x.at(ni, ci, sy, sx);
                    for ky in 0..4 {
                        let fy = 2 * py + ky;
                        if fy < 3 || fy - 3 >= oh {
                            continue;
                        }
                        for kx in 0..4 {
                            let fx = 2 * px + kx;
                            if fx < 3 || fx - 3 >= ow {
                                continue;
                            }
                            let o = out.idx(ni, ci, fy - 3, fx - 3);
                            out.data[o] += v * kern[ky * 4 + kx];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns `(dx, dk)`.
fn upsample_backward(x: &Tensor4, k: &Param, dout: &Tensor4) -> (Tensor4, Vec<f64>) {
    let [n, c, h, w] = x.shape;
    let (oh, ow) = (2 * h, 2 * w);
    let mut dx = Tensor4::zeros(x.shape);
    let mut dk = vec![0.0; k.data.len()];
    for ni in 0..n {
        for ci in 0..c {
            let kern = &k.data[ci * 16..(ci + 1) * 16];
            for py in 0..h + 2 {
                let sy = py.saturating_sub(1).min(h - 1);
                for px in 0..w + 2 {
                    let sx = px.saturating_sub(1).min(w - 1);
                    let v = x.at(ni, ci, sy, sx);
                    let mut dv = 0.0;
                    for ky in 0..4 {
                        let fy = 2 * py + ky;
                        if fy < 3 || fy - 3 >= oh {
                            continue;
                        }
                        for kx in 0..4 {
                            let fx = 2 * px + kx;
                            if fx < 3 || fx - 3 >= ow {
                                continue;
                            }
                            let g = dout.at(ni, ci, fy - 3, fx - 3);
                            dk[ci * 16 + ky * 4 + kx] += g * v;
                            dv += g * kern[ky * 4 + kx];
                        }
                    }
                    let i = dx.idx(ni, ci, sy, sx);
                    dx.data[i] += dv;
                }
            }
        }
    }
    (dx, dk)
}

fn softmax_channels(logits: &Tensor4) -> Tensor4 {
    let [n, c, h, w] = logits.shape;
    let mut out = Tensor4::zeros(logits.shape);
    for ni in 0..n {
        for y in 0..h {
            for x in 0..w {
                let max = (0..c)
                    .map(|ci| logits.at(ni, ci, y, x))
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for ci in 0..c {
                    let e = (logits.at(ni, ci, y, x) - max).exp();
                    let i = out.idx(ni, ci, y, x);
                    out.data[i] = e;
                    sum += e;
                }
                for ci in 0..c {
                    let i = out.idx(ni, ci, y, x);
                    out.data[i] /= sum;
                }
            }
        }
    }
    out
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

// ---------------------------------------------------------------------------
// Network

struct Activations {
    input: Tensor4,
    pre1: Tensor4,
    act1: Tensor4,
    pre2: Tensor4,
    act2: Tensor4,
    pooled: Tensor4,
    pool_arg: Vec<usize>,
    pre3: Tensor4,
    act3: Tensor4,
    scores: Tensor4,
    logits: Tensor4,
    output: Tensor4,
}

fn check_input(params: &TinyNetParams, images: &Tensor4) -> Result<()> {
    let [n, c, h, w] = images.shape;
    if n == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    if c != params.arch.in_channels {
        return Err(Error::Shape(format!(
            "network expects {} input channels, got {c}",
            params.arch.in_channels
        )));
    }
    if h < 2 || w < 2 || h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!(
            "input height and width must be even and at least 2, got {h}x{w}"
        )));
    }
    Ok(())
}

fn forward_cached(params: &TinyNetParams, images: &Tensor4, head: Head) -> Result<Activations> {
    check_input(params, images)?;
    let s = &params.shared;
    let pre1 = conv_forward(images, &s[CONV1_W], &s[CONV1_B]);
    let act1 = relu(&pre1);
    let pre2 = conv_forward(&act1, &s[CONV2_W], &s[CONV2_B]);
    let act2 = relu(&pre2);
    let (pooled, pool_arg) = maxpool_forward(&act2);
    let pre3 = conv_forward(&pooled, &s[CONV3_W], &s[CONV3_B]);
    let act3 = relu(&pre3);
    let hp = params.head(head);
    let scores = conv_forward(&act3, &hp[SCORE_W], &hp[SCORE_B]);
    let logits = upsample_forward(&scores, &hp[UP_W]);
    let output = match head {
        Head::Segmentation => softmax_channels(&logits),
        Head::Saliency => Tensor4 {
            shape: logits.shape,
            data: logits.data.iter().map(|&v| sigmoid(v)).collect(),
        },
    };
    Ok(Activations {
        input: images.clone(),
        pre1,
        act1,
        pre2,
        act2,
        pooled,
        pool_arg,
        pre3,
        act3,
        scores,
        logits,
        output,
    })
}

/// Segmentation head: `C` softmax probability maps per image. Saliency head:
/// one sigmoid map per image. Both at the input resolution.
pub fn forward(params: &TinyNetParams, images: &Tensor4, head: Head) -> Result<Tensor4> {
    Ok(forward_cached(params, images, head)?.output)
}

/// `J1` for class labels in `0..C`, one per pixel in batch/row-major order.
pub fn seg_loss(probs: &Tensor4, labels: &[usize]) -> Result<f64> {
    let [n, c, h, w] = probs.shape;
    if labels.len() != n * h * w {
        return Err(Error::Shape(format!(
            "{} labels for {} pixels",
            labels.len(),
            n * h * w
        )));
    }
    let mut total = 0.0;
    for ni in 0..n {
        for y in 0..h {
            for x in 0..w {
                let label = labels[(ni * h + y) * w + x];
                if label >= c {
                    return Err(Error::InvalidInput(format!(
                        "class label {label} outside 0..{c}"
                    )));
                }
                total -= probs.at(ni, label, y, x).max(LOG_EPS).ln();
            }
        }
    }
    Ok(total / n as f64)
}

/// `J2` for saliency maps against binary masks (batch/row-major order).
pub fn sal_loss(pred: &Tensor4, masks: &[f64]) -> Result<f64> {
    if masks.len() != pred.data.len() || pred.shape[1] != 1 {
        return Err(Error::Shape(format!(
            "{} mask values for prediction of shape {:?}",
            masks.len(),
            pred.shape
        )));
    }
    let total: f64 = pred.data.iter().zip(masks).map(|(p, m)| (m - p).powi(2)).sum();
    Ok(total / pred.shape[0] as f64)
}

/// A labeled batch for one of the two tasks.
#[derive(Clone, Debug)]
pub enum TrainBatch {
    /// Images with per-pixel class labels in `0..C`.
    Segmentation { images: Tensor4, labels: Vec<usize> },
    /// Images with binary per-pixel saliency masks.
    Saliency { images: Tensor4, masks: Vec<f64> },
}

impl TrainBatch {
    pub fn head(&self) -> Head {
        match self {
            TrainBatch::Segmentation { .. } => Head::Segmentation,
            TrainBatch::Saliency { .. } => Head::Saliency,
        }
    }

    pub fn images(&self) -> &Tensor4 {
        match self {
            TrainBatch::Segmentation { images, .. } | TrainBatch::Saliency { images, .. } => images,
        }
    }

    pub fn len(&self) -> usize {
        self.images().shape[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Items `indices`, in order.
    pub fn select(&self, indices: &[usize]) -> TrainBatch {
        let [_, _, h, w] = self.images().shape;
        let per = h * w;
        match self {
            TrainBatch::Segmentation { images, labels } => TrainBatch::Segmentation {
                images: images.select(indices),
                labels: indices
                    .iter()
                    .flat_map(|&i| labels[i * per..(i + 1) * per].iter().copied())
                    .collect(),
            },
            TrainBatch::Saliency { images, masks } => TrainBatch::Saliency {
                images: images.select(indices),
                masks: indices
                    .iter()
                    .flat_map(|&i| masks[i * per..(i + 1) * per].iter().copied())
                    .collect(),
            },
        }
    }

    fn validate(&self, params: &TinyNetParams) -> Result<()> {
        check_input(params, self.images())?;
        let [n, _, h, w] = self.images().shape;
        match self {
            TrainBatch::Segmentation { labels, .. } => {
                if labels.len() != n * h * w {
                    return Err(Error::Shape("label count does not match the images".into()));
                }
                if let Some(&bad) = labels.iter().find(|&&l| l >= params.arch.classes) {
                    return Err(Error::InvalidInput(format!(
                        "class label {bad} outside 0..{}",
                        params.arch.classes
                    )));
                }
            }
            TrainBatch::Saliency { masks, .. } => {
                if masks.len() != n * h * w {
                    return Err(Error::Shape("mask size does not match the images".into()));
                }
                if masks.iter().any(|&m| m != 0.0 && m != 1.0) {
                    return Err(Error::InvalidInput("saliency masks must be binary".into()));
                }
            }
        }
        Ok(())
    }
}

/// Gradients of the loss of one head with respect to `θ_s` and that head's
/// parameters, laid out like [`TinyNetParams::shared`] and the head.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub head: Head,
    pub shared: Vec<Vec<f64>>,
    pub head_params: Vec<Vec<f64>>,
}

/// Loss of the batch and its exact gradient.
pub fn backward(params: &TinyNetParams, batch: &TrainBatch) -> Result<(f64, Gradients)> {
    batch.validate(params)?;
    let head = batch.head();
    let acts = forward_cached(params, batch.images(), head)?;
    let [n, c, h, w] = acts.output.shape;
    let inv_n = 1.0 / n as f64;

    // Gradient with respect to the up-sampled logits.
    let mut dlogits = Tensor4::zeros(acts.logits.shape);
    let loss = match batch {
        TrainBatch::Segmentation { labels, .. } => {
            for ni in 0..n {
                for y in 0..h {
                    for x in 0..w {
                        let label = labels[(ni * h + y) * w + x];
                        for ci in 0..c {
                            let i = acts.output.idx(ni, ci, y, x);
                            let target = if ci == label { 1.0 } else { 0.0 };
                            dlogits.data[i] = (acts.output.data[i] - target) * inv_n;
                        }
                    }
                }
            }
            seg_loss(&acts.output, labels)?
        }
        TrainBatch::Saliency { masks, .. } => {
            for (i, (&p, &m)) in acts.output.data.iter().zip(masks).enumerate() {
                dlogits.data[i] = 2.0 * inv_n * (p - m) * p * (1.0 - p);
            }
            sal_loss(&acts.output, masks)?
        }
    };

    let hp = params.head(head);
    let (dscores, dup) = upsample_backward(&acts.scores, &hp[UP_W], &dlogits);
    let (dact3, dscore_w, dscore_b) = conv_backward(&acts.act3, &hp[SCORE_W], &dscores);
    let dpre3 = relu_backward(&acts.pre3, &dact3);
    let s = &params.shared;
    let (dpooled, dw3, db3) = conv_backward(&acts.pooled, &s[CONV3_W], &dpre3);
    let dact2 = maxpool_backward(acts.act2.shape, &acts.pool_arg, &dpooled);
    let dpre2 = relu_backward(&acts.pre2, &dact2);
    let (dact1, dw2, db2) = conv_backward(&acts.act1, &s[CONV2_W], &dpre2);
    let dpre1 = relu_backward(&acts.pre1, &dact1);
    let (_, dw1, db1) = conv_backward(&acts.input, &s[CONV1_W], &dpre1);

    Ok((
        loss,
        Gradients {
            head,
            shared: vec![dw1, db1, dw2, db2, dw3, db3],
            head_params: vec![dscore_w, dscore_b, dup],
        },
    ))
}

/// Loss of a batch without gradients.
pub fn batch_loss(params: &TinyNetParams, batch: &TrainBatch) -> Result<f64> {
    batch.validate(params)?;
    let out = forward(params, batch.images(), batch.head())?;
    match batch {
        TrainBatch::Segmentation { labels, .. } => seg_loss(&out, labels),
        TrainBatch::Saliency { masks, .. } => sal_loss(&out, masks),
    }
}

// ---------------------------------------------------------------------------
// Optimization

/// One momentum SGD update of a tensor:
/// `v ← momentum·v − lr·(grad + weight_decay·param)`, `param ← param + v`.
pub fn sgd_step(
    param: &mut [f64],
    grad: &[f64],
    velocity: &mut [f64],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) {
    for ((p, &g), v) in param.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        *v = momentum * *v - lr * (g + weight_decay * *p);
        *p += *v;
    }
}

/// Momentum buffers for the parameters a phase updates.
#[derive(Clone, Debug)]
pub struct Velocity {
    shared: Vec<Vec<f64>>,
    head: Vec<Vec<f64>>,
}

impl Velocity {
    pub fn zeros(params: &TinyNetParams, head: Head) -> Self {
        Self {
            shared: params.shared.iter().map(|p| vec![0.0; p.data.len()]).collect(),
            head: params.head(head).iter().map(|p| vec![0.0; p.data.len()]).collect(),
        }
    }
}

/// Applies [`sgd_step`] to `θ_s` and the head the gradients belong to; the
/// other head is untouched.
pub fn apply_gradients(
    params: &mut TinyNetParams,
    grads: &Gradients,
    velocity: &mut Velocity,
    hyper: &Hyper,
) {
    for ((p, g), v) in params.shared.iter_mut().zip(&grads.shared).zip(&mut velocity.shared) {
        sgd_step(&mut p.data, g, v, hyper.lr, hyper.momentum, hyper.weight_decay);
    }
    for ((p, g), v) in params
        .head_mut(grads.head)
        .iter_mut()
        .zip(&grads.head_params)
        .zip(&mut velocity.head)
    {
        sgd_step(&mut p.data, g, v, hyper.lr, hyper.momentum, hyper.weight_decay);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hyper {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Number of (segmentation phase, saliency phase) repetitions.
    pub rounds: usize,
    pub steps_per_phase: usize,
    pub seed: u64,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            lr: 5e-5,
            momentum: 0.99,
            weight_decay: 5e-4,
            batch_size: 4,
            rounds: 3,
            steps_per_phase: 200,
            seed: 42,
        }
    }
}

/// One logged SGD step.
#[derive(Clone, Debug, PartialEq)]
pub struct LossRecord {
    pub round: usize,
    pub head: Head,
    pub step: usize,
    pub loss: f64,
}

/// Seeded, epoch-wise shuffled minibatch order.
struct BatchSampler {
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    fn new(len: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut rng);
        Self {
            order,
            cursor: 0,
            rng,
        }
    }

    fn next(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size.min(self.order.len()) {
            if self.cursor == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}

/// Runs one SGD phase on a single task, updating `θ_s` and that task's head.
pub fn train_phase(
    params: &mut TinyNetParams,
    data: &TrainBatch,
    hyper: &Hyper,
    round: usize,
    sampler_seed: u64,
    mut log: impl FnMut(LossRecord),
) -> Result<()> {
    let head = data.head();
    let mut velocity = Velocity::zeros(params, head);
    let mut sampler = BatchSampler::new(data.len(), sampler_seed);
    for step in 0..hyper.steps_per_phase {
        let batch = data.select(&sampler.next(hyper.batch_size));
        let (loss, grads) = backward(params, &batch)?;
        if !loss.is_finite() {
            return Err(Error::Divergence(format!(
                "{} loss became {loss} at round {round}, step {step}",
                head.name()
            )));
        }
        apply_gradients(params, &grads, &mut velocity, hyper);
        if params.tensors().any(|p| p.data.iter().any(|v| !v.is_finite())) {
            return Err(Error::Divergence(format!(
                "parameters became non-finite at round {round}, {} step {step} (last loss {loss})",
                head.name()
            )));
        }
        log(LossRecord {
            round,
            head,
            step,
            loss,
        });
    }
    Ok(())
}

/// Alternating two-task training: each round runs a segmentation phase on
/// `(θ_s, θ_h)` followed by a saliency phase on `(θ_s, θ_f)`. Momentum is
/// reset at the start of every phase.
pub fn alternate_train(
    mut params: TinyNetParams,
    seg_data: &TrainBatch,
    sal_data: &TrainBatch,
    hyper: &Hyper,
    mut log: impl FnMut(LossRecord),
) -> Result<TinyNetParams> {
    if seg_data.head() != Head::Segmentation || sal_data.head() != Head::Saliency {
        return Err(Error::InvalidInput(
            "expected a segmentation dataset and a saliency dataset".into(),
        ));
    }
    if seg_data.is_empty() || sal_data.is_empty() {
        return Err(Error::InvalidInput("training datasets must be non-empty".into()));
    }
    seg_data.validate(&params)?;
    sal_data.validate(&params)?;
    for round in 0..hyper.rounds {
        let seed = hyper.seed.wrapping_add(2 * round as u64 + 1);
        train_phase(&mut params, seg_data, hyper, round, seed, &mut log)?;
        train_phase(&mut params, sal_data, hyper, round, seed.wrapping_add(1), &mut log)?;
    }
    Ok(params)
}

/// A segmentation set and a saliency set of synthetic disc scenes; class 1 =
/// disc = salient, class 0 = ground.
pub fn synthetic_datasets(count: usize, size: usize, seed: u64) -> Result<(TrainBatch, TrainBatch)> {
    let make = |offset: u64| -> Result<(Tensor4, Vec<f64>)> {
        let scenes: Vec<_> = (0..count as u64)
            .map(|i| crate::synth::disc_scene(size, size, seed.wrapping_mul(1000).wrapping_add(offset + i)))
            .collect();
        let images: Vec<RasterImage> = scenes.iter().map(|s| s.image.clone()).collect();
        let masks = scenes
            .iter()
            .flat_map(|s| s.ground_truth.values().iter().copied())
            .collect();
        Ok((Tensor4::from_images(&images)?, masks))
    };
    let (seg_images, seg_masks) = make(0)?;
    let (sal_images, sal_masks) = make(count as u64)?;
    Ok((
        TrainBatch::Segmentation {
            images: seg_images,
            labels: seg_masks.iter().map(|&m| m as usize).collect(),
        },
        TrainBatch::Saliency {
            images: sal_images,
            masks: sal_masks,
        },
    ))
}

/// Saliency-head prediction for one image at its own resolution. Odd sizes
/// are handled by resizing to the next even size and back.
pub fn predict_saliency(params: &TinyNetParams, image: &RasterImage) -> Result<SaliencyMap> {
    let rgb = image.to_rgb();
    let (w, h) = (rgb.width(), rgb.height());
    let (ew, eh) = (w.max(2).next_multiple_of(2), h.max(2).next_multiple_of(2));
    let input = if (ew, eh) == (w, h) {
        rgb
    } else {
        resize_bilinear(&rgb, ew, eh)?
    };
    let out = forward(params, &Tensor4::from_images(&[input])?, Head::Saliency)?;
    let map = RasterImage::new(ew, eh, 1, out.data.iter().map(|v| v.clamp(0.0, 1.0)).collect())?;
    let map = if (ew, eh) == (w, h) {
        map
    } else {
        resize_bilinear(&map, w, h)?
    };
    SaliencyMap::try_from(&map)
}

// ---------------------------------------------------------------------------
// Checkpoints

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"TNET1";

/// Serializes every tensor: magic `TNET1`, then per tensor the name length
/// (u32), UTF-8 name, rank (u32), dims (u64 each) and values (f64), all
/// little-endian.
pub fn write_checkpoint(params: &TinyNetParams, mut out: impl Write) -> std::io::Result<()> {
    out.write_all(CHECKPOINT_MAGIC)?;
    for p in params.tensors() {
        out.write_all(&(p.name.len() as u32).to_le_bytes())?;
        out.write_all(p.name.as_bytes())?;
        out.write_all(&(p.shape.len() as u32).to_le_bytes())?;
        for &d in &p.shape {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in &p.data {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn checkpoint_bytes(params: &TinyNetParams) -> Vec<u8> {
    let mut buf = Vec::new();
    write_checkpoint(params, &mut buf).expect("writing to a Vec cannot fail");
    buf
}

fn read_exact_or<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::Checkpoint(format!("reading {what}: {e}")))
}

pub fn read_checkpoint(mut input: impl Read) -> Result<TinyNetParams> {
    let mut magic = [0u8; 5];
    read_exact_or(&mut input, &mut magic, "magic")?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic, expected TNET1".into()));
    }
    let mut rest = Vec::new();
    input
        .read_to_end(&mut rest)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut cur = &rest[..];
    let mut tensors = Vec::new();
    while !cur.is_empty() {
        let mut u32b = [0u8; 4];
        read_exact_or(&mut cur, &mut u32b, "name length")?;
        let mut name = vec![0u8; u32::from_le_bytes(u32b) as usize];
        read_exact_or(&mut cur, &mut name, "name")?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        read_exact_or(&mut cur, &mut u32b, "rank")?;
        let rank = u32::from_le_bytes(u32b) as usize;
        if rank > 8 {
            return Err(Error::Checkpoint(format!("{name}: implausible rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut u64b = [0u8; 8];
            read_exact_or(&mut cur, &mut u64b, "dims")?;
            shape.push(u64::from_le_bytes(u64b) as usize);
        }
        let len: usize = shape.iter().product();
        if len * 8 > cur.len() {
            return Err(Error::Checkpoint(format!("{name}: truncated values")));
        }
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            let mut f = [0u8; 8];
            read_exact_or(&mut cur, &mut f, "values")?;
            data.push(f64::from_le_bytes(f));
        }
        tensors.push(Param { name, shape, data });
    }

    let conv1 = tensors
        .first()
        .filter(|t| t.name == "shared.conv1.weight" && t.shape.len() == 4)
        .ok_or_else(|| Error::Checkpoint("missing shared.conv1.weight".into()))?;
    let seg_score = tensors
        .get(6)
        .filter(|t| t.shape.len() == 4)
        .ok_or_else(|| Error::Checkpoint("missing segmentation head".into()))?;
    let arch = Architecture {
        in_channels: conv1.shape[1],
        widths: [
            conv1.shape[0],
            tensors.get(2).map_or(0, |t| t.shape[0]),
            tensors.get(4).map_or(0, |t| t.shape[0]),
        ],
        classes: seg_score.shape[0],
    };
    let mut params = TinyNetParams::zeros(arch);
    if tensors.len() != params.tensors().count() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, found {}",
            params.tensors().count(),
            tensors.len()
        )));
    }
    for (slot, t) in params.tensors_mut().zip(tensors) {
        if slot.name != t.name || slot.shape != t.shape {
            return Err(Error::Checkpoint(format!(
                "expected {} {:?}, found {} {:?}",
                slot.name, slot.shape, t.name, t.shape
            )));
        }
        slot.data = t.data;
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_images(n: usize, h: usize, w: usize, seed: u64) -> Tensor4 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * 3 * h * w).map(|_| rng.gen_range(0.0..1.0)).collect();
        Tensor4::new([n, 3, h, w], data).unwrap()
    }

    #[test]
    fn zero_weights_give_uniform_outputs() {
        let arch = Architecture {
            classes: 21,
            ..Architecture::default()
        };
        let params = TinyNetParams::zeros(arch);
        let x = random_images(2, 8, 6, 1);
        let seg = forward(&params, &x, Head::Segmentation).unwrap();
        assert_eq!(seg.shape(), [2, 21, 8, 6]);
        assert!(seg.data().iter().all(|&p| (p - 1.0 / 21.0).abs() < 1e-15));
        let sal = forward(&params, &x, Head::Saliency).unwrap();
        assert_eq!(sal.shape(), [2, 1, 8, 6]);
        assert!(sal.data().iter().all(|&p| p == 0.5));
    }

    #[test]
    fn bilinear_upsampling_preserves_constants() {
        let k = Param {
            name: "k".into(),
            shape: vec![1, 4, 4],
            data: bilinear_kernel().to_vec(),
        };
        let x = Tensor4::new([1, 1, 3, 5], vec![0.7; 15]).unwrap();
        let up = upsample_forward(&x, &k);
        assert_eq!(up.shape(), [1, 1, 6, 10]);
        assert!(up.data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
    }

    #[test]
    fn bilinear_upsampling_interpolates_ramps() {
        let k = Param {
            name: "k".into(),
            shape: vec![1, 4, 4],
            data: bilinear_kernel().to_vec(),
        };
        let x = Tensor4::new([1, 1, 1, 3], vec![0.0, 1.0, 2.0]).unwrap();
        let up = upsample_forward(&x, &k);
        // Half-pixel aligned bilinear with edge clamping.
        let row = [0.0, 0.25, 0.75, 1.25, 1.75, 2.0];
        assert_eq!(up.shape(), [1, 1, 2, 6]);
        assert_eq!(&up.data()[..6], &row);
        assert_eq!(&up.data()[6..], &row);
    }

    #[test]
    fn odd_input_rejected() {
        let params = TinyNetParams::zeros(Architecture::default());
        let x = random_images(1, 7, 8, 0);
        assert!(matches!(forward(&params, &x, Head::Saliency), Err(Error::Shape(_))));
    }

    #[test]
    fn seg_loss_values() {
        let uniform = Tensor4::new([1, 21, 2, 3], vec![1.0 / 21.0; 126]).unwrap();
        let j = seg_loss(&uniform, &[0, 3, 20, 1, 1, 7]).unwrap();
        assert!((j - 6.0 * 21f64.ln()).abs() < 1e-12);
        assert!((21f64.ln() - 3.0445).abs() < 1e-4);

        let mut onehot = vec![0.0; 2 * 4];
        let labels = [1, 0, 1, 1];
        for (p, &l) in labels.iter().enumerate() {
            onehot[l * 4 + p] = 1.0;
        }
        let probs = Tensor4::new([1, 2, 2, 2], onehot).unwrap();
        assert!(seg_loss(&probs, &labels).unwrap() < 1e-12);
        assert!(seg_loss(&probs, &[2, 0, 0, 0]).is_err());
    }

    #[test]
    fn sal_loss_values() {
        let m = vec![1.0, 0.0, 1.0, 1.0];
        let pred = Tensor4::new([1, 1, 2, 2], m.clone()).unwrap();
        assert_eq!(sal_loss(&pred, &m).unwrap(), 0.0);
        let zeros = Tensor4::zeros([1, 1, 3, 4]);
        assert_eq!(sal_loss(&zeros, &[1.0; 12]).unwrap(), 12.0);
    }

    #[test]
    fn sgd_rules() {
        let mut p = vec![1.0, -2.0];
        let mut v = vec![0.0, 0.0];
        sgd_step(&mut p, &[0.0, 0.0], &mut v, 0.1, 0.9, 0.0);
        assert_eq!(p, vec![1.0, -2.0]);

        let mut v = vec![0.0, 0.0];
        sgd_step(&mut p, &[0.5, -1.0], &mut v, 0.1, 0.0, 0.0);
        assert_eq!(p, vec![1.0 - 0.05, -2.0 + 0.1]);

        // f(x) = x²/2, grad = x, from x = 1 with lr 0.1, momentum 0.9:
        // v1 = −0.1, x1 = 0.9; v2 = 0.9·(−0.1) − 0.1·0.9 = −0.18, x2 = 0.72.
        let (mut x, mut v) = (vec![1.0], vec![0.0]);
        for _ in 0..2 {
            let g = x.clone();
            sgd_step(&mut x, &g, &mut v, 0.1, 0.9, 0.0);
        }
        assert!((x[0] - 0.72).abs() < 1e-15);
        assert!((v[0] + 0.18).abs() < 1e-15);
    }

    #[test]
    fn perfect_saliency_prediction_has_zero_head_gradient() {
        let params = TinyNetParams::init(Architecture::default(), 3);
        let images = random_images(1, 4, 4, 9);
        let pred = forward(&params, &images, Head::Saliency).unwrap();
        // Masks must be binary, so test the loss gradient directly: a target
        // equal to the prediction gives dJ/dlogits = 0 everywhere.
        let dl: Vec<f64> = pred
            .data()
            .iter()
            .map(|&p| 2.0 * (p - p) * p * (1.0 - p))
            .collect();
        assert!(dl.iter().all(|&g| g == 0.0));
        assert_eq!(sal_loss(&pred, pred.data()).unwrap(), 0.0);
    }

    #[test]
    fn checkpoint_round_trip_and_errors() {
        let params = TinyNetParams::init(Architecture::default(), 11);
        let bytes = checkpoint_bytes(&params);
        assert_eq!(&bytes[..5], b"TNET1");
        assert_eq!(read_checkpoint(&bytes[..]).unwrap(), params);
        assert!(read_checkpoint(&bytes[..bytes.len() - 3]).is_err());
        assert!(read_checkpoint(&b"TNET2"[..]).is_err());
    }

    #[test]
    fn predict_handles_odd_sizes() {
        let params = TinyNetParams::init(Architecture::default(), 5);
        let img = RasterImage::filled(7, 5, 3, 0.4).unwrap();
        let map = predict_saliency(&params, &img).unwrap();
        assert_eq!((map.width(), map.height()), (7, 5));
        assert!(map.values().iter().all(|&v| v > 0.0 && v < 1.0));
    }
}
