//! Raster images, binary PNM I/O, sRGB to CIELab conversion and bilinear
//! resizing.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// A row-major grid of intensities in `[0, 1]` with one or three channels.
#[derive(Clone, Debug, PartialEq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl RasterImage {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidInput(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::Shape(format!(
                "{}x{}x{} image needs {} values, got {}",
                width,
                height,
                channels,
                width * height * channels,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::InvalidInput(format!(
                "pixel value {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Builds an image from a per-pixel closure returning channel values;
    /// values are clamped to `[0, 1]`.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c).clamp(0.0, 1.0));
                }
            }
        }
        Self::new(width, height, channels, data)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Collapses a color image to luma (Rec. 601 weights); grayscale images
    /// are returned unchanged.
    pub fn to_gray(&self) -> RasterImage {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| (0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]).clamp(0.0, 1.0))
            .collect();
        RasterImage {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    /// Replicates a single channel into three.
    pub fn to_rgb(&self) -> RasterImage {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        RasterImage {
            width: self.width,
            height: self.height,
            channels: 3,
            data,
        }
    }
}

/// CIELab pixels, each channel normalized to `[0, 1]`:
/// `L / 100`, `(a + 128) / 255`, `(b + 128) / 255`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabImage {
    width: usize,
    height: usize,
    data: Vec<[f64; 3]>,
}

impl LabImage {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[[f64; 3]] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.data[y * self.width + x]
    }

    /// Builds a Lab image directly from normalized pixels (clamped to `[0, 1]`).
    pub fn from_normalized(width: usize, height: usize, data: Vec<[f64; 3]>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::Shape(format!(
                "{}x{} Lab image needs {} pixels, got {}",
                width,
                height,
                width * height,
                data.len()
            )));
        }
        let data = data
            .into_iter()
            .map(|p| p.map(|v| if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 }))
            .collect();
        Ok(Self {
            width,
            height,
            data,
        })
    }
}

// ---------------------------------------------------------------------------
// PNM

pub fn read_pnm(path: impl AsRef<Path>) -> Result<RasterImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pnm(&bytes)
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn skip_whitespace_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b' ' | b'\t' | b'\n' | b'\r' | 0x0b | 0x0c => self.pos += 1,
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::parse(start, format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::parse(start, format!("{what} out of range")))
    }
}

/// Parses a binary P5 (grayscale) or P6 (RGB) image. Samples are divided by
/// maxval; 16-bit samples are big-endian.
pub fn parse_pnm(bytes: &[u8]) -> Result<RasterImage> {
    if bytes.len() < 2 {
        return Err(Error::parse(0, "file too short for PNM magic"));
    }
    let channels = match &bytes[..2] {
        b"P5" => 1,
        b"P6" => 3,
        other => {
            return Err(Error::parse(
                0,
                format!(
                    "unsupported magic {:?} (expected P5 or P6)",
                    String::from_utf8_lossy(other)
                ),
            ))
        }
    };
    let mut cur = HeaderCursor { bytes, pos: 2 };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval_at = cur.pos;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::parse(maxval_at, "zero image dimension"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::parse(maxval_at, format!("maxval {maxval} outside 1..=65535")));
    }
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(Error::parse(cur.pos, "expected a single whitespace after maxval")),
    }
    let body = &bytes[cur.pos..];
    let samples = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| Error::parse(0, "image dimensions overflow"))?;
    let bytes_per_sample = if maxval < 256 { 1 } else { 2 };
    let needed = samples * bytes_per_sample;
    if body.len() < needed {
        return Err(Error::parse(
            cur.pos + body.len(),
            format!("truncated body: expected {needed} bytes, found {}", body.len()),
        ));
    }
    let scale = maxval as f64;
    let data: Vec<f64> = if bytes_per_sample == 1 {
        body[..needed].iter().map(|&b| (b as f64 / scale).min(1.0)).collect()
    } else {
        body[..needed]
            .chunks_exact(2)
            .map(|c| (u16::from_be_bytes([c[0], c[1]]) as f64 / scale).min(1.0))
            .collect()
    };
    RasterImage::new(width, height, channels, data)
}

/// Sample depth for written PNM files.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    pub fn maxval(self) -> u32 {
        match self {
            BitDepth::Eight => 255,
            BitDepth::Sixteen => 65535,
        }
    }

    pub fn from_bits(bits: u32) -> Result<Self> {
        match bits {
            8 => Ok(BitDepth::Eight),
            16 => Ok(BitDepth::Sixteen),
            _ => Err(Error::InvalidInput(format!("bit depth must be 8 or 16, got {bits}"))),
        }
    }
}

/// Encodes an image as P5 or P6 depending on its channel count, rounding each
/// value to the nearest level.
pub fn encode_pnm(image: &RasterImage, depth: BitDepth) -> Vec<u8> {
    let magic = if image.channels == 1 { "P5" } else { "P6" };
    let maxval = depth.maxval();
    let mut out = format!("{magic}\n{} {}\n{maxval}\n", image.width, image.height).into_bytes();
    let m = maxval as f64;
    for &v in &image.data {
        let level = (v * m).round().clamp(0.0, m) as u32;
        match depth {
            BitDepth::Eight => out.push(level as u8),
            BitDepth::Sixteen => out.extend_from_slice(&(level as u16).to_be_bytes()),
        }
    }
    out
}

pub fn write_pgm(map: &RasterImage, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
    if map.channels != 1 {
        return Err(Error::Shape(format!(
            "PGM output needs a single-channel map, got {} channels",
            map.channels
        )));
    }
    write_pnm(map, path, depth)
}

pub fn write_pnm(image: &RasterImage, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pnm(image, depth)).map_err(|e| Error::io(path, e))
}

/// Writes integer labels as a 16-bit P5 image where gray level = label.
pub fn write_label_pgm(
    labels: &[u32],
    width: usize,
    height: usize,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    if labels.len() != width * height {
        return Err(Error::Shape(format!(
            "{} labels for a {width}x{height} map",
            labels.len()
        )));
    }
    if let Some(&big) = labels.iter().find(|&&l| l > u16::MAX as u32) {
        return Err(Error::InvalidInput(format!("label {big} does not fit in 16 bits")));
    }
    let mut out = format!("P5\n{width} {height}\n65535\n").into_bytes();
    for &l in labels {
        out.extend_from_slice(&(l as u16).to_be_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a 16-bit label PGM written by [`write_label_pgm`].
pub fn read_label_pgm(path: impl AsRef<Path>) -> Result<(Vec<u32>, usize, usize)> {
    let image = read_pnm(path)?;
    if image.channels != 1 {
        return Err(Error::Shape("label maps must be P5".into()));
    }
    let labels = image.data.iter().map(|v| (v * 65535.0).round() as u32).collect();
    Ok((labels, image.width, image.height))
}

// ---------------------------------------------------------------------------
// Color

// sRGB primaries, D65 white.
const SRGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412_456_4, 0.357_576_1, 0.180_437_5],
    [0.212_672_9, 0.715_152_2, 0.072_175_0],
    [0.019_333_9, 0.119_192_0, 0.950_304_1],
];
const D65_WHITE: [f64; 3] = [0.950_47, 1.0, 1.088_83];

fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.040_45 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn lab_f(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

/// Raw CIELab `(L, a, b)` of one sRGB pixel with components in `[0, 1]`.
pub fn srgb_pixel_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let lin = rgb.map(srgb_to_linear);
    let mut xyz = [0.0; 3];
    for (row, out) in SRGB_TO_XYZ.iter().zip(xyz.iter_mut()) {
        *out = row[0] * lin[0] + row[1] * lin[1] + row[2] * lin[2];
    }
    let fx = lab_f(xyz[0] / D65_WHITE[0]);
    let fy = lab_f(xyz[1] / D65_WHITE[1]);
    let fz = lab_f(xyz[2] / D65_WHITE[2]);
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// Maps raw Lab into the `[0, 1]` cube used for all feature computations.
pub fn normalize_lab(lab: [f64; 3]) -> [f64; 3] {
    [
        (lab[0] / 100.0).clamp(0.0, 1.0),
        ((lab[1] + 128.0) / 255.0).clamp(0.0, 1.0),
        ((lab[2] + 128.0) / 255.0).clamp(0.0, 1.0),
    ]
}

pub fn srgb_to_lab(image: &RasterImage) -> Result<LabImage> {
    if image.channels != 3 {
        return Err(Error::Shape(format!(
            "sRGB to Lab needs 3 channels, got {}",
            image.channels
        )));
    }
    let data = image
        .data
        .chunks_exact(3)
        .map(|p| normalize_lab(srgb_pixel_to_lab([p[0], p[1], p[2]])))
        .collect();
    Ok(LabImage {
        width: image.width,
        height: image.height,
        data,
    })
}

// ---------------------------------------------------------------------------
// Resize

// Corner-aligned: output pixel i samples input coordinate i·(n_in−1)/(n_out−1).
fn source_coord(i: usize, n_in: usize, n_out: usize) -> f64 {
    if n_out == 1 {
        (n_in - 1) as f64 / 2.0
    } else {
        (i * (n_in - 1)) as f64 / (n_out - 1) as f64
    }
}

pub fn resize_bilinear(image: &RasterImage, new_w: usize, new_h: usize) -> Result<RasterImage> {
    if new_w == 0 || new_h == 0 {
        return Err(Error::InvalidInput(format!(
            "resize target must be at least 1x1, got {new_w}x{new_h}"
        )));
    }
    let ch = image.channels;
    let xs: Vec<(usize, usize, f64)> = (0..new_w)
        .map(|x| {
            let s = source_coord(x, image.width, new_w);
            let x0 = s.floor() as usize;
            let x1 = (x0 + 1).min(image.width - 1);
            (x0, x1, s - x0 as f64)
        })
        .collect();
    let mut data = Vec::with_capacity(new_w * new_h * ch);
    for y in 0..new_h {
        let s = source_coord(y, image.height, new_h);
        let y0 = s.floor() as usize;
        let y1 = (y0 + 1).min(image.height - 1);
        let fy = s - y0 as f64;
        for &(x0, x1, fx) in &xs {
            for c in 0..ch {
                let top = lerp(image.get(x0, y0, c), image.get(x1, y0, c), fx);
                let bottom = lerp(image.get(x0, y1, c), image.get(x1, y1, c), fx);
                data.push(lerp(top, bottom, fy).clamp(0.0, 1.0));
            }
        }
    }
    RasterImage::new(new_w, new_h, ch, data)
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    if t == 0.0 {
        a
    } else {
        a + (b - a) * t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pnm(header: &str, body: &[u8]) -> Vec<u8> {
        let mut v = header.as_bytes().to_vec();
        v.extend_from_slice(body);
        v
    }

    #[test]
    fn p5_endpoint_scaling() {
        let img = parse_pnm(&pnm("P5\n2 1\n255\n", &[0, 255])).unwrap();
        assert_eq!(img.channels(), 1);
        assert_eq!(img.data(), &[0.0, 1.0]);
    }

    #[test]
    fn p6_endpoint_scaling() {
        let img = parse_pnm(&pnm("P6\n1 1\n255\n", &[255, 0, 0])).unwrap();
        assert_eq!(img.channels(), 3);
        assert_eq!(img.data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn p5_sixteen_bit_is_big_endian() {
        let img = parse_pnm(&pnm("P5\n2 1\n65535\n", &[0xff, 0xff, 0x80, 0x00])).unwrap();
        assert_eq!(img.data()[0], 1.0);
        assert_eq!(img.data()[1], 32768.0 / 65535.0);
    }

    #[test]
    fn header_comments_are_skipped() {
        let img = parse_pnm(&pnm("P5 # a comment\n2 # w\n1\n255\n", &[7, 9])).unwrap();
        assert_eq!(img.width(), 2);
    }

    #[test]
    fn parse_errors_name_offsets() {
        match parse_pnm(b"P3\n1 1\n255\n0 0 0") {
            Err(Error::Parse { offset, message }) => {
                assert_eq!(offset, 0);
                assert!(message.contains("magic"));
            }
            other => panic!("unexpected {other:?}"),
        }
        match parse_pnm(&pnm("P5\n4 4\n255\n", &[1, 2, 3])) {
            Err(Error::Parse { offset, message }) => {
                assert_eq!(offset, 11 + 3);
                assert!(message.contains("truncated"));
            }
            other => panic!("unexpected {other:?}"),
        }
        match parse_pnm(b"P5\nx 1\n255\n") {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_pnm(b"P5\n1 1\n70000\n\0\0"),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn write_pgm_rounding() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("half.pgm");
        let half = RasterImage::filled(3, 2, 1, 0.5).unwrap();
        write_pgm(&half, &path, BitDepth::Eight).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.ends_with(&[128; 6]));

        let ones = RasterImage::filled(3, 2, 1, 1.0).unwrap();
        let enc = encode_pnm(&ones, BitDepth::Eight);
        assert!(enc.ends_with(&[255; 6]));
    }

    #[test]
    fn write_pgm_rejects_color() {
        let rgb = RasterImage::filled(2, 2, 3, 0.1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            write_pgm(&rgb, dir.path().join("x.pgm"), BitDepth::Eight),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn label_pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.pgm");
        let labels = vec![0, 1, 2, 199, 65535, 3];
        write_label_pgm(&labels, 3, 2, &path).unwrap();
        assert_eq!(read_label_pgm(&path).unwrap(), (labels, 3, 2));
    }

    #[test]
    fn lab_reference_points() {
        let white = srgb_pixel_to_lab([1.0, 1.0, 1.0]);
        assert!((white[0] - 100.0).abs() < 1e-3);
        assert!(white[1].abs() < 1e-2 && white[2].abs() < 1e-2);
        let n = normalize_lab(white);
        assert!((n[0] - 1.0).abs() < 1e-5);
        assert!((n[1] - 128.0 / 255.0).abs() < 1e-4);

        let black = normalize_lab(srgb_pixel_to_lab([0.0, 0.0, 0.0]));
        assert_eq!(black[0], 0.0);
    }

    #[test]
    fn resize_identity_and_constants() {
        let img = RasterImage::from_fn(5, 4, 3, |x, y, c| ((x * 7 + y * 3 + c) % 11) as f64 / 10.0)
            .unwrap();
        assert_eq!(resize_bilinear(&img, 5, 4).unwrap(), img);

        let flat = RasterImage::filled(3, 3, 1, 0.25).unwrap();
        let big = resize_bilinear(&flat, 17, 9).unwrap();
        assert!(big.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn resize_corner_aligned() {
        let img = RasterImage::new(2, 1, 1, vec![0.0, 1.0]).unwrap();
        let out = resize_bilinear(&img, 3, 1).unwrap();
        assert_eq!(out.data(), &[0.0, 0.5, 1.0]);
    }

    fn arb_gray() -> impl Strategy<Value = RasterImage> {
        (1usize..12, 1usize..12).prop_flat_map(|(w, h)| {
            proptest::collection::vec(0.0f64..=1.0, w * h)
                .prop_map(move |d| RasterImage::new(w, h, 1, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn pnm_round_trip_within_half_step(img in arb_gray(), sixteen in any::<bool>()) {
            let depth = if sixteen { BitDepth::Sixteen } else { BitDepth::Eight };
            let back = parse_pnm(&encode_pnm(&img, depth)).unwrap();
            let half_step = 0.5 / depth.maxval() as f64 + 1e-12;
            for (a, b) in img.data().iter().zip(back.data()) {
                prop_assert!((a - b).abs() <= half_step);
            }
        }

        #[test]
        fn lab_always_in_unit_cube(r in 0.0f64..=1.0, g in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let img = RasterImage::new(1, 1, 3, vec![r, g, b]).unwrap();
            let lab = srgb_to_lab(&img).unwrap();
            prop_assert!(lab.pixels()[0].iter().all(|v| (0.0..=1.0).contains(v)));
        }

        #[test]
        fn resize_preserves_range(img in arb_gray(), w in 1usize..20, h in 1usize..20) {
            let lo = img.data().iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = img.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let out = resize_bilinear(&img, w, h).unwrap();
            for &v in out.data() {
                prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }
    }
}
