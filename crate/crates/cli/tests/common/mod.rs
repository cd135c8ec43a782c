#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use saliency_core::image::{write_pgm, write_pnm, BitDepth};
use saliency_core::synth::{box_blur, disc_scene};
use saliency_core::RasterImage;
use sha2::{Digest, Sha256};

pub fn sal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sal"))
        .args(args)
        .env_remove("SAL_THREADS")
        .output()
        .expect("sal binary runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

/// Writes a disc scene as `<dir>/images/<stem>.ppm` plus a blurred copy of
/// its ground truth as `<dir>/deep/<stem>.pgm` and the mask as `<dir>/gt/<stem>.pgm`.
pub fn write_scene(dir: &Path, stem: &str, size: usize, seed: u64) -> (PathBuf, PathBuf) {
    let scene = disc_scene(size, size, seed);
    for sub in ["images", "deep", "gt"] {
        fs::create_dir_all(dir.join(sub)).unwrap();
    }
    let image = dir.join("images").join(format!("{stem}.ppm"));
    let deep = dir.join("deep").join(format!("{stem}.pgm"));
    write_pnm(&scene.image, &image, BitDepth::Eight).unwrap();
    write_pgm(&box_blur(&scene.ground_truth, 9).to_raster(), &deep, BitDepth::Eight).unwrap();
    write_pgm(&scene.ground_truth.to_raster(), dir.join("gt").join(format!("{stem}.pgm")), BitDepth::Eight)
        .unwrap();
    (image, deep)
}

pub fn uniform_image(path: &Path, w: usize, h: usize) {
    let img = RasterImage::filled(w, h, 3, 0.5).unwrap();
    write_pnm(&img, path, BitDepth::Eight).unwrap();
}

pub fn sha(path: &Path) -> String {
    let digest = Sha256::digest(fs::read(path).unwrap());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Hashes of every file in `dir` except those whose name matches `skip`.
pub fn dir_hashes(dir: &Path, skip: &[&str]) -> Vec<(String, String)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .filter(|p| !skip.iter().any(|s| p.file_name().unwrap().to_str().unwrap() == *s))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), sha(&p)))
        .collect();
    out.sort();
    out
}
