#![allow(dead_code)]

use std::path::{Path, PathBuf};

use idcnn::rng::Rng;
use idcnn::{Dims, Tensor4};

pub fn natural_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/natural")
}

/// Sorted paths of the natural-image fixtures.
pub fn natural_images() -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(natural_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "png"))
        .collect();
    files.sort();
    files
}

/// Copies the first `count` fixtures into `dir` (created) and returns it.
pub fn copy_fixtures(dir: &Path, count: usize) -> PathBuf {
    std::fs::create_dir_all(dir).unwrap();
    for src in natural_images().into_iter().take(count) {
        std::fs::copy(&src, dir.join(src.file_name().unwrap())).unwrap();
    }
    dir.to_path_buf()
}

pub fn uniform_tensor(dims: Dims, lo: f64, hi: f64, seed: u64) -> Tensor4<f64> {
    let mut rng = Rng::new(seed);
    let data = (0..dims.len()).map(|_| lo + (hi - lo) * rng.uniform()).collect();
    Tensor4::from_vec(dims, data).unwrap()
}

/// Every file under `dir`, relative path and bytes, sorted by path.
pub fn tree_bytes(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}
