//! Multiplicative Gamma speckle and synthetic training pairs.
//!
//! A speckled observation is `Y = F · X` where `F` is i.i.d. Gamma with
//! shape `L` and scale `1/L` (unit mean, variance `1/L`).

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::image::{load_image, quantize, resize_bilinear, save_image, write_raw, Image};
use crate::rng::{derive_seed, Rng};

/// Speckle density `L^L f^(L-1) e^(-L f) / Γ(L)`.
pub fn gamma_pdf(f: f64, looks: f64) -> Result<f64> {
    if !(f >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "speckle value must be nonnegative, got {f}"
        )));
    }
    check_looks(looks)?;
    if f == 0.0 {
        return Ok(if looks == 1.0 { 1.0 } else { 0.0 });
    }
    let log_density = looks * looks.ln() - ln_gamma(looks) + (looks - 1.0) * f.ln() - looks * f;
    Ok(log_density.exp())
}

fn check_looks(looks: f64) -> Result<()> {
    if !(looks >= 1.0) || !looks.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "number of looks must be a finite value >= 1, got {looks}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeckleParams {
    pub looks: f64,
    pub seed: u64,
}

impl SpeckleParams {
    pub fn new(looks: f64, seed: u64) -> Result<Self> {
        check_looks(looks)?;
        Ok(Self { looks, seed })
    }
}

/// Unit-mean Gamma sampler (Marsaglia–Tsang, valid for shape >= 1).
#[derive(Debug, Clone, Copy)]
pub struct GammaSampler {
    looks: f64,
    d: f64,
    c: f64,
}

impl GammaSampler {
    pub fn new(looks: f64) -> Result<Self> {
        check_looks(looks)?;
        let d = looks - 1.0 / 3.0;
        Ok(Self {
            looks,
            d,
            c: 1.0 / (9.0 * d).sqrt(),
        })
    }

    pub fn looks(&self) -> f64 {
        self.looks
    }

    pub fn sample(&self, rng: &mut Rng) -> f64 {
        loop {
            let x = rng.standard_normal();
            let t = 1.0 + self.c * x;
            if t <= 0.0 {
                continue;
            }
            let v = t * t * t;
            let u = rng.uniform();
            let x2 = x * x;
            if u < 1.0 - 0.0331 * x2 * x2
                || u.ln() < 0.5 * x2 + self.d * (1.0 - v + v.ln())
            {
                return self.d * v / self.looks;
            }
        }
    }
}

/// Nonnegative per-pixel speckle multipliers.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeckleField(Image);

impl SpeckleField {
    pub fn new(field: Image) -> Result<Self> {
        if field.data().iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidArgument(
                "speckle field must be nonnegative".into(),
            ));
        }
        Ok(Self(field))
    }

    pub fn as_image(&self) -> &Image {
        &self.0
    }

    pub fn into_image(self) -> Image {
        self.0
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn data(&self) -> &[f32] {
        self.0.data()
    }
}

/// Draws an i.i.d. speckle field seeded by `params.seed`.
pub fn sample_speckle(width: usize, height: usize, params: SpeckleParams) -> Result<SpeckleField> {
    let mut rng = Rng::new(params.seed);
    sample_speckle_with(width, height, params.looks, &mut rng)
}

pub fn sample_speckle_with(
    width: usize,
    height: usize,
    looks: f64,
    rng: &mut Rng,
) -> Result<SpeckleField> {
    let sampler = GammaSampler::new(looks)?;
    let data = (0..width * height)
        .map(|_| sampler.sample(rng) as f32)
        .collect();
    Ok(SpeckleField(Image::new(width, height, data)?))
}

/// `Y = F · X`, elementwise and unclamped.
pub fn apply_speckle(clean: &Image, field: &SpeckleField) -> Result<Image> {
    clean.ensure_same_shape(field.as_image(), "apply_speckle")?;
    let data = clean
        .data()
        .iter()
        .zip(field.data())
        .map(|(&x, &f)| x * f)
        .collect();
    Image::new(clean.width(), clean.height(), data)
}

/// One line of a dataset manifest. Paths are relative to the manifest file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub clean_path: String,
    pub noisy_path: String,
    pub looks: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub base_dir: PathBuf,
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut reader = csv::Reader::from_path(path).map_err(|e| Error::io(path, e))?;
        let rows = reader
            .deserialize()
            .collect::<std::result::Result<Vec<ManifestRow>, _>>()
            .map_err(|e| Error::io(path, e))?;
        Ok(Self {
            base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
            rows,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut writer = csv::Writer::from_path(path).map_err(|e| Error::io(path, e))?;
        for row in &self.rows {
            writer.serialize(row).map_err(|e| Error::io(path, e))?;
        }
        writer.flush().map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, relative: &str) -> PathBuf {
        self.base_dir.join(relative)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Outcome of [`generate_dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSummary {
    pub pairs: usize,
    pub manifest: PathBuf,
    /// Empirical mean of every speckle draw.
    pub speckle_mean: f64,
    /// Empirical (population) variance of every speckle draw.
    pub speckle_var: f64,
}

const IMAGE_EXTENSIONS: &[&str] = &["png", "pgm", "pnm", "ppm"];

fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let known = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        if path.is_file() && known {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Builds speckled/clean training pairs from every image in `clean_dir`.
///
/// Each source is resized to `size × size` and quantized to 8 bits, so the
/// clean PNG written to disk is exactly the `X` the speckle multiplied. The
/// noisy `Y` is stored as raw `f32` (`noisy/*.spkl`) with an 8-bit preview.
/// Image `i` draws its speckle from `derive_seed(seed, i)`.
pub fn generate_dataset(
    clean_dir: impl AsRef<Path>,
    out_dir: impl AsRef<Path>,
    looks: f64,
    size: usize,
    seed: u64,
) -> Result<DatasetSummary> {
    let clean_dir = clean_dir.as_ref();
    let out_dir = out_dir.as_ref();
    check_looks(looks)?;
    if size == 0 {
        return Err(Error::InvalidArgument("size must be positive".into()));
    }
    let sources = list_images(clean_dir)?;
    if sources.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no PNG/PGM images in {}",
            clean_dir.display()
        )));
    }
    for sub in ["clean", "noisy"] {
        let d = out_dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }

    let results: Vec<Result<(ManifestRow, f64, f64)>> = sources
        .par_iter()
        .enumerate()
        .map(|(i, src)| {
            let stem = src
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("image");
            let name = format!("{i:05}_{stem}");
            let image_seed = derive_seed(seed, i as u64);

            let resized = resize_bilinear(&load_image(src)?, size, size)?;
            let clean = resized.map(|v| quantize(v) as f32 / 255.0)?;
            let field = sample_speckle(size, size, SpeckleParams::new(looks, image_seed)?)?;
            let noisy = apply_speckle(&clean, &field)?;

            let clean_rel = format!("clean/{name}.png");
            let noisy_rel = format!("noisy/{name}.spkl");
            save_image(&clean, out_dir.join(&clean_rel))?;
            write_raw(&noisy, out_dir.join(&noisy_rel))?;
            save_image(&noisy, out_dir.join(format!("noisy/{name}_preview.png")))?;

            let n = field.data().len() as f64;
            let sum: f64 = field.data().iter().map(|&v| v as f64).sum();
            let sum_sq: f64 = field.data().iter().map(|&v| (v as f64).powi(2)).sum();
            let row = ManifestRow {
                clean_path: clean_rel,
                noisy_path: noisy_rel,
                looks,
                seed: image_seed,
            };
            Ok((row, sum / n, sum_sq / n))
        })
        .collect();

    let mut rows = Vec::with_capacity(results.len());
    let (mut mean_acc, mut sq_acc) = (0.0, 0.0);
    for r in results {
        let (row, m, sq) = r?;
        rows.push(row);
        mean_acc += m;
        sq_acc += sq;
    }
    // Every image has the same pixel count, so per-image moments average.
    let count = rows.len() as f64;
    let speckle_mean = mean_acc / count;
    let speckle_var = sq_acc / count - speckle_mean * speckle_mean;

    let manifest_path = out_dir.join("manifest.csv");
    Manifest {
        base_dir: out_dir.to_path_buf(),
        rows,
    }
    .write(&manifest_path)?;

    Ok(DatasetSummary {
        pairs: count as usize,
        manifest: manifest_path,
        speckle_mean,
        speckle_var,
    })
}
