//! Image quality metrics.
//!
//! Full-reference: PSNR, SSIM (11×11 Gaussian window, σ = 1.5,
//! K1 = 0.01, K2 = 0.03), and the universal quality index (8×8 sliding
//! window). No-reference: equivalent number of looks over a homogeneous
//! region. All arithmetic is `f64`.

use std::fmt::Write as _;
use std::io::Write;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::image::Image;

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 99.0;
/// ENL reported for a zero-variance region.
pub const ENL_CAP: f64 = 1e6;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const UQI_WINDOW: usize = 8;
/// UQI denominators at or below this are treated as zero (flat windows).
pub const UQI_FLAT_TOL: f64 = 1e-12;

pub fn mse(x: &Image, xhat: &Image) -> Result<f64> {
    x.ensure_same_shape(xhat, "mse")?;
    let sum: f64 = x
        .data()
        .iter()
        .zip(xhat.data())
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum();
    Ok(sum / x.len() as f64)
}

/// `10·log10(peak² / MSE)`, capped at [`PSNR_CAP_DB`] when MSE is zero.
pub fn psnr(x: &Image, xhat: &Image, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(Error::InvalidArgument(format!("peak must be positive, got {peak}")));
    }
    let e = mse(x, xhat)?;
    if e == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok(10.0 * (peak * peak / e).log10())
}

fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size / 2) as f64;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Separable valid-mode filter of a `w × h` grid.
fn filter_valid(data: &[f64], w: usize, h: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let (ow, oh) = (w - n + 1, h - n + 1);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|i| k[i] * data[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    (out, ow, oh)
}

/// Mean SSIM over all fully-contained windows, dynamic range 1.
pub fn ssim(x: &Image, xhat: &Image) -> Result<f64> {
    ssim_with_range(x, xhat, 1.0)
}

pub fn ssim_with_range(x: &Image, xhat: &Image, range: f64) -> Result<f64> {
    x.ensure_same_shape(xhat, "ssim")?;
    let (w, h) = (x.width(), x.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {w}x{h}"
        )));
    }
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);
    let k = gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA);
    let a: Vec<f64> = x.data().iter().map(|&v| v as f64).collect();
    let b: Vec<f64> = xhat.data().iter().map(|&v| v as f64).collect();
    let prod = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(u, v)| u * v).collect() };
    let (mu_a, ..) = filter_valid(&a, w, h, &k);
    let (mu_b, ..) = filter_valid(&b, w, h, &k);
    let (e_aa, ..) = filter_valid(&prod(&a, &a), w, h, &k);
    let (e_bb, ..) = filter_valid(&prod(&b, &b), w, h, &k);
    let (e_ab, ..) = filter_valid(&prod(&a, &b), w, h, &k);
    let total: f64 = (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / mu_a.len() as f64)
}

/// Summed-area table with a zero first row and column.
fn integral(data: impl Iterator<Item = f64>, w: usize, h: usize) -> Vec<f64> {
    let mut sat = vec![0.0; (w + 1) * (h + 1)];
    let vals: Vec<f64> = data.collect();
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += vals[y * w + x];
            sat[(y + 1) * (w + 1) + x + 1] = sat[y * (w + 1) + x + 1] + row;
        }
    }
    sat
}

fn box_sum(sat: &[f64], w: usize, x: usize, y: usize, size: usize) -> f64 {
    let s = w + 1;
    sat[(y + size) * s + x + size] - sat[y * s + x + size] - sat[(y + size) * s + x] + sat[y * s + x]
}

/// Mean universal quality index over every 8×8 window.
///
/// Windows whose index denominator vanishes are skipped; if every window is
/// skipped the result is 1 for identical images and 0 otherwise.
pub fn uqi(x: &Image, xhat: &Image) -> Result<f64> {
    x.ensure_same_shape(xhat, "uqi")?;
    let (w, h) = (x.width(), x.height());
    if w < UQI_WINDOW || h < UQI_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "UQI needs images of at least {UQI_WINDOW}x{UQI_WINDOW}, got {w}x{h}"
        )));
    }
    let a = || x.data().iter().map(|&v| v as f64);
    let b = || xhat.data().iter().map(|&v| v as f64);
    let sa = integral(a(), w, h);
    let sb = integral(b(), w, h);
    let saa = integral(a().map(|v| v * v), w, h);
    let sbb = integral(b().map(|v| v * v), w, h);
    let sab = integral(a().zip(b()).map(|(u, v)| u * v), w, h);
    let n = (UQI_WINDOW * UQI_WINDOW) as f64;
    let (mut total, mut used) = (0.0, 0usize);
    for y in 0..=h - UQI_WINDOW {
        for x0 in 0..=w - UQI_WINDOW {
            let bs = |t: &[f64]| box_sum(t, w, x0, y, UQI_WINDOW);
            let (ma, mb) = (bs(&sa) / n, bs(&sb) / n);
            let va = (bs(&saa) / n - ma * ma).max(0.0);
            let vb = (bs(&sbb) / n - mb * mb).max(0.0);
            let cov = bs(&sab) / n - ma * mb;
            if let Some(q) = uqi_window(ma, mb, va, vb, cov) {
                total += q;
                used += 1;
            }
        }
    }
    Ok(finish_uqi(total, used, x == xhat))
}

/// Index for one window from its moments; `None` when the window is flat.
pub(crate) fn uqi_window(ma: f64, mb: f64, va: f64, vb: f64, cov: f64) -> Option<f64> {
    let contrast_den = va + vb;
    let luminance_den = ma * ma + mb * mb;
    if contrast_den <= UQI_FLAT_TOL || luminance_den <= UQI_FLAT_TOL {
        return None;
    }
    Some((2.0 * cov / contrast_den) * (2.0 * ma * mb / luminance_den))
}

pub(crate) fn finish_uqi(total: f64, used: usize, identical: bool) -> f64 {
    match used {
        0 if identical => 1.0,
        0 => 0.0,
        _ => total / used as f64,
    }
}

/// Axis-aligned rectangle in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Region {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Region {
    pub fn new(x: usize, y: usize, w: usize, h: usize) -> Self {
        Self { x, y, w, h }
    }

    pub fn validate(&self, img: &Image) -> Result<()> {
        if self.w * self.h < 2 {
            return Err(Error::InvalidArgument(format!(
                "region {self} must cover at least 2 pixels"
            )));
        }
        if self.x + self.w > img.width() || self.y + self.h > img.height() {
            return Err(Error::InvalidArgument(format!(
                "region {self} outside {}x{} image",
                img.width(),
                img.height()
            )));
        }
        Ok(())
    }
}

impl std::fmt::Display for Region {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{},{},{},{}", self.x, self.y, self.w, self.h)
    }
}

impl FromStr for Region {
    type Err = Error;

    /// Parses `x,y,w,h`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<usize> = s
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidArgument(format!("region '{s}': {e}")))?;
        match parts[..] {
            [x, y, w, h] => Ok(Region { x, y, w, h }),
            _ => Err(Error::InvalidArgument(format!(
                "region '{s}' must be x,y,w,h"
            ))),
        }
    }
}

/// `mean² / variance` over `region`, with the unbiased variance estimator.
pub fn enl(img: &Image, region: Region) -> Result<f64> {
    region.validate(img)?;
    let values: Vec<f64> = (region.y..region.y + region.h)
        .flat_map(|y| (region.x..region.x + region.w).map(move |x| (x, y)))
        .map(|(x, y)| img.get(x, y) as f64)
        .collect();
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if var == 0.0 {
        return Ok(ENL_CAP);
    }
    Ok(mean * mean / var)
}

/// Full-reference scores for one image pair.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
    pub uqi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnlRow {
    pub image: String,
    pub region: Region,
    pub enl: f64,
}

/// Per-image metric rows plus aggregate means.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub peak: f64,
    pub rows: Vec<MetricRow>,
    pub enl_rows: Vec<EnlRow>,
}

impl MetricReport {
    pub fn new(peak: f64) -> Self {
        Self {
            peak,
            rows: Vec::new(),
            enl_rows: Vec::new(),
        }
    }

    /// Scores `test` against `reference` and appends the row.
    pub fn add_pair(&mut self, name: impl Into<String>, reference: &Image, test: &Image) -> Result<()> {
        self.rows.push(MetricRow {
            name: name.into(),
            psnr: psnr(reference, test, self.peak)?,
            ssim: ssim_with_range(reference, test, self.peak)?,
            uqi: uqi(reference, test)?,
        });
        Ok(())
    }

    pub fn add_enl(&mut self, image: impl Into<String>, img: &Image, region: Region) -> Result<()> {
        self.enl_rows.push(EnlRow {
            image: image.into(),
            region,
            enl: enl(img, region)?,
        });
        Ok(())
    }

    fn mean_of(&self, f: impl Fn(&MetricRow) -> f64) -> Option<f64> {
        (!self.rows.is_empty())
            .then(|| self.rows.iter().map(f).sum::<f64>() / self.rows.len() as f64)
    }

    pub fn mean_psnr(&self) -> Option<f64> {
        self.mean_of(|r| r.psnr)
    }

    pub fn mean_ssim(&self) -> Option<f64> {
        self.mean_of(|r| r.ssim)
    }

    pub fn mean_uqi(&self) -> Option<f64> {
        self.mean_of(|r| r.uqi)
    }

    pub fn mean_enl(&self) -> Option<f64> {
        (!self.enl_rows.is_empty()).then(|| {
            self.enl_rows.iter().map(|r| r.enl).sum::<f64>() / self.enl_rows.len() as f64
        })
    }

    /// CSV with a `mean` row appended to each section present.
    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        if !self.rows.is_empty() {
            writeln!(out, "name,psnr_db,ssim,uqi,peak")?;
            for r in &self.rows {
                writeln!(out, "{},{:.6},{:.6},{:.6},{}", r.name, r.psnr, r.ssim, r.uqi, self.peak)?;
            }
            writeln!(
                out,
                "mean,{:.6},{:.6},{:.6},{}",
                self.mean_psnr().unwrap(),
                self.mean_ssim().unwrap(),
                self.mean_uqi().unwrap(),
                self.peak
            )?;
        }
        if !self.enl_rows.is_empty() {
            writeln!(out, "image,x,y,w,h,enl")?;
            for r in &self.enl_rows {
                let g = r.region;
                writeln!(out, "{},{},{},{},{},{:.6}", r.image, g.x, g.y, g.w, g.h, r.enl)?;
            }
        }
        Ok(())
    }

    /// Aligned human-readable table.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        if !self.rows.is_empty() {
            let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(4).max(4);
            let _ = writeln!(s, "{:<width$}  {:>9}  {:>7}  {:>7}", "name", "PSNR(dB)", "SSIM", "UQI");
            for r in &self.rows {
                let _ = writeln!(s, "{:<width$}  {:>9.3}  {:>7.4}  {:>7.4}", r.name, r.psnr, r.ssim, r.uqi);
            }
            let _ = writeln!(
                s,
                "{:<width$}  {:>9.3}  {:>7.4}  {:>7.4}",
                "mean",
                self.mean_psnr().unwrap(),
                self.mean_ssim().unwrap(),
                self.mean_uqi().unwrap()
            );
            let _ = writeln!(s, "(PSNR peak = {})", self.peak);
        }
        if !self.enl_rows.is_empty() {
            let width = self.enl_rows.iter().map(|r| r.image.len()).max().unwrap_or(5).max(5);
            let _ = writeln!(s, "{:<width$}  {:>16}  {:>12}", "image", "region", "ENL");
            for r in &self.enl_rows {
                let _ = writeln!(s, "{:<width$}  {:>16}  {:>12.3}", r.image, r.region.to_string(), r.enl);
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = Rng::new(seed);
        Image::new(w, h, (0..w * h).map(|_| rng.uniform() as f32).collect()).unwrap()
    }

    #[test]
    fn psnr_cases() {
        let x = random(16, 16, 1);
        assert_eq!(psnr(&x, &x, 1.0).unwrap(), PSNR_CAP_DB);
        let a = Image::filled(8, 8, 0.3);
        let b = Image::filled(8, 8, 0.4);
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-5);
        assert!(psnr(&a, &b, 0.0).is_err());
        assert!(psnr(&a, &random(4, 4, 2), 1.0).is_err());
    }

    #[test]
    fn psnr_decreases_with_noise_amplitude() {
        let x = random(32, 32, 3);
        let mut rng = Rng::new(4);
        let noise: Vec<f64> = (0..1024).map(|_| rng.uniform() * 2.0 - 1.0).collect();
        let scores: Vec<f64> = [0.01, 0.02, 0.05, 0.1, 0.2]
            .iter()
            .map(|amp| {
                let y = Image::new(
                    32,
                    32,
                    x.data().iter().zip(&noise).map(|(&v, n)| v + (amp * n) as f32).collect(),
                )
                .unwrap();
                psnr(&x, &y, 1.0).unwrap()
            })
            .collect();
        assert!(scores.windows(2).all(|w| w[0] > w[1]), "{scores:?}");
    }

    #[test]
    fn ssim_identical_and_constant() {
        let x = random(20, 16, 5);
        assert_eq!(ssim(&x, &x).unwrap(), 1.0);
        let c = Image::filled(12, 12, 0.5);
        assert_eq!(ssim(&c, &c).unwrap(), 1.0);
        assert!(ssim(&random(10, 20, 1), &random(10, 20, 2)).is_err());
    }

    #[test]
    fn ssim_of_inverted_image_is_low() {
        let x = Image::from_fn(64, 64, |x, y| if (x / 8 + y / 8) % 2 == 0 { 0.05 } else { 0.95 }).unwrap();
        let inv = x.map(|v| 1.0 - v).unwrap();
        assert!(ssim(&x, &inv).unwrap() < 0.1);
    }

    #[test]
    fn uqi_cases() {
        let x = random(16, 16, 6);
        assert_eq!(uqi(&x, &x).unwrap(), 1.0);
        let ramp = Image::from_fn(32, 32, |x, y| (x + y) as f32 / 64.0 + 0.1).unwrap();
        let affine = ramp.map(|v| 0.5 * v + 0.2).unwrap();
        let q = uqi(&ramp, &affine).unwrap();
        assert!(q < 1.0 && q > 0.0, "{q}");
        let c = Image::filled(8, 8, 0.5);
        assert_eq!(uqi(&c, &c).unwrap(), 1.0);
        assert_eq!(uqi(&c, &Image::filled(8, 8, 0.2)).unwrap(), 0.0);
        assert!(uqi(&Image::filled(7, 9, 0.0), &Image::filled(7, 9, 0.0)).is_err());
    }

    #[test]
    fn uqi_of_independent_noise_is_small() {
        let a = random(256, 256, 7);
        let b = random(256, 256, 8);
        assert!(uqi(&a, &b).unwrap().abs() < 0.2);
    }

    #[test]
    fn enl_cases() {
        // [1, 3]: mean 2, unbiased variance 2.
        let img = Image::new(4, 1, vec![1.0, 3.0, 2.0, 2.0]).unwrap();
        assert!((enl(&img, Region::new(0, 0, 2, 1)).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(enl(&img, Region::new(2, 0, 2, 1)).unwrap(), ENL_CAP);
        assert!(enl(&img, Region::new(3, 0, 2, 1)).is_err());
        assert!(enl(&img, Region::new(0, 0, 1, 1)).is_err());
    }

    #[test]
    fn enl_mean_two_variance_one() {
        // 0.5, 2, 2, 3.5: mean 2, unbiased variance (2.25+0+0+2.25)/3 = 1.5;
        // scale deviations by sqrt(2/3) to hit variance exactly 1.
        let s = (2.0f64 / 3.0).sqrt() * 1.5;
        let vals = [2.0 - s, 2.0, 2.0, 2.0 + s].map(|v| v as f32);
        let img = Image::new(4, 1, vals.to_vec()).unwrap();
        assert!((enl(&img, Region::new(0, 0, 4, 1)).unwrap() - 4.0).abs() < 1e-5);
    }

    #[test]
    fn region_parsing() {
        assert_eq!("1,2,3,4".parse::<Region>().unwrap(), Region::new(1, 2, 3, 4));
        assert!("1,2,3".parse::<Region>().is_err());
        assert!("a,b,c,d".parse::<Region>().is_err());
    }

    #[test]
    fn report_csv_and_means() {
        let mut r = MetricReport::new(1.0);
        let x = random(16, 16, 9);
        r.add_pair("a", &x, &x).unwrap();
        r.add_enl("a", &x, Region::new(0, 0, 8, 8)).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("name,psnr_db,ssim,uqi,peak\na,99.000000,1.000000,1.000000,1\n"));
        assert!(text.contains("image,x,y,w,h,enl"));
        assert_eq!(r.mean_ssim(), Some(1.0));
        assert!(r.to_table().contains("PSNR"));
    }
}
