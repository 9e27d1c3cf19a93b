//! Local-statistics speckle filters (Lee and Kuan).
//!
//! Both estimate `x̂ = μ + k·(y − μ)` from the window mean `μ` and the
//! window coefficient of variation `C_y² = σ²/μ²`, with speckle variation
//! `C_F² = 1/L`:
//!
//! - Lee:  `k = 1 − C_F²/C_y²`
//! - Kuan: `k = (1 − C_F²/C_y²) / (1 + C_F²)`
//!
//! Gains are clamped to `[0, 1]`. Near the border the window shrinks to the
//! pixels that exist.

use crate::error::{Error, Result};
use crate::image::Image;

pub const DEFAULT_WINDOW: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterKind {
    Lee,
    Kuan,
}

impl FilterKind {
    pub fn name(self) -> &'static str {
        match self {
            FilterKind::Lee => "Lee",
            FilterKind::Kuan => "Kuan",
        }
    }

    /// Clamped adaptive gain for a window with mean `mean` and variance
    /// `var`. Flat or zero-mean windows get gain 0 (pure local mean).
    pub fn gain(self, mean: f64, var: f64, looks: f64) -> f64 {
        if var <= 0.0 || mean == 0.0 {
            return 0.0;
        }
        let cf2 = 1.0 / looks;
        let cy2 = var / (mean * mean);
        let raw = match self {
            FilterKind::Lee => 1.0 - cf2 / cy2,
            FilterKind::Kuan => (1.0 - cf2 / cy2) / (1.0 + cf2),
        };
        raw.clamp(0.0, 1.0)
    }
}

pub fn lee_filter(y: &Image, window: usize, looks: f64) -> Result<Image> {
    local_stats_filter(y, window, looks, FilterKind::Lee)
}

pub fn kuan_filter(y: &Image, window: usize, looks: f64) -> Result<Image> {
    local_stats_filter(y, window, looks, FilterKind::Kuan)
}

pub fn local_stats_filter(y: &Image, window: usize, looks: f64, kind: FilterKind) -> Result<Image> {
    if window < 3 || window % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "window must be odd and >= 3, got {window}"
        )));
    }
    if !(looks >= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "number of looks must be >= 1, got {looks}"
        )));
    }
    let (w, h) = (y.width(), y.height());
    let stride = w + 1;
    // Summed-area tables of values and squares.
    let mut s1 = vec![0.0f64; stride * (h + 1)];
    let mut s2 = vec![0.0f64; stride * (h + 1)];
    for row in 0..h {
        let (mut r1, mut r2) = (0.0, 0.0);
        for col in 0..w {
            let v = y.get(col, row) as f64;
            r1 += v;
            r2 += v * v;
            s1[(row + 1) * stride + col + 1] = s1[row * stride + col + 1] + r1;
            s2[(row + 1) * stride + col + 1] = s2[row * stride + col + 1] + r2;
        }
    }
    let rect = |t: &[f64], x0: usize, y0: usize, x1: usize, y1: usize| {
        t[y1 * stride + x1] - t[y0 * stride + x1] - t[y1 * stride + x0] + t[y0 * stride + x0]
    };
    let r = window / 2;
    let mut out = Vec::with_capacity(w * h);
    for row in 0..h {
        let (y0, y1) = (row.saturating_sub(r), (row + r + 1).min(h));
        for col in 0..w {
            let (x0, x1) = (col.saturating_sub(r), (col + r + 1).min(w));
            let n = ((x1 - x0) * (y1 - y0)) as f64;
            let mean = rect(&s1, x0, y0, x1, y1) / n;
            let var = (rect(&s2, x0, y0, x1, y1) / n - mean * mean).max(0.0);
            let k = kind.gain(mean, var, looks);
            let v = y.get(col, row) as f64;
            out.push((mean + k * (v - mean)) as f32);
        }
    }
    Image::new(w, h, out)
}
