//! Training objective: per-pixel Euclidean loss plus a weighted, smoothed
//! total-variation penalty. Both are computed per image and averaged over
//! the batch; values accumulate in `f64` whatever the tensor precision.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor4};

/// Smoothing inside the TV square root, keeping the gradient finite on
/// flat regions.
pub const TV_DELTA: f64 = 1e-6;

/// Default TV weight used for training.
pub const DEFAULT_LAMBDA_TV: f64 = 0.002;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_tv: f64,
    pub tv_delta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_tv: DEFAULT_LAMBDA_TV,
            tv_delta: TV_DELTA,
        }
    }
}

impl LossWeights {
    pub fn new(lambda_tv: f64) -> Result<Self> {
        if !(lambda_tv >= 0.0) || !lambda_tv.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "lambda_tv must be finite and >= 0, got {lambda_tv}"
            )));
        }
        Ok(Self {
            lambda_tv,
            ..Self::default()
        })
    }
}

/// A scalar loss and its gradient with respect to the prediction.
#[derive(Debug, Clone)]
pub struct Loss<T> {
    pub value: f64,
    pub grad: Tensor4<T>,
}

/// Combined objective with its components.
#[derive(Debug, Clone)]
pub struct TotalLoss<T> {
    pub euclidean: f64,
    pub tv: f64,
    pub total: f64,
    pub grad: Tensor4<T>,
}

fn check_single_channel<T: Real>(t: &Tensor4<T>) -> Result<()> {
    if t.dims().c != 1 || t.dims().n == 0 {
        return Err(Error::ShapeMismatch(format!(
            "loss expects an Nx1xHxW batch, got {}",
            t.dims()
        )));
    }
    Ok(())
}

/// `mean_n (1/(W·H)) Σ (x̂ − x)²`.
pub fn euclidean_loss<T: Real>(xhat: &Tensor4<T>, x: &Tensor4<T>) -> Result<Loss<T>> {
    check_single_channel(xhat)?;
    xhat.ensure_same_dims(x, "euclidean loss")?;
    let count = xhat.dims().len() as f64;
    let scale = T::from_f64_lossy(2.0 / count);
    let mut grad = Tensor4::zeros(xhat.dims());
    let mut sum = 0.0;
    for ((g, &p), &t) in grad.data_mut().iter_mut().zip(xhat.data()).zip(x.data()) {
        let d = p - t;
        sum += d.as_f64() * d.as_f64();
        *g = scale * d;
    }
    Ok(Loss {
        value: sum / count,
        grad,
    })
}

/// `mean_n Σ sqrt((x̂[h][w+1] − x̂[h][w])² + (x̂[h+1][w] − x̂[h][w])² + δ²)`
/// over positions where both forward neighbours exist.
pub fn tv_loss<T: Real>(xhat: &Tensor4<T>, delta: f64) -> Result<Loss<T>> {
    check_single_channel(xhat)?;
    let d = xhat.dims();
    if d.h < 2 || d.w < 2 {
        return Err(Error::InvalidArgument(format!(
            "TV loss needs at least 2x2 images, got {}x{}",
            d.w, d.h
        )));
    }
    let delta2 = delta * delta;
    let inv_n = 1.0 / d.n as f64;
    let mut grad = vec![0.0f64; d.len()];
    let mut total = 0.0;
    for n in 0..d.n {
        let img = xhat.plane(n, 0);
        let g = &mut grad[n * d.plane()..(n + 1) * d.plane()];
        for y in 0..d.h - 1 {
            for x in 0..d.w - 1 {
                let i = y * d.w + x;
                let c = img[i].as_f64();
                let dx = img[i + 1].as_f64() - c;
                let dy = img[i + d.w].as_f64() - c;
                let s = (dx * dx + dy * dy + delta2).sqrt();
                total += s;
                if s > 0.0 {
                    g[i] -= (dx + dy) / s * inv_n;
                    g[i + 1] += dx / s * inv_n;
                    g[i + d.w] += dy / s * inv_n;
                }
            }
        }
    }
    Ok(Loss {
        value: total * inv_n,
        grad: Tensor4::from_vec(d, grad.into_iter().map(T::from_f64_lossy).collect())?,
    })
}

/// `L_E + λ_TV · L_TV`.
pub fn total_loss<T: Real>(
    xhat: &Tensor4<T>,
    x: &Tensor4<T>,
    weights: LossWeights,
) -> Result<TotalLoss<T>> {
    let e = euclidean_loss(xhat, x)?;
    let tv = tv_loss(xhat, weights.tv_delta)?;
    let lambda = T::from_f64_lossy(weights.lambda_tv);
    let mut grad = e.grad;
    for (g, t) in grad.data_mut().iter_mut().zip(tv.grad.data()) {
        *g += lambda * *t;
    }
    Ok(TotalLoss {
        euclidean: e.value,
        tv: tv.value,
        total: e.value + weights.lambda_tv * tv.value,
        grad,
    })
}
