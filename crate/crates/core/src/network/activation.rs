//! Elementwise stages: ReLU, the division-residual skip, and the tanh head.

use crate::error::Result;
use crate::tensor::{Real, Tensor4};

/// Guard added to the speckle estimate before dividing.
pub const DIVISION_EPS: f64 = 1e-8;

pub fn relu<T: Real>(x: &Tensor4<T>) -> Tensor4<T> {
    // NaN passes through so a diverged network fails the loss check.
    x.map(|v| if v < T::zero() { T::zero() } else { v })
}

/// Gradient through ReLU given its output `y`.
pub fn relu_backward<T: Real>(y: &Tensor4<T>, d_out: &Tensor4<T>) -> Result<Tensor4<T>> {
    y.ensure_same_dims(d_out, "relu backward")?;
    let mut dx = d_out.clone();
    for (g, &v) in dx.data_mut().iter_mut().zip(y.data()) {
        *g = if v > T::zero() { *g } else { T::zero() };
    }
    Ok(dx)
}

/// `y / (noise + eps)`, elementwise.
pub fn division_residual<T: Real>(y: &Tensor4<T>, noise: &Tensor4<T>, eps: T) -> Result<Tensor4<T>> {
    y.ensure_same_dims(noise, "division residual")?;
    let mut out = y.clone();
    for (o, &n) in out.data_mut().iter_mut().zip(noise.data()) {
        *o /= n + eps;
    }
    Ok(out)
}

/// Gradients of [`division_residual`] with respect to the numerator and the
/// noise estimate.
pub fn division_residual_backward<T: Real>(
    y: &Tensor4<T>,
    noise: &Tensor4<T>,
    eps: T,
    d_out: &Tensor4<T>,
) -> Result<(Tensor4<T>, Tensor4<T>)> {
    y.ensure_same_dims(noise, "division residual backward")?;
    y.ensure_same_dims(d_out, "division residual backward")?;
    let mut d_y = d_out.clone();
    let mut d_noise = d_out.clone();
    for i in 0..y.data().len() {
        let denom = noise.data()[i] + eps;
        let g = d_out.data()[i];
        d_y.data_mut()[i] = g / denom;
        d_noise.data_mut()[i] = -g * y.data()[i] / (denom * denom);
    }
    Ok((d_y, d_noise))
}

pub fn tanh_head<T: Real>(x: &Tensor4<T>) -> Tensor4<T> {
    x.map(|v| v.tanh())
}

/// Gradient through tanh given its output.
pub fn tanh_backward<T: Real>(out: &Tensor4<T>, d_out: &Tensor4<T>) -> Result<Tensor4<T>> {
    out.ensure_same_dims(d_out, "tanh backward")?;
    let mut dx = d_out.clone();
    for (g, &t) in dx.data_mut().iter_mut().zip(out.data()) {
        *g *= T::one() - t * t;
    }
    Ok(dx)
}
