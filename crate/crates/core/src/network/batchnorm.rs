use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor4};

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.1;

/// How batch normalization picks its statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running averages are updated.
    Train,
    /// Running averages; fails if none have been accumulated.
    Eval,
    /// Batch statistics without touching running averages.
    BatchStats,
}

impl Mode {
    pub fn uses_batch_stats(self) -> bool {
        !matches!(self, Mode::Eval)
    }
}

/// Per-channel batch normalization with affine scale/shift.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormLayer<T = f32> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub epsilon: T,
    pub momentum: T,
    /// Set once running statistics have seen at least one training batch.
    pub calibrated: bool,
}

impl<T: Real> BatchNormLayer<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            epsilon: T::from_f64_lossy(DEFAULT_EPSILON),
            momentum: T::from_f64_lossy(DEFAULT_MOMENTUM),
            calibrated: false,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Learnable (affine) parameters only.
    pub fn param_count(&self) -> usize {
        self.gamma.len() + self.beta.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.gamma.len();
        if self.beta.len() != c || self.running_mean.len() != c || self.running_var.len() != c {
            return Err(Error::ShapeMismatch("batch norm vectors differ in length".into()));
        }
        if !(self.epsilon > T::zero()) {
            return Err(Error::InvalidArgument("batch norm epsilon must be positive".into()));
        }
        if self.running_var.iter().any(|v| *v < T::zero()) {
            return Err(Error::InvalidArgument("negative running variance".into()));
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> BatchNormLayer<U> {
        let c = |v: &[T]| v.iter().map(|x| U::from_f64_lossy(x.as_f64())).collect();
        BatchNormLayer {
            gamma: c(&self.gamma),
            beta: c(&self.beta),
            running_mean: c(&self.running_mean),
            running_var: c(&self.running_var),
            epsilon: U::from_f64_lossy(self.epsilon.as_f64()),
            momentum: U::from_f64_lossy(self.momentum.as_f64()),
            calibrated: self.calibrated,
        }
    }

    /// Folds batch moments into the running averages. `var` is the biased
    /// batch variance over `count` values; the running average tracks the
    /// unbiased estimate.
    pub fn update_running(&mut self, stats: &BatchMoments<T>) {
        let m = self.momentum;
        let count = T::from_usize(stats.count).expect("count fits");
        let correction = if stats.count > 1 {
            count / (count - T::one())
        } else {
            T::one()
        };
        for c in 0..self.channels() {
            self.running_mean[c] = (T::one() - m) * self.running_mean[c] + m * stats.mean[c];
            self.running_var[c] =
                (T::one() - m) * self.running_var[c] + m * stats.var[c] * correction;
        }
        self.calibrated = true;
    }
}

/// Per-channel moments of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchMoments<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub count: usize,
}

/// Values saved by a batch-statistics forward for the backward pass.
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    pub normalized: Tensor4<T>,
    pub inv_std: Vec<T>,
}

pub struct BnForward<T> {
    pub output: Tensor4<T>,
    pub moments: Option<BatchMoments<T>>,
    pub cache: Option<BnCache<T>>,
}

/// Normalizes `x` per channel. Never mutates the layer; in [`Mode::Train`]
/// the caller folds the returned moments in with
/// [`BatchNormLayer::update_running`].
pub fn batchnorm_forward<T: Real>(
    x: &Tensor4<T>,
    layer: &BatchNormLayer<T>,
    mode: Mode,
    keep_cache: bool,
) -> Result<BnForward<T>> {
    let d = x.dims();
    if d.c != layer.channels() {
        return Err(Error::ShapeMismatch(format!(
            "batch norm has {} channels, input has {}",
            layer.channels(),
            d.c
        )));
    }
    let hw = d.plane();
    let count = d.n * hw;
    let (mean, var): (Vec<T>, Vec<T>) = if mode.uses_batch_stats() {
        (0..d.c)
            .map(|c| {
                let mut sum = 0.0;
                for n in 0..d.n {
                    sum += x.plane(n, c).iter().map(|v| v.as_f64()).sum::<f64>();
                }
                let mean = sum / count as f64;
                let mut sq = 0.0;
                for n in 0..d.n {
                    sq += x
                        .plane(n, c)
                        .iter()
                        .map(|v| (v.as_f64() - mean).powi(2))
                        .sum::<f64>();
                }
                (T::from_f64_lossy(mean), T::from_f64_lossy(sq / count as f64))
            })
            .unzip()
    } else {
        if !layer.calibrated {
            return Err(Error::UncalibratedBatchNorm);
        }
        (layer.running_mean.clone(), layer.running_var.clone())
    };
    let inv_std: Vec<T> = var
        .iter()
        .map(|&v| T::one() / (v + layer.epsilon).sqrt())
        .collect();

    let mut output = Tensor4::zeros(d);
    let mut normalized = keep_cache.then(|| Tensor4::zeros(d));
    for n in 0..d.n {
        for c in 0..d.c {
            let start = (n * d.c + c) * hw;
            let src = x.plane(n, c);
            let (g, b, mu, is) = (layer.gamma[c], layer.beta[c], mean[c], inv_std[c]);
            for (i, &v) in src.iter().enumerate() {
                let xn = (v - mu) * is;
                output.data_mut()[start + i] = g * xn + b;
                if let Some(t) = normalized.as_mut() {
                    t.data_mut()[start + i] = xn;
                }
            }
        }
    }
    let batch = mode.uses_batch_stats();
    Ok(BnForward {
        output,
        moments: batch.then(|| BatchMoments { mean, var, count }),
        cache: normalized
            .filter(|_| batch)
            .map(|normalized| BnCache { normalized, inv_std }),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnGrads<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

/// Backward pass through batch-statistics normalization.
pub fn batchnorm_backward<T: Real>(
    cache: &BnCache<T>,
    layer: &BatchNormLayer<T>,
    d_out: &Tensor4<T>,
) -> Result<(BnGrads<T>, Tensor4<T>)> {
    let d = d_out.dims();
    if d != cache.normalized.dims() {
        return Err(Error::ShapeMismatch(format!(
            "batch norm gradient {d} vs cached {}",
            cache.normalized.dims()
        )));
    }
    let hw = d.plane();
    let count = (d.n * hw) as f64;
    let mut grads = BnGrads {
        gamma: vec![T::zero(); d.c],
        beta: vec![T::zero(); d.c],
    };
    let mut dx = Tensor4::zeros(d);
    for c in 0..d.c {
        let (mut sum_dy, mut sum_dy_xn) = (0.0f64, 0.0f64);
        for n in 0..d.n {
            for (dy, xn) in d_out.plane(n, c).iter().zip(cache.normalized.plane(n, c)) {
                sum_dy += dy.as_f64();
                sum_dy_xn += dy.as_f64() * xn.as_f64();
            }
        }
        grads.beta[c] = T::from_f64_lossy(sum_dy);
        grads.gamma[c] = T::from_f64_lossy(sum_dy_xn);
        let scale = layer.gamma[c] * cache.inv_std[c];
        let mean_dy = T::from_f64_lossy(sum_dy / count);
        let mean_dy_xn = T::from_f64_lossy(sum_dy_xn / count);
        for n in 0..d.n {
            let start = (n * d.c + c) * hw;
            for i in 0..hw {
                let dy = d_out.data()[start + i];
                let xn = cache.normalized.data()[start + i];
                dx.data_mut()[start + i] = scale * (dy - mean_dy - xn * mean_dy_xn);
            }
        }
    }
    Ok((grads, dx))
}
