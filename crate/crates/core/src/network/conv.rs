use crate::error::{Error, Result};
use crate::tensor::{Dims, Real, Tensor4};

/// Square kernel edge; padding is `KERNEL / 2` so spatial size is preserved.
pub const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;

/// 3×3, stride-1, zero-padded convolution (cross-correlation) with bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T = f32> {
    cout: usize,
    cin: usize,
    /// `(cout, cin, 3, 3)` row-major.
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> ConvLayer<T> {
    pub fn new(cout: usize, cin: usize, weights: Vec<T>, bias: Vec<T>) -> Result<Self> {
        if cout == 0 || cin == 0 {
            return Err(Error::InvalidArgument("conv channels must be positive".into()));
        }
        if weights.len() != cout * cin * TAPS || bias.len() != cout {
            return Err(Error::ShapeMismatch(format!(
                "conv {cin}->{cout} needs {} weights and {cout} biases, got {} and {}",
                cout * cin * TAPS,
                weights.len(),
                bias.len()
            )));
        }
        Ok(Self {
            cout,
            cin,
            weights,
            bias,
        })
    }

    pub fn zeros(cout: usize, cin: usize) -> Self {
        Self::new(cout, cin, vec![T::zero(); cout * cin * TAPS], vec![T::zero(); cout])
            .expect("consistent shapes")
    }

    pub fn in_channels(&self) -> usize {
        self.cin
    }

    pub fn out_channels(&self) -> usize {
        self.cout
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn cast<U: Real>(&self) -> ConvLayer<U> {
        ConvLayer {
            cout: self.cout,
            cin: self.cin,
            weights: self.weights.iter().map(|v| U::from_f64_lossy(v.as_f64())).collect(),
            bias: self.bias.iter().map(|v| U::from_f64_lossy(v.as_f64())).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads<T = f32> {
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

/// Unfolds one `(cin, h, w)` item into a `(cin·9, h·w)` patch matrix.
fn im2col<T: Real>(item: &[T], cin: usize, h: usize, w: usize, cols: &mut [T]) {
    let hw = h * w;
    for ci in 0..cin {
        let plane = &item[ci * hw..(ci + 1) * hw];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &mut cols[((ci * TAPS) + ky * KERNEL + kx) * hw..][..hw];
                for y in 0..h {
                    let dst = &mut row[y * w..(y + 1) * w];
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            dst[0] = T::zero();
                            dst[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => dst.copy_from_slice(src),
                        _ => {
                            dst[..w - 1].copy_from_slice(&src[1..]);
                            dst[w - 1] = T::zero();
                        }
                    }
                }
            }
        }
    }
}

/// Pixel-major variant of [`im2col`]: row `p` holds the `cin·9` taps of pixel `p`.
fn im2col_t<T: Real>(item: &[T], cin: usize, h: usize, w: usize, cols: &mut [T]) {
    let k = cin * TAPS;
    for y in 0..h {
        for x in 0..w {
            let row = &mut cols[(y * w + x) * k..][..k];
            for ci in 0..cin {
                let plane = &item[ci * h * w..(ci + 1) * h * w];
                for ky in 0..KERNEL {
                    let sy = y as isize + ky as isize - 1;
                    for kx in 0..KERNEL {
                        let sx = x as isize + kx as isize - 1;
                        row[ci * TAPS + ky * KERNEL + kx] = if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                            T::zero()
                        } else {
                            plane[sy as usize * w + sx as usize]
                        };
                    }
                }
            }
        }
    }
}

fn check_input<T: Real>(x: &Tensor4<T>, layer: &ConvLayer<T>) -> Result<Dims> {
    let d = x.dims();
    if d.c != layer.cin {
        return Err(Error::ShapeMismatch(format!(
            "conv expects {} input channels, got {}",
            layer.cin, d.c
        )));
    }
    if d.h == 0 || d.w == 0 {
        return Err(Error::ShapeMismatch(format!("empty spatial dims {d}")));
    }
    Ok(d)
}

pub fn conv2d_forward<T: Real>(x: &Tensor4<T>, layer: &ConvLayer<T>) -> Result<Tensor4<T>> {
    let d = check_input(x, layer)?;
    let hw = d.plane();
    let k = layer.cin * TAPS;
    let mut out = Tensor4::zeros(Dims::new(d.n, layer.cout, d.h, d.w));
    let mut cols = vec![T::zero(); k * hw];
    for n in 0..d.n {
        im2col(x.item(n), layer.cin, d.h, d.w, &mut cols);
        let dst = out.item_mut(n);
        for (co, plane) in dst.chunks_exact_mut(hw).enumerate() {
            plane.fill(layer.bias[co]);
        }
        T::gemm(layer.cout, k, hw, T::one(), &layer.weights, false, &cols, false, T::one(), dst);
    }
    Ok(out)
}

/// `(cin, cout, 3, 3)` kernel with both spatial axes reversed: convolving
/// the upstream gradient with it gives the gradient of the input.
fn flipped_transpose<T: Real>(layer: &ConvLayer<T>) -> Vec<T> {
    let mut out = vec![T::zero(); layer.weights.len()];
    for co in 0..layer.cout {
        for ci in 0..layer.cin {
            for tap in 0..TAPS {
                out[(ci * layer.cout + co) * TAPS + TAPS - 1 - tap] =
                    layer.weights[(co * layer.cin + ci) * TAPS + tap];
            }
        }
    }
    out
}

/// Returns parameter gradients and the gradient with respect to `x`.
pub fn conv2d_backward<T: Real>(
    x: &Tensor4<T>,
    layer: &ConvLayer<T>,
    d_out: &Tensor4<T>,
) -> Result<(ConvGrads<T>, Tensor4<T>)> {
    let d = check_input(x, layer)?;
    let expect = Dims::new(d.n, layer.cout, d.h, d.w);
    if d_out.dims() != expect {
        return Err(Error::ShapeMismatch(format!(
            "conv upstream gradient {} vs expected {expect}",
            d_out.dims()
        )));
    }
    let hw = d.plane();
    let k = layer.cin * TAPS;
    let k_back = layer.cout * TAPS;
    let w_back = flipped_transpose(layer);
    let mut grads = ConvGrads {
        weights: vec![T::zero(); layer.weights.len()],
        bias: vec![T::zero(); layer.cout],
    };
    let mut dx = Tensor4::zeros(d);
    let mut cols = vec![T::zero(); k.max(k_back) * hw];
    for n in 0..d.n {
        let dy = d_out.item(n);
        for (co, plane) in dy.chunks_exact(hw).enumerate() {
            grads.bias[co] += plane.iter().copied().sum::<T>();
        }
        im2col_t(x.item(n), layer.cin, d.h, d.w, &mut cols[..k * hw]);
        // dW += dY · cols
        T::gemm(layer.cout, hw, k, T::one(), dy, false, &cols[..k * hw], false, T::one(), &mut grads.weights);
        im2col(dy, layer.cout, d.h, d.w, &mut cols[..k_back * hw]);
        T::gemm(layer.cin, k_back, hw, T::one(), &w_back, false, &cols[..k_back * hw], false, T::zero(), dx.item_mut(n));
    }
    Ok((grads, dx))
}
