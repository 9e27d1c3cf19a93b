//! Rank-4 activations in NCHW layout and the scalar abstraction the network
//! is generic over. Training runs in `f32`; gradient checks re-run the same
//! code in `f64`.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

/// Floating-point scalar with a dense matrix-multiply kernel.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    /// `c = alpha * a · b + beta * c` over row-major buffers, where `a` is
    /// `m × k` (or `k × m` when `trans_a`), `b` is `k × n` (or `n × k` when
    /// `trans_b`) and `c` is `m × n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        trans_a: bool,
        b: &[Self],
        trans_b: bool,
        beta: Self,
        c: &mut [Self],
    );

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite conversion")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }
}

fn strides(rows: usize, cols: usize, trans: bool) -> (isize, isize) {
    // Logical (rows × cols); stored row-major as cols × rows when transposed.
    if trans {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

macro_rules! impl_real {
    ($t:ty, $kernel:path) => {
        impl Real for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                trans_a: bool,
                b: &[Self],
                trans_b: bool,
                beta: Self,
                c: &mut [Self],
            ) {
                assert!(a.len() >= m * k, "gemm: lhs too short");
                assert!(b.len() >= k * n, "gemm: rhs too short");
                assert!(c.len() >= m * n, "gemm: output too short");
                let (rsa, csa) = strides(m, k, trans_a);
                let (rsb, csb) = strides(k, n, trans_b);
                // SAFETY: lengths were checked above against the logical
                // shapes, and the strides address exactly those elements.
                unsafe {
                    $kernel(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

/// Dimensions of a [`Tensor4`]: batch, channels, height, width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w }
    }

    pub fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Pixels per channel plane.
    pub fn plane(&self) -> usize {
        self.h * self.w
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

/// Dense NCHW tensor with an optional gradient of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<T = f32> {
    dims: Dims,
    data: Vec<T>,
    grad: Option<Vec<T>>,
}

impl<T: Real> Tensor4<T> {
    pub fn zeros(dims: Dims) -> Self {
        Self {
            dims,
            data: vec![T::zero(); dims.len()],
            grad: None,
        }
    }

    pub fn filled(dims: Dims, value: T) -> Self {
        Self {
            dims,
            data: vec![value; dims.len()],
            grad: None,
        }
    }

    pub fn from_vec(dims: Dims, data: Vec<T>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {} tensor",
                data.len(),
                dims
            )));
        }
        Ok(Self {
            dims,
            data,
            grad: None,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<T>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "gradient of length {} for a {} tensor",
                grad.len(),
                self.dims
            )));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn take_grad(&mut self) -> Option<Vec<T>> {
        self.grad.take()
    }

    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.dims.c + c) * self.dims.h + y) * self.dims.w + x
    }

    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.index(n, c, y, x)]
    }

    /// Channel plane `c` of batch item `n`.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let p = self.dims.plane();
        let start = (n * self.dims.c + c) * p;
        &self.data[start..start + p]
    }

    /// All channels of batch item `n`.
    pub fn item(&self, n: usize) -> &[T] {
        let len = self.dims.c * self.dims.plane();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn item_mut(&mut self, n: usize) -> &mut [T] {
        let len = self.dims.c * self.dims.plane();
        &mut self.data[n * len..(n + 1) * len]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
            grad: None,
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor4<U> {
        Tensor4 {
            dims: self.dims,
            data: self.data.iter().map(|v| U::from_f64_lossy(v.as_f64())).collect(),
            grad: self
                .grad
                .as_ref()
                .map(|g| g.iter().map(|v| U::from_f64_lossy(v.as_f64())).collect()),
        }
    }

    pub fn ensure_same_dims(&self, other: &Self, what: &str) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::ShapeMismatch(format!(
                "{what}: {} vs {}",
                self.dims, other.dims
            )));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    fn transpose(rows: usize, cols: usize, a: &[f64]) -> Vec<f64> {
        let mut t = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                t[j * rows + i] = a[i * cols + j];
            }
        }
        t
    }

    #[test]
    fn gemm_matches_naive_in_all_transpositions() {
        let (m, k, n) = (5, 7, 3);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let expect = naive(m, k, n, &a, &b);
        let at = transpose(m, k, &a);
        let bt = transpose(k, n, &b);
        for (lhs, ta) in [(&a, false), (&at, true)] {
            for (rhs, tb) in [(&b, false), (&bt, true)] {
                let mut c = vec![0.0; m * n];
                f64::gemm(m, k, n, 1.0, lhs, ta, rhs, tb, 0.0, &mut c);
                for (x, y) in c.iter().zip(&expect) {
                    assert!((x - y).abs() < 1e-12, "ta={ta} tb={tb}");
                }
            }
        }
    }

    #[test]
    fn gemm_accumulates_with_beta() {
        let a = [1.0f32, 2.0];
        let b = [3.0f32, 4.0];
        let mut c = [10.0f32];
        f32::gemm(1, 2, 1, 1.0, &a, false, &b, false, 1.0, &mut c);
        assert_eq!(c[0], 21.0);
    }

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor4::<f32>::from_vec(Dims::new(1, 1, 2, 2), vec![0.0; 3]).is_err());
    }

    #[test]
    fn grad_slot_requires_same_shape() {
        let mut t = Tensor4::<f32>::zeros(Dims::new(1, 2, 2, 2));
        assert!(t.set_grad(vec![0.0; 7]).is_err());
        t.set_grad(vec![1.0; 8]).unwrap();
        assert_eq!(t.grad().unwrap().len(), 8);
    }
}
