use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Real;

pub const ADAM_MAGIC: &[u8; 5] = b"ADAM1";

/// First/second moment estimates for every parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T = f32> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Number of updates applied so far.
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    /// Zeroed state shaped like `tensors`, with the usual 0.9 / 0.999 / 1e-8.
    pub fn new(tensors: &[&[T]]) -> Self {
        Self {
            m: tensors.iter().map(|t| vec![T::zero(); t.len()]).collect(),
            v: tensors.iter().map(|t| vec![T::zero(); t.len()]).collect(),
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
        }
    }

    pub fn cast<U: Real>(&self) -> AdamState<U> {
        let c = |x: &Vec<Vec<T>>| {
            x.iter()
                .map(|t| t.iter().map(|v| U::from_f64_lossy(v.as_f64())).collect())
                .collect()
        };
        AdamState {
            m: c(&self.m),
            v: c(&self.v),
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            t: self.t,
        }
    }

    pub fn write(&self, out: &mut impl Write) -> std::io::Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(ADAM_MAGIC);
        buf.extend_from_slice(&self.t.to_le_bytes());
        for h in [self.beta1, self.beta2, self.eps] {
            buf.extend_from_slice(&h.to_le_bytes());
        }
        buf.extend_from_slice(&(self.m.len() as u32).to_le_bytes());
        for (m, v) in self.m.iter().zip(&self.v) {
            buf.extend_from_slice(&(m.len() as u64).to_le_bytes());
            for x in m.iter().chain(v) {
                buf.extend_from_slice(&x.as_f64().to_le_bytes());
            }
        }
        out.write_all(&buf)
    }

    pub fn read(bytes: &[u8]) -> Result<Self> {
        let corrupt = || Error::CorruptFile("optimizer state truncated".into());
        if bytes.len() < ADAM_MAGIC.len() || &bytes[..ADAM_MAGIC.len()] != ADAM_MAGIC {
            return Err(Error::VersionMismatch("missing ADAM1 header".into()));
        }
        let mut pos = ADAM_MAGIC.len();
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = bytes.get(pos..pos + n).ok_or_else(corrupt)?;
            pos += n;
            Ok(s)
        };
        let t = u64::from_le_bytes(take(8)?.try_into().unwrap());
        let mut hyper = [0.0f64; 3];
        for h in &mut hyper {
            *h = f64::from_le_bytes(take(8)?.try_into().unwrap());
        }
        let count = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let (mut m, mut v) = (Vec::with_capacity(count), Vec::with_capacity(count));
        for _ in 0..count {
            let len = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
            let raw = take(len.checked_mul(16).ok_or_else(corrupt)?)?;
            let vals: Vec<T> = raw
                .chunks_exact(8)
                .map(|c| T::from_f64_lossy(f64::from_le_bytes(c.try_into().unwrap())))
                .collect();
            m.push(vals[..len].to_vec());
            v.push(vals[len..].to_vec());
        }
        if pos != bytes.len() {
            return Err(Error::CorruptFile("trailing bytes after optimizer state".into()));
        }
        Ok(Self {
            m,
            v,
            beta1: hyper[0],
            beta2: hyper[1],
            eps: hyper[2],
            t,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write(&mut f).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::read(&bytes)
    }
}

/// One bias-corrected ADAM update over matching parameter/gradient tensors.
pub fn adam_step<T: Real>(
    params: &mut [&mut [T]],
    grads: &[&[T]],
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::ShapeMismatch(format!(
            "adam: {} parameter tensors, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.m[i].len() {
            return Err(Error::ShapeMismatch(format!(
                "adam tensor {i}: {} params, {} grads, {} moments",
                p.len(),
                g.len(),
                state.m[i].len()
            )));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (T::from_f64_lossy(state.beta1), T::from_f64_lossy(state.beta2));
    let step = T::from_f64_lossy(lr / (1.0 - state.beta1.powi(t)));
    let v_corr = T::from_f64_lossy(1.0 / (1.0 - state.beta2.powi(t)));
    let eps = T::from_f64_lossy(state.eps);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for i in 0..p.len() {
            let gi = g[i];
            m[i] = b1 * m[i] + (T::one() - b1) * gi;
            v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
            p[i] -= step * m[i] / ((v[i] * v_corr).sqrt() + eps);
        }
    }
    Ok(())
}
