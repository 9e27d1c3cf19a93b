//! Parameter file: `IDCNN1`, u32 record count, then per record a kind tag
//! (0 = conv, 1 = batch norm), its dims, and little-endian `f64` payload.
//!
//! conv: `u32 cout, u32 cin, u32 kh, u32 kw`, weights, bias
//! bn:   `u32 channels, f64 epsilon, f64 momentum, u8 calibrated`,
//!       gamma, beta, running_mean, running_var

use std::io::{Read, Write};
use std::path::Path;

use super::{BatchNormLayer, Block, ConvLayer, NetworkParams, KERNEL};
use crate::error::{Error, Result};
use crate::tensor::Real;

pub const PARAMS_MAGIC: &[u8; 6] = b"IDCNN1";
const TAG_CONV: u8 = 0;
const TAG_BN: u8 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_f64s<T: Real>(out: &mut Vec<u8>, vals: &[T]) {
    for v in vals {
        out.extend_from_slice(&v.as_f64().to_le_bytes());
    }
}

/// Serializes parameters into the `IDCNN1` byte layout.
pub fn write_params<T: Real>(params: &NetworkParams<T>, out: &mut impl Write) -> std::io::Result<()> {
    let records: usize = params
        .blocks()
        .iter()
        .map(|b| 1 + usize::from(b.bn.is_some()))
        .sum();
    let mut buf = Vec::new();
    buf.extend_from_slice(PARAMS_MAGIC);
    put_u32(&mut buf, records);
    for block in params.blocks() {
        let conv = &block.conv;
        buf.push(TAG_CONV);
        for d in [conv.out_channels(), conv.in_channels(), KERNEL, KERNEL] {
            put_u32(&mut buf, d);
        }
        put_f64s(&mut buf, &conv.weights);
        put_f64s(&mut buf, &conv.bias);
        if let Some(bn) = &block.bn {
            buf.push(TAG_BN);
            put_u32(&mut buf, bn.channels());
            put_f64s(&mut buf, &[bn.epsilon, bn.momentum]);
            buf.push(u8::from(bn.calibrated));
            put_f64s(&mut buf, &bn.gamma);
            put_f64s(&mut buf, &bn.beta);
            put_f64s(&mut buf, &bn.running_mean);
            put_f64s(&mut buf, &bn.running_var);
        }
    }
    out.write_all(&buf)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| {
            Error::CorruptFile(format!(
                "parameter file truncated at byte {} (needed {n} more)",
                self.pos
            ))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f64s<T: Real>(&mut self, n: usize) -> Result<Vec<T>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| {
            Error::CorruptFile("parameter count overflows".into())
        })?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| T::from_f64_lossy(f64::from_le_bytes(c.try_into().unwrap())))
            .collect())
    }
}

/// Parses the `IDCNN1` byte layout; returns the params and bytes consumed.
pub fn read_params<T: Real>(bytes: &[u8]) -> Result<(NetworkParams<T>, usize)> {
    if bytes.len() < PARAMS_MAGIC.len() {
        return Err(Error::CorruptFile("parameter file shorter than header".into()));
    }
    if &bytes[..PARAMS_MAGIC.len()] != PARAMS_MAGIC {
        return Err(Error::VersionMismatch(format!(
            "expected magic {:?}, found {:?}",
            String::from_utf8_lossy(PARAMS_MAGIC),
            String::from_utf8_lossy(&bytes[..PARAMS_MAGIC.len()])
        )));
    }
    let mut cur = Cursor {
        bytes,
        pos: PARAMS_MAGIC.len(),
    };
    let records = cur.u32()?;
    let mut blocks: Vec<Block<T>> = Vec::new();
    for _ in 0..records {
        match cur.u8()? {
            TAG_CONV => {
                let (cout, cin, kh, kw) = (cur.u32()?, cur.u32()?, cur.u32()?, cur.u32()?);
                if kh != KERNEL || kw != KERNEL {
                    return Err(Error::CorruptFile(format!("unsupported kernel {kh}x{kw}")));
                }
                let weights = cur.f64s(cout * cin * kh * kw)?;
                let bias = cur.f64s(cout)?;
                blocks.push(Block {
                    conv: ConvLayer::new(cout, cin, weights, bias)?,
                    bn: None,
                });
            }
            TAG_BN => {
                let channels = cur.u32()?;
                let head: Vec<T> = cur.f64s(2)?;
                let calibrated = cur.u8()? != 0;
                let bn = BatchNormLayer {
                    gamma: cur.f64s(channels)?,
                    beta: cur.f64s(channels)?,
                    running_mean: cur.f64s(channels)?,
                    running_var: cur.f64s(channels)?,
                    epsilon: head[0],
                    momentum: head[1],
                    calibrated,
                };
                let last = blocks
                    .last_mut()
                    .filter(|b| b.bn.is_none())
                    .ok_or_else(|| Error::CorruptFile("batch norm record without conv".into()))?;
                last.bn = Some(bn);
            }
            tag => return Err(Error::CorruptFile(format!("unknown layer tag {tag}"))),
        }
    }
    let params = NetworkParams::from_blocks(blocks)
        .map_err(|e| Error::CorruptFile(format!("invalid layer structure: {e}")))?;
    Ok((params, cur.pos))
}

pub fn save_params<T: Real>(params: &NetworkParams<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_params(params, &mut file).map_err(|e| Error::io(path, e))
}

pub fn load_params<T: Real>(path: impl AsRef<Path>) -> Result<NetworkParams<T>> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let (params, used) = read_params(&bytes)?;
    if used != bytes.len() {
        return Err(Error::CorruptFile(format!(
            "{}: {} trailing bytes after parameters",
            path.display(),
            bytes.len() - used
        )));
    }
    Ok(params)
}
