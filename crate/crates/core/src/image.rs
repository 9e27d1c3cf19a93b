//! Single-channel intensity images and their file formats.
//!
//! The canonical intensity domain is `[0, 1]`. Loading normalizes by the
//! format's maximum code value; saving clamps and quantizes to 8 bits.
//! Speckled observations can exceed 1, so they are kept in a raw
//! little-endian `f32` container (`SPKL1`) instead of PNG.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use image::{DynamicImage, GrayImage, ImageFormat, ImageReader};

use crate::error::{Error, Result};
use crate::tensor::{Dims, Real, Tensor4};

/// Magic bytes of the raw float raster format.
pub const RAW_MAGIC: &[u8; 5] = b"SPKL1";

/// Row-major single-channel image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {width}x{height} image",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite pixel at index {i}"
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self::new(width, height, vec![value; width * height]).expect("valid constant image")
    }

    /// Builds an image from a per-pixel function of `(x, y)`.
    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f32) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn ensure_same_shape(&self, other: &Image, what: &str) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::ShapeMismatch(format!(
                "{what}: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    /// True when every pixel lies in the canonical `[0, 1]` domain.
    pub fn is_normalized(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<Self> {
        Self::new(self.width, self.height, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn clamped(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        }
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 || x0 + width > self.width || y0 + height > self.height {
            return Err(Error::InvalidArgument(format!(
                "crop {width}x{height}+{x0}+{y0} outside {}x{} image",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(width * height);
        for y in y0..y0 + height {
            let row = y * self.width;
            data.extend_from_slice(&self.data[row + x0..row + x0 + width]);
        }
        Self::new(width, height, data)
    }

    pub fn center_crop(&self, width: usize, height: usize) -> Result<Self> {
        if width > self.width || height > self.height {
            return Err(Error::InvalidArgument(format!(
                "center crop {width}x{height} larger than {}x{} image",
                self.width, self.height
            )));
        }
        self.crop(
            (self.width - width) / 2,
            (self.height - height) / 2,
            width,
            height,
        )
    }
}

/// Stacks same-sized images into an `N×1×H×W` tensor.
pub fn images_to_tensor<T: Real>(images: &[&Image]) -> Result<Tensor4<T>> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty image batch".into()))?;
    let dims = Dims::new(images.len(), 1, first.height, first.width);
    let mut data = Vec::with_capacity(dims.len());
    for img in images {
        first.ensure_same_shape(img, "batch")?;
        data.extend(img.data.iter().map(|&v| T::from_f64_lossy(v as f64)));
    }
    Tensor4::from_vec(dims, data)
}

/// Splits channel 0 of every batch item back into images.
pub fn tensor_to_images<T: Real>(tensor: &Tensor4<T>) -> Result<Vec<Image>> {
    let d = tensor.dims();
    (0..d.n)
        .map(|n| {
            Image::new(
                d.w,
                d.h,
                tensor.plane(n, 0).iter().map(|v| v.as_f64() as f32).collect(),
            )
        })
        .collect()
}

/// Reads an 8/16-bit PNG or PGM and normalizes it to `[0, 1]`. Color inputs
/// are reduced to the unweighted mean of their color channels.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    match reader.format() {
        Some(ImageFormat::Png) | Some(ImageFormat::Pnm) => {}
        other => {
            return Err(Error::UnsupportedFormat {
                path: path.to_path_buf(),
                reason: format!("expected PNG or PGM, found {other:?}"),
            })
        }
    }
    let decoded = reader.decode().map_err(|e| Error::UnsupportedFormat {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let (width, height) = (decoded.width() as usize, decoded.height() as usize);
    let data = match decoded {
        DynamicImage::ImageLuma8(buf) => buf.into_raw().iter().map(|&v| v as f32 / 255.0).collect(),
        DynamicImage::ImageLuma16(buf) => {
            buf.into_raw().iter().map(|&v| v as f32 / 65535.0).collect()
        }
        DynamicImage::ImageLumaA8(buf) => channel_mean(&buf.into_raw(), 2, 1, 255.0),
        DynamicImage::ImageLumaA16(buf) => channel_mean(&buf.into_raw(), 2, 1, 65535.0),
        DynamicImage::ImageRgb8(buf) => channel_mean(&buf.into_raw(), 3, 3, 255.0),
        DynamicImage::ImageRgba8(buf) => channel_mean(&buf.into_raw(), 4, 3, 255.0),
        DynamicImage::ImageRgb16(buf) => channel_mean(&buf.into_raw(), 3, 3, 65535.0),
        DynamicImage::ImageRgba16(buf) => channel_mean(&buf.into_raw(), 4, 3, 65535.0),
        other => {
            return Err(Error::UnsupportedFormat {
                path: path.to_path_buf(),
                reason: format!("pixel layout {:?}", other.color()),
            })
        }
    };
    Image::new(width, height, data)
}

fn channel_mean<P: Copy + Into<f32>>(raw: &[P], stride: usize, colors: usize, max: f32) -> Vec<f32> {
    raw.chunks_exact(stride)
        .map(|px| px[..colors].iter().map(|&v| v.into()).sum::<f32>() / (colors as f32 * max))
        .collect()
}

/// Writes an 8-bit grayscale PNG storing `round(clamp(v) · 255)`.
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = img.data.iter().map(|&v| quantize(v)).collect();
    let buf = GrayImage::from_raw(img.width as u32, img.height as u32, bytes)
        .expect("buffer length matches dimensions");
    buf.save_with_format(path, ImageFormat::Png)
        .map_err(|e| Error::io(path, e))
}

pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Bilinear resampling with pixel-center alignment and edge clamping.
pub fn resize_bilinear(img: &Image, width: usize, height: usize) -> Result<Image> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument(format!(
            "target size must be positive, got {width}x{height}"
        )));
    }
    if width == img.width && height == img.height {
        return Ok(img.clone());
    }
    let sx = img.width as f64 / width as f64;
    let sy = img.height as f64 / height as f64;
    let sample_axis = |i: usize, scale: f64, len: usize| -> (usize, usize, f64) {
        let pos = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(len - 1);
        (lo, hi, pos - lo as f64)
    };
    let cols: Vec<_> = (0..width).map(|x| sample_axis(x, sx, img.width)).collect();
    let mut data = Vec::with_capacity(width * height);
    for y in 0..height {
        let (y0, y1, fy) = sample_axis(y, sy, img.height);
        for &(x0, x1, fx) in &cols {
            let top = img.get(x0, y0) as f64 * (1.0 - fx) + img.get(x1, y0) as f64 * fx;
            let bottom = img.get(x0, y1) as f64 * (1.0 - fx) + img.get(x1, y1) as f64 * fx;
            data.push((top * (1.0 - fy) + bottom * fy) as f32);
        }
    }
    Image::new(width, height, data)
}

/// Writes the raw float raster: `SPKL1`, u32 width, u32 height, then
/// `width·height` little-endian `f32` values.
pub fn write_raw(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        out.write_all(RAW_MAGIC)?;
        out.write_all(&(img.width as u32).to_le_bytes())?;
        out.write_all(&(img.height as u32).to_le_bytes())?;
        for v in &img.data {
            out.write_all(&v.to_le_bytes())?;
        }
        out.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

pub fn read_raw(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 13 || &bytes[..5] != RAW_MAGIC {
        return Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
            reason: "missing SPKL1 header".into(),
        });
    }
    let width = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let height = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
    let body = &bytes[13..];
    if body.len() != width * height * 4 {
        return Err(Error::CorruptFile(format!(
            "{}: expected {} data bytes for {width}x{height}, found {}",
            path.display(),
            width * height * 4,
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Image::new(width, height, data)
}

/// Loads either a raw float raster (`.spkl`) or a PNG/PGM image.
pub fn load_any(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    if is_raw_path(path) {
        read_raw(path)
    } else {
        load_image(path)
    }
}

/// Saves as raw float for `.spkl` paths, 8-bit PNG otherwise.
pub fn save_any(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if is_raw_path(path) {
        write_raw(img, path)
    } else {
        save_image(img, path)
    }
}

pub fn is_raw_path(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("spkl"))
}
