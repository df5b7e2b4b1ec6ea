//! Image carrier type and the 8-bit <-> [-1, 1] mapping used everywhere.

use std::path::Path;

use candle_core::{DType, Device, Tensor};
use image::{ImageBuffer, Rgb};

use crate::error::{Error, Result};
use crate::resample;

/// Smallest side length accepted by [`ImageTensor`].
pub const MIN_SIDE: usize = 8;

/// Maps an 8-bit intensity to [-1, 1].
#[inline]
pub fn normalize_value(v: f32) -> f32 {
    v / 127.5 - 1.0
}

/// Maps [-1, 1] back to an 8-bit intensity with rounding and clamping.
#[inline]
pub fn denormalize_value(x: f32) -> u8 {
    (x as f64 * 127.5 + 127.5).round().clamp(0.0, 255.0) as u8
}

pub fn normalize(pixels: &[u8]) -> Vec<f32> {
    pixels.iter().map(|&p| normalize_value(p as f32)).collect()
}

pub fn denormalize(values: &[f32]) -> Vec<u8> {
    values.iter().map(|&x| denormalize_value(x)).collect()
}

/// A height x width x channels image with values in [-1, 1], stored row-major
/// with interleaved channels.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    data: Vec<f32>,
    height: usize,
    width: usize,
    channels: usize,
}

impl ImageTensor {
    pub fn new(data: Vec<f32>, height: usize, width: usize, channels: usize) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Shape(format!(
                "images carry 1 or 3 channels, got {channels}"
            )));
        }
        if height < MIN_SIDE || width < MIN_SIDE {
            return Err(Error::Shape(format!(
                "image {height}x{width} is below the {MIN_SIDE}x{MIN_SIDE} minimum"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "buffer of {} values does not match {height}x{width}x{channels}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::Numeric(format!(
                "image value {bad} outside [-1, 1]"
            )));
        }
        Ok(Self {
            data,
            height,
            width,
            channels,
        })
    }

    /// Constant-valued image.
    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Result<Self> {
        Self::new(vec![value; height * width * channels], height, width, channels)
    }

    pub fn from_u8(pixels: &[u8], height: usize, width: usize, channels: usize) -> Result<Self> {
        Self::new(normalize(pixels), height, width, channels)
    }

    pub fn to_u8(&self) -> Vec<u8> {
        denormalize(&self.data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Channel-first `(1, C, H, W)` tensor.
    pub fn to_tensor(&self, device: &Device, dtype: DType) -> Result<Tensor> {
        let t = Tensor::from_slice(&self.data, (self.height, self.width, self.channels), device)?
            .permute((2, 0, 1))?
            .unsqueeze(0)?
            .to_dtype(dtype)?
            .contiguous()?;
        Ok(t)
    }

    /// Accepts `(C, H, W)` or `(1, C, H, W)`; values are clamped into [-1, 1].
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let t = match t.rank() {
            3 => t.clone(),
            4 if t.dim(0)? == 1 => t.squeeze(0)?,
            _ => {
                return Err(Error::Shape(format!(
                    "expected (C,H,W) or (1,C,H,W), got {:?}",
                    t.dims()
                )))
            }
        };
        let (c, h, w) = t.dims3()?;
        let data = t
            .permute((1, 2, 0))?
            .to_dtype(DType::F32)?
            .flatten_all()?
            .to_vec1::<f32>()?
            .into_iter()
            .map(|v| v.clamp(-1.0, 1.0))
            .collect();
        Self::new(data, h, w, c)
    }

    /// Bilinear resize with the library-wide interpolation.
    pub fn resize(&self, height: usize, width: usize) -> Result<Self> {
        if height == self.height && width == self.width {
            return Ok(self.clone());
        }
        let t = self.to_tensor(&Device::Cpu, DType::F64)?;
        let r = resample::resize(&t, height, width)?;
        Self::from_tensor(&r)
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)?.to_rgb8();
        let (w, h) = img.dimensions();
        Self::from_u8(img.as_raw(), h as usize, w as usize, 3)
    }

    /// Writes an 8-bit PNG. Grayscale images are expanded to RGB.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let rgb = self.to_rgb8();
        rgb.save(path)?;
        Ok(())
    }

    pub fn to_rgb8(&self) -> ImageBuffer<Rgb<u8>, Vec<u8>> {
        let bytes = self.to_u8();
        let rgb: Vec<u8> = if self.channels == 3 {
            bytes
        } else {
            bytes.iter().flat_map(|&v| [v, v, v]).collect()
        };
        ImageBuffer::from_raw(self.width as u32, self.height as u32, rgb)
            .expect("buffer length matches dimensions")
    }
}

/// Stacks images of identical shape into an `(N, C, H, W)` tensor.
pub fn stack(images: &[ImageTensor], device: &Device, dtype: DType) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::Shape("cannot stack an empty batch".into()))?;
    let tensors = images
        .iter()
        .map(|im| {
            if (im.height, im.width, im.channels) != (first.height, first.width, first.channels) {
                return Err(Error::Shape(format!(
                    "batch mixes {}x{}x{} and {}x{}x{} images",
                    first.height, first.width, first.channels, im.height, im.width, im.channels
                )));
            }
            im.to_tensor(device, dtype)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Tensor::cat(&tensors, 0)?)
}

/// Splits an `(N, C, H, W)` tensor back into images.
pub fn unstack(batch: &Tensor) -> Result<Vec<ImageTensor>> {
    let n = batch.dim(0)?;
    (0..n)
        .map(|i| ImageTensor::from_tensor(&batch.get(i)?))
        .collect()
}
