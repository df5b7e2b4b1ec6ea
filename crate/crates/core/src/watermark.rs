//! Watermark encoder/decoder, message embedding and extraction, and
//! resolution-independent embedding by residual transfer.

use candle_core::{DType, Device, Tensor};
use candle_nn::{Conv2d, Linear, Module, VarBuilder};
use image::RgbImage;

use crate::config::CodecConfig;
use crate::error::{Error, Result};
use crate::image::{denormalize_value, normalize_value, ImageTensor};
use crate::message::WatermarkMessage;
use crate::nn::{conv, ResStack};
use crate::resample::resize;

/// Message bits as a `(N, L)` tensor of `±1`.
pub fn message_signs(msgs: &[WatermarkMessage], device: &Device, dtype: DType) -> Result<Tensor> {
    let len = msgs.first().map(|m| m.len()).unwrap_or(0);
    if msgs.iter().any(|m| m.len() != len) {
        return Err(Error::Shape("messages in a batch must share one length".into()));
    }
    let flat: Vec<f32> = msgs.iter().flat_map(|m| m.as_signs()).collect();
    Ok(Tensor::from_vec(flat, (msgs.len(), len), device)?.to_dtype(dtype)?)
}

/// Message bits as a `(N, L)` tensor of `{0, 1}`.
pub fn message_bits(msgs: &[WatermarkMessage], device: &Device, dtype: DType) -> Result<Tensor> {
    let len = msgs.first().map(|m| m.len()).unwrap_or(0);
    let flat: Vec<f32> = msgs
        .iter()
        .flat_map(|m| m.bits().iter().map(|&b| b as f32))
        .collect();
    Ok(Tensor::from_vec(flat, (msgs.len(), len), device)?.to_dtype(dtype)?)
}

/// Channels of the learned low-resolution message map.
const MSG_MAP_CHANNELS: usize = 4;
/// The message map is predicted at 1/4 of the encoder resolution.
const MSG_MAP_STRIDE: usize = 4;

/// Cover features concatenated with the spatially replicated message and a
/// learned spatial message map (a dense projection of the bits, upsampled), a
/// stack of residual blocks and a zero-initialized residual head.
#[derive(Clone, Debug)]
pub struct EncoderNet {
    message_length: usize,
    resolution: (usize, usize),
    stem: Conv2d,
    msg_map: Linear,
    join: Conv2d,
    blocks: ResStack,
    zero_head: Conv2d,
}

impl EncoderNet {
    pub fn new(
        cfg: &CodecConfig,
        message_length: usize,
        resolution: (usize, usize),
        vb: VarBuilder,
    ) -> Result<Self> {
        let c = cfg.channels;
        let (h, w) = resolution;
        if h % MSG_MAP_STRIDE != 0 || w % MSG_MAP_STRIDE != 0 {
            return Err(Error::Config(format!(
                "encoder resolution {h}x{w} must be a multiple of {MSG_MAP_STRIDE}"
            )));
        }
        let map_len = MSG_MAP_CHANNELS * (h / MSG_MAP_STRIDE) * (w / MSG_MAP_STRIDE);
        Ok(Self {
            message_length,
            resolution,
            stem: conv(3, c, 3, 1, vb.pp("stem"))?,
            msg_map: candle_nn::linear(message_length, map_len, vb.pp("msg_map"))?,
            join: conv(c + message_length + MSG_MAP_CHANNELS + 3, c, 3, 1, vb.pp("join"))?,
            blocks: ResStack::new(c, cfg.encoder_blocks, vb.pp("blocks"))?,
            zero_head: conv(c, 3, 3, 1, vb.pp("zero_head"))?,
        })
    }

    pub fn message_length(&self) -> usize {
        self.message_length
    }

    pub fn resolution(&self) -> (usize, usize) {
        self.resolution
    }

    /// Residual added to the cover, before clamping.
    pub fn residual(&self, cover: &Tensor, signs: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = cover.dims4()?;
        if c != 3 || (h, w) != self.resolution {
            return Err(Error::Shape(format!(
                "encoder works at 3x{}x{}, got {c}x{h}x{w}; use resolution_scale_embed for other sizes",
                self.resolution.0, self.resolution.1
            )));
        }
        if signs.dims() != [n, self.message_length] {
            return Err(Error::Shape(format!(
                "message tensor {:?} does not match batch {n} x {} bits",
                signs.dims(),
                self.message_length
            )));
        }
        let replicated = signs
            .reshape((n, self.message_length, 1, 1))?
            .broadcast_as((n, self.message_length, h, w))?
            .contiguous()?;
        let map = self.msg_map.forward(signs)?.reshape((
            n,
            MSG_MAP_CHANNELS,
            h / MSG_MAP_STRIDE,
            w / MSG_MAP_STRIDE,
        ))?;
        let map = resize(&map, h, w)?;
        let feat = self.stem.forward(cover)?.relu()?;
        let h0 = self
            .join
            .forward(&Tensor::cat(&[&feat, &replicated, &map, cover], 1)?)?
            .relu()?;
        let h1 = self.blocks.forward(&h0)?;
        Ok(self.zero_head.forward(&h1)?)
    }

    /// `clamp(cover + residual(cover, msg))`.
    pub fn forward(&self, cover: &Tensor, signs: &Tensor) -> Result<Tensor> {
        Ok((cover + self.residual(cover, signs)?)?.clamp(-1.0, 1.0)?)
    }
}

/// Strided conv stack and a dense per-bit head over the final feature grid.
/// Inputs at other sizes are bilinearly resized to the native resolution.
///
/// A global average pool here would make the decoder translation invariant,
/// so it could not tell a residual pattern from its negation on flat covers.
#[derive(Clone, Debug)]
pub struct DecoderNet {
    message_length: usize,
    resolution: (usize, usize),
    stem: Conv2d,
    layers: Vec<Conv2d>,
    bits: Linear,
}

impl DecoderNet {
    pub fn new(
        cfg: &CodecConfig,
        message_length: usize,
        resolution: (usize, usize),
        vb: VarBuilder,
    ) -> Result<Self> {
        let c = cfg.channels;
        let (mut h, mut w) = resolution;
        for _ in 0..cfg.decoder_layers {
            h = h.div_ceil(2);
            w = w.div_ceil(2);
        }
        Ok(Self {
            message_length,
            resolution,
            stem: conv(3, c, 3, 1, vb.pp("stem"))?,
            layers: (0..cfg.decoder_layers)
                .map(|i| conv(c, c, 3, 2, vb.pp(format!("down{i}"))))
                .collect::<Result<_>>()?,
            bits: candle_nn::linear(c * h * w, message_length, vb.pp("bits"))?,
        })
    }

    pub fn message_length(&self) -> usize {
        self.message_length
    }

    pub fn resolution(&self) -> (usize, usize) {
        self.resolution
    }

    /// `(N, L)` logits.
    pub fn logits(&self, img: &Tensor) -> Result<Tensor> {
        let (_, _, h, w) = img.dims4()?;
        let (u, v) = self.resolution;
        let img = if (h, w) == (u, v) { img.clone() } else { resize(img, u, v)? };
        let mut h = self.stem.forward(&img)?.relu()?;
        for layer in &self.layers {
            h = layer.forward(&h)?.relu()?;
        }
        Ok(self.bits.forward(&h.flatten_from(1)?)?)
    }

    /// Per-bit soft scores in [0, 1].
    pub fn scores(&self, img: &Tensor) -> Result<Tensor> {
        Ok(candle_nn::ops::sigmoid(&self.logits(img)?)?)
    }
}

/// Embeds `msg` into a native-resolution cover.
pub fn encode(cover: &ImageTensor, msg: &WatermarkMessage, net: &EncoderNet) -> Result<ImageTensor> {
    if msg.len() != net.message_length() {
        return Err(Error::Shape(format!(
            "message has {} bits, encoder expects {}",
            msg.len(),
            net.message_length()
        )));
    }
    let device = Device::Cpu;
    let x = cover.to_tensor(&device, DType::F32)?;
    let signs = message_signs(std::slice::from_ref(msg), &device, DType::F32)?;
    ImageTensor::from_tensor(&net.forward(&x, &signs)?)
}

/// Soft scores and the hard-decided message (`score > 0.5` is a one).
pub fn decode(img: &ImageTensor, net: &DecoderNet) -> Result<(Vec<f32>, WatermarkMessage)> {
    let x = img.to_tensor(&Device::Cpu, DType::F32)?;
    let scores = net.scores(&x)?.squeeze(0)?.to_dtype(DType::F32)?.to_vec1::<f32>()?;
    let msg = WatermarkMessage::from_scores(&scores);
    Ok((scores, msg))
}

/// Something that watermarks a `(1, 3, u, v)` cover at a fixed native size.
pub trait Embedder {
    fn native_size(&self) -> (usize, usize);
    fn embed(&self, cover: &Tensor, msg: &WatermarkMessage) -> Result<Tensor>;
}

impl Embedder for EncoderNet {
    fn native_size(&self) -> (usize, usize) {
        self.resolution
    }

    fn embed(&self, cover: &Tensor, msg: &WatermarkMessage) -> Result<Tensor> {
        let signs = message_signs(std::slice::from_ref(msg), cover.device(), cover.dtype())?;
        self.forward(cover, &signs)
    }
}

fn rgb_to_tensor(img: &RgbImage) -> Result<Tensor> {
    let (w, h) = img.dimensions();
    let data: Vec<f64> = img.as_raw().iter().map(|&p| normalize_value(p as f32) as f64).collect();
    Ok(Tensor::from_vec(data, (h as usize, w as usize, 3), &Device::Cpu)?
        .permute((2, 0, 1))?
        .unsqueeze(0)?
        .contiguous()?)
}

/// The full-resolution residual: `interpolate(E(x') − x', (h, w))` with
/// `x' = interpolate(x_o, (u, v))`, all in [-1, 1] units, `(1, 3, h, w)`.
pub fn scaled_residual(x_o: &RgbImage, msg: &WatermarkMessage, enc: &dyn Embedder) -> Result<Tensor> {
    let x = rgb_to_tensor(x_o)?;
    let (_, _, h, w) = x.dims4()?;
    let (u, v) = enc.native_size();
    let x_small = resize(&x, u, v)?;
    let embedded = enc
        .embed(&x_small.to_dtype(DType::F32)?, msg)?
        .to_dtype(DType::F64)?;
    let r_small = (embedded - &x_small)?;
    resize(&r_small, h, w)
}

/// Watermarks an image of any size with a fixed-resolution encoder by
/// transferring the encoder's residual back to the original resolution.
pub fn resolution_scale_embed(
    x_o: &RgbImage,
    msg: &WatermarkMessage,
    enc: &dyn Embedder,
) -> Result<RgbImage> {
    let x = rgb_to_tensor(x_o)?;
    let r = scaled_residual(x_o, msg, enc)?;
    let x_w = (x + r)?.clamp(-1.0, 1.0)?;
    let (w, h) = x_o.dimensions();
    let values = x_w
        .squeeze(0)?
        .permute((1, 2, 0))?
        .flatten_all()?
        .to_vec1::<f64>()?;
    let bytes: Vec<u8> = values
        .iter()
        .map(|&v| (v * 127.5 + 127.5).round().clamp(0.0, 255.0) as u8)
        .collect();
    Ok(RgbImage::from_raw(w, h, bytes).expect("buffer matches dimensions"))
}

/// `denormalize(clamp(E(x)))` for a native-resolution 8-bit image; the
/// reference that resolution scaling reduces to when no resizing happens.
pub fn direct_embed_u8(x_o: &RgbImage, msg: &WatermarkMessage, enc: &dyn Embedder) -> Result<RgbImage> {
    let x = rgb_to_tensor(x_o)?.to_dtype(DType::F32)?;
    let y = enc.embed(&x, msg)?.clamp(-1.0, 1.0)?;
    let (w, h) = x_o.dimensions();
    let values = y
        .squeeze(0)?
        .permute((1, 2, 0))?
        .flatten_all()?
        .to_dtype(DType::F32)?
        .to_vec1::<f32>()?;
    let bytes: Vec<u8> = values.iter().map(|&v| denormalize_value(v)).collect();
    Ok(RgbImage::from_raw(w, h, bytes).expect("buffer matches dimensions"))
}
