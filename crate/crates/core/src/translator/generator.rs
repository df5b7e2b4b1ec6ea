//! Multi-input multi-output encoder–decoder translator with latent-code
//! injection.
//!
//! Scale 0 is the full-resolution input; scale `s` works at `1/2^s` of it.
//! Each scale's input (the bilinearly downsampled image plus the spatially
//! broadcast latent code) enters the shared encoder through a shallow
//! convolutional module and a feature attention merge. Asymmetric fusion
//! blocks mix all encoder scales before the single decoder, which emits one
//! image per scale. Every head predicts a per-pixel gain and offset applied
//! to its scale's input, `y = (1 + tanh a) · x + tanh b`, clamped to [-1, 1].

use candle_core::{DType, Device, Tensor};
use candle_nn::{Conv2d, Module, VarBuilder};
use rand::Rng;

use crate::config::GeneratorConfig;
use crate::error::{Error, Result};
use crate::nn::{conv, ResStack};
use crate::resample::resize;
use crate::rng::normal_tensor;

/// Latent code `z` plus, when the generator asks for it, one Gaussian noise
/// map per scale.
#[derive(Clone, Debug)]
pub struct LatentCode {
    /// `(N, d)` standard-normal code.
    pub z: Tensor,
    pub noise_maps: Option<Vec<Tensor>>,
}

impl LatentCode {
    pub fn sample(
        rng: &mut impl Rng,
        batch: usize,
        cfg: &GeneratorConfig,
        scales_k: usize,
        resolution: (usize, usize),
        device: &Device,
        dtype: DType,
    ) -> Result<Self> {
        let z = normal_tensor(rng, (batch, cfg.latent_dim), 1.0, device, dtype)?;
        let noise_maps = if cfg.noise_map {
            Some(
                (0..scales_k)
                    .map(|s| {
                        normal_tensor(
                            rng,
                            (batch, 1, resolution.0 >> s, resolution.1 >> s),
                            1.0,
                            device,
                            dtype,
                        )
                    })
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        Ok(Self { z, noise_maps })
    }

    pub fn zeros_like(&self) -> Result<Self> {
        Ok(Self {
            z: self.z.zeros_like()?,
            noise_maps: self
                .noise_maps
                .as_ref()
                .map(|m| m.iter().map(|t| t.zeros_like()).collect::<candle_core::Result<Vec<_>>>())
                .transpose()?,
        })
    }
}

#[derive(Clone, Debug)]
struct ShallowConv {
    a: Conv2d,
    b: Conv2d,
    merge: Conv2d,
}

impl ShallowConv {
    fn new(in_c: usize, out_c: usize, vb: VarBuilder) -> Result<Self> {
        let mid = (out_c / 2).max(1);
        Ok(Self {
            a: conv(in_c, mid, 3, 1, vb.pp("a"))?,
            b: conv(mid, mid, 1, 1, vb.pp("b"))?,
            merge: conv(mid + in_c, out_c, 1, 1, vb.pp("merge"))?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.a.forward(x)?.relu()?;
        let h = self.b.forward(&h)?.relu()?;
        Ok(self.merge.forward(&Tensor::cat(&[x, &h], 1)?)?.relu()?)
    }
}

/// `x + conv(x ⊙ shallow)`.
#[derive(Clone, Debug)]
struct FeatureAttention {
    merge: Conv2d,
}

impl FeatureAttention {
    fn new(c: usize, vb: VarBuilder) -> Result<Self> {
        Ok(Self {
            merge: conv(c, c, 3, 1, vb.pp("res_out"))?,
        })
    }

    fn forward(&self, x: &Tensor, shallow: &Tensor) -> Result<Tensor> {
        Ok((x + self.merge.forward(&(x * shallow)?)?)?)
    }
}

/// Concatenates every encoder scale resampled to the target size, then fuses.
#[derive(Clone, Debug)]
struct AsymmetricFusion {
    squeeze: Conv2d,
    fuse: Conv2d,
}

impl AsymmetricFusion {
    fn new(in_c: usize, out_c: usize, vb: VarBuilder) -> Result<Self> {
        Ok(Self {
            squeeze: conv(in_c, out_c, 1, 1, vb.pp("squeeze"))?,
            fuse: conv(out_c, out_c, 3, 1, vb.pp("fuse"))?,
        })
    }

    fn forward(&self, feats: &[Tensor], h: usize, w: usize) -> Result<Tensor> {
        let resized = feats
            .iter()
            .map(|f| resize(f, h, w))
            .collect::<Result<Vec<_>>>()?;
        let x = Tensor::cat(&resized, 1)?;
        let x = self.squeeze.forward(&x)?.relu()?;
        Ok(self.fuse.forward(&x)?)
    }
}

/// Names of the parameter groups, used by gradient-flow checks.
pub const GENERATOR_SUBMODULES: &[&str] = &["in", "scm", "fam", "down", "eb", "aff", "up", "join", "db", "head"];

#[derive(Clone, Debug)]
pub struct GeneratorNet {
    cfg: GeneratorConfig,
    scales_k: usize,
    image_channels: usize,
    input: Conv2d,
    shallow: Vec<ShallowConv>,
    attention: Vec<FeatureAttention>,
    down: Vec<Conv2d>,
    encoders: Vec<ResStack>,
    fusion: Vec<AsymmetricFusion>,
    up: Vec<Conv2d>,
    join: Vec<Conv2d>,
    decoders: Vec<ResStack>,
    heads: Vec<Conv2d>,
}

impl GeneratorNet {
    pub fn new(cfg: &GeneratorConfig, scales_k: usize, vb: VarBuilder) -> Result<Self> {
        if scales_k == 0 {
            return Err(Error::Config("generator needs at least one scale".into()));
        }
        let image_channels = 3;
        let extra = cfg.latent_dim + usize::from(cfg.noise_map);
        let in_c = image_channels + extra;
        let ch = |s: usize| cfg.base_channels << s;
        let total: usize = (0..scales_k).map(ch).sum();

        let input = conv(in_c, ch(0), 3, 1, vb.pp("in"))?;
        let mut shallow = Vec::new();
        let mut attention = Vec::new();
        let mut down = Vec::new();
        let mut encoders = Vec::new();
        let mut fusion = Vec::new();
        let mut up = Vec::new();
        let mut join = Vec::new();
        let mut decoders = Vec::new();
        let mut heads = Vec::new();
        for s in 0..scales_k {
            encoders.push(ResStack::new(ch(s), cfg.num_res, vb.pp(format!("eb{s}")))?);
            decoders.push(ResStack::new(ch(s), cfg.num_res, vb.pp(format!("db{s}")))?);
            heads.push(conv(ch(s), 2 * image_channels, 3, 1, vb.pp(format!("head{s}")))?);
            if s > 0 {
                shallow.push(ShallowConv::new(in_c, ch(s), vb.pp(format!("scm{s}")))?);
                attention.push(FeatureAttention::new(ch(s), vb.pp(format!("fam{s}")))?);
                down.push(conv(ch(s - 1), ch(s), 3, 2, vb.pp(format!("down{s}")))?);
            }
            if s + 1 < scales_k {
                fusion.push(AsymmetricFusion::new(total, ch(s), vb.pp(format!("aff{s}")))?);
                up.push(conv(ch(s + 1), ch(s), 3, 1, vb.pp(format!("up{s}")))?);
                join.push(conv(2 * ch(s), ch(s), 1, 1, vb.pp(format!("join{s}")))?);
            }
        }
        Ok(Self {
            cfg: cfg.clone(),
            scales_k,
            image_channels,
            input,
            shallow,
            attention,
            down,
            encoders,
            fusion,
            up,
            join,
            decoders,
            heads,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    pub fn scales_k(&self) -> usize {
        self.scales_k
    }

    /// Required divisor of the input height and width.
    pub fn size_multiple(&self) -> usize {
        1 << (self.scales_k - 1)
    }

    fn scale_input(&self, image: &Tensor, z: &LatentCode, s: usize) -> Result<Tensor> {
        let (n, _, h, w) = image.dims4()?;
        let code = z
            .z
            .reshape((n, self.cfg.latent_dim, 1, 1))?
            .broadcast_as((n, self.cfg.latent_dim, h, w))?;
        let mut parts = vec![image.clone(), code.contiguous()?];
        if self.cfg.noise_map {
            let maps = z.noise_maps.as_ref().ok_or_else(|| {
                Error::Contract("generator expects per-scale noise maps in the latent code".into())
            })?;
            let m = maps
                .get(s)
                .ok_or_else(|| Error::Shape(format!("missing noise map for scale {s}")))?;
            parts.push(resize(m, h, w)?);
        }
        Ok(Tensor::cat(&parts, 1)?)
    }

    /// Returns `scales_k` images ordered coarse to fine; the last one is the
    /// full-resolution translation.
    pub fn forward(&self, y_c: &Tensor, z: &LatentCode) -> Result<Vec<Tensor>> {
        let (n, c, h, w) = y_c
            .dims4()
            .map_err(|_| Error::Shape(format!("generator expects (N, C, H, W), got {:?}", y_c.dims())))?;
        if c != self.image_channels {
            return Err(Error::Shape(format!(
                "generator expects {} channels, got {c}",
                self.image_channels
            )));
        }
        let m = self.size_multiple();
        if h % m != 0 || w % m != 0 {
            return Err(Error::Shape(format!(
                "input {h}x{w} must be a multiple of {m} for {} scales",
                self.scales_k
            )));
        }
        if z.z.dims() != [n, self.cfg.latent_dim] {
            return Err(Error::Shape(format!(
                "latent code {:?} does not match batch {n} and dimension {}",
                z.z.dims(),
                self.cfg.latent_dim
            )));
        }

        let images: Vec<Tensor> = (0..self.scales_k)
            .map(|s| resize(y_c, h >> s, w >> s))
            .collect::<Result<_>>()?;

        let mut feats: Vec<Tensor> = Vec::with_capacity(self.scales_k);
        let x0 = self.input.forward(&self.scale_input(&images[0], z, 0)?)?.relu()?;
        feats.push(self.encoders[0].forward(&x0)?);
        for s in 1..self.scales_k {
            let prev = self.down[s - 1].forward(&feats[s - 1])?.relu()?;
            let shallow = self.shallow[s - 1].forward(&self.scale_input(&images[s], z, s)?)?;
            let merged = self.attention[s - 1].forward(&prev, &shallow)?;
            feats.push(self.encoders[s].forward(&merged)?);
        }

        let mut outputs = Vec::with_capacity(self.scales_k);
        let last = self.scales_k - 1;
        let mut d = self.decoders[last].forward(&feats[last])?;
        outputs.push(self.head(last, &d, &images[last])?);
        for s in (0..last).rev() {
            let (hs, ws) = (h >> s, w >> s);
            let upsampled = self.up[s].forward(&resize(&d, hs, ws)?)?.relu()?;
            let fused = self.fusion[s].forward(&feats, hs, ws)?;
            let joined = self.join[s]
                .forward(&Tensor::cat(&[&upsampled, &fused], 1)?)?
                .relu()?;
            d = self.decoders[s].forward(&joined)?;
            outputs.push(self.head(s, &d, &images[s])?);
        }
        Ok(outputs)
    }

    fn head(&self, s: usize, feat: &Tensor, image: &Tensor) -> Result<Tensor> {
        let p = self.heads[s].forward(feat)?;
        let c = self.image_channels;
        let gain = (p.narrow(1, 0, c)?.tanh()? + 1.0)?;
        let offset = p.narrow(1, c, c)?.tanh()?;
        Ok((gain * image)?.add(&offset)?.clamp(-1.0, 1.0)?)
    }

    /// Finest-scale output only.
    pub fn translate(&self, y_c: &Tensor, z: &LatentCode) -> Result<Tensor> {
        Ok(self.forward(y_c, z)?.pop().expect("at least one scale"))
    }
}

/// Maps a parameter name to the submodule group it belongs to.
pub fn submodule_of(name: &str) -> Option<&'static str> {
    let head = name.split('.').next()?;
    let stem = head.trim_end_matches(|c: char| c.is_ascii_digit());
    GENERATOR_SUBMODULES.iter().copied().find(|g| *g == stem)
}
