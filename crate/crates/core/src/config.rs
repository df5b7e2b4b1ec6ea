//! Run configuration: one human-readable file (TOML or JSON) mirrors these
//! structs. `S2R_SEED` in the environment overrides the configured seed.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const SEED_ENV: &str = "S2R_SEED";

/// Closed interval `[lo, hi]`, written as a two-element array.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return Err(Error::Config(format!("invalid range [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    /// Degenerate range holding a single value.
    pub fn fixed(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn sample(&self, rng: &mut impl rand::Rng) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo..=self.hi)
        }
    }
}

impl TryFrom<[f64; 2]> for Range {
    type Error = Error;
    fn try_from(v: [f64; 2]) -> Result<Self> {
        Range::new(v[0], v[1])
    }
}

impl From<Range> for [f64; 2] {
    fn from(r: Range) -> Self {
        [r.lo, r.hi]
    }
}

fn full_turn() -> Range {
    Range {
        lo: 0.0,
        hi: std::f64::consts::TAU,
    }
}

/// One distortion stage with the ranges its parameters are drawn from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseOpConfig {
    Perspective {
        /// Per-coordinate corner displacement as a fraction of side length.
        corner_jitter_frac: Range,
    },
    Illumination {
        strength: Range,
        #[serde(default = "full_turn")]
        direction: Range,
    },
    Moire {
        /// Cycles per image side.
        freq: Range,
        amplitude: Range,
        #[serde(default = "full_turn")]
        angle: Range,
    },
    Gaussian {
        sigma: Range,
    },
    GrayscaleDeviation {
        delta: Range,
    },
    Blur {
        sigma: Range,
    },
    ColorShift {
        gain: Range,
        bias: Range,
    },
    JpegApprox {
        quality: Range,
    },
}

impl NoiseOpConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            NoiseOpConfig::Perspective { .. } => "perspective",
            NoiseOpConfig::Illumination { .. } => "illumination",
            NoiseOpConfig::Moire { .. } => "moire",
            NoiseOpConfig::Gaussian { .. } => "gaussian",
            NoiseOpConfig::GrayscaleDeviation { .. } => "grayscale_deviation",
            NoiseOpConfig::Blur { .. } => "blur",
            NoiseOpConfig::ColorShift { .. } => "color_shift",
            NoiseOpConfig::JpegApprox { .. } => "jpeg_approx",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, r: &Range, lo: f64, hi: f64| {
            if r.lo < lo || r.hi > hi {
                Err(Error::Config(format!(
                    "{}.{name} range [{}, {}] leaves [{lo}, {hi}]",
                    self.kind(),
                    r.lo,
                    r.hi
                )))
            } else {
                Ok(())
            }
        };
        match self {
            NoiseOpConfig::Perspective { corner_jitter_frac } => {
                check("corner_jitter_frac", corner_jitter_frac, 0.0, 0.25)
            }
            NoiseOpConfig::Illumination { strength, .. } => check("strength", strength, 0.0, 1.0),
            NoiseOpConfig::Moire {
                freq, amplitude, ..
            } => {
                check("freq", freq, 0.0, 1024.0)?;
                check("amplitude", amplitude, 0.0, 0.3)
            }
            NoiseOpConfig::Gaussian { sigma } => check("sigma", sigma, 0.0, 1.0),
            NoiseOpConfig::GrayscaleDeviation { delta } => check("delta", delta, -1.0, 1.0),
            NoiseOpConfig::Blur { sigma } => check("sigma", sigma, 0.0, 8.0),
            NoiseOpConfig::ColorShift { gain, bias } => {
                check("gain", gain, 0.0, 4.0)?;
                check("bias", bias, -1.0, 1.0)
            }
            NoiseOpConfig::JpegApprox { quality } => check("quality", quality, 1.0, 100.0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineVariant {
    PimogLike,
    StegastampLike,
    SsdsLike,
    Custom,
}

/// Ordered list of distortion stages making up the simulated channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoisePipelineConfig {
    pub variant_name: PipelineVariant,
    pub ops: Vec<NoiseOpConfig>,
}

impl NoisePipelineConfig {
    /// Perspective, lighting, moiré and sensor noise, geometric stages first.
    pub fn pimog_like() -> Self {
        Self {
            variant_name: PipelineVariant::PimogLike,
            ops: vec![
                NoiseOpConfig::Perspective {
                    corner_jitter_frac: Range { lo: 0.0, hi: 0.06 },
                },
                NoiseOpConfig::Illumination {
                    strength: Range { lo: 0.0, hi: 0.3 },
                    direction: full_turn(),
                },
                NoiseOpConfig::Moire {
                    freq: Range { lo: 8.0, hi: 64.0 },
                    amplitude: Range { lo: 0.0, hi: 0.15 },
                    angle: full_turn(),
                },
                NoiseOpConfig::Gaussian {
                    sigma: Range { lo: 0.0, hi: 0.08 },
                },
            ],
        }
    }

    /// Warp, blur, colour manipulation, noise and compression.
    pub fn stegastamp_like() -> Self {
        Self {
            variant_name: PipelineVariant::StegastampLike,
            ops: vec![
                NoiseOpConfig::Perspective {
                    corner_jitter_frac: Range { lo: 0.0, hi: 0.06 },
                },
                NoiseOpConfig::Blur {
                    sigma: Range { lo: 0.0, hi: 1.0 },
                },
                NoiseOpConfig::ColorShift {
                    gain: Range { lo: 0.8, hi: 1.2 },
                    bias: Range { lo: -0.1, hi: 0.1 },
                },
                NoiseOpConfig::Gaussian {
                    sigma: Range { lo: 0.0, hi: 0.08 },
                },
                NoiseOpConfig::JpegApprox {
                    quality: Range { lo: 50.0, hi: 100.0 },
                },
            ],
        }
    }

    /// The PIMoG-style chain with an additional gray-level deviation stage.
    pub fn ssds_like() -> Self {
        let mut cfg = Self::pimog_like();
        cfg.variant_name = PipelineVariant::SsdsLike;
        cfg.ops.insert(
            3,
            NoiseOpConfig::GrayscaleDeviation {
                delta: Range { lo: -0.1, hi: 0.1 },
            },
        );
        cfg
    }

    pub fn preset(variant: PipelineVariant) -> Result<Self> {
        match variant {
            PipelineVariant::PimogLike => Ok(Self::pimog_like()),
            PipelineVariant::StegastampLike => Ok(Self::stegastamp_like()),
            PipelineVariant::SsdsLike => Ok(Self::ssds_like()),
            PipelineVariant::Custom => Err(Error::Config(
                "custom pipelines have no preset; list the ops explicitly".into(),
            )),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ops.is_empty() {
            return Err(Error::Config("noise pipeline has no ops".into()));
        }
        self.ops.iter().try_for_each(NoiseOpConfig::validate)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_g: f64,
    pub lambda_grad: f64,
    pub message_weight: f64,
    pub image_weight: f64,
    /// Codec steps with the image term switched off, so the codec first finds
    /// a decodable residual.
    pub image_warmup_steps: usize,
    /// After the warm-up the image term ramps linearly to `image_weight` over
    /// this many steps.
    pub image_ramp_steps: usize,
    /// L1 reconstruction weight for the supervised translator variant.
    pub l1_weight: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_g: 1.0,
            lambda_grad: 0.005,
            message_weight: 1.0,
            image_weight: 0.7,
            image_warmup_steps: 0,
            image_ramp_steps: 0,
            l1_weight: 1.0,
        }
    }
}

impl LossWeights {
    /// Image-term weight in effect at codec step `step`.
    pub fn image_weight_at(&self, step: usize) -> f64 {
        let ramped = step.saturating_sub(self.image_warmup_steps);
        if step < self.image_warmup_steps {
            0.0
        } else if ramped >= self.image_ramp_steps {
            self.image_weight
        } else {
            self.image_weight * ramped as f64 / self.image_ramp_steps as f64
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_g", self.lambda_g),
            ("lambda_grad", self.lambda_grad),
            ("message_weight", self.message_weight),
            ("image_weight", self.image_weight),
            ("l1_weight", self.l1_weight),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("loss weight {name} = {v} must be >= 0")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub base_channels: usize,
    pub latent_dim: usize,
    /// Residual blocks per encoder/decoder block.
    pub num_res: usize,
    /// Adds a per-pixel Gaussian noise map next to the broadcast latent code.
    pub noise_map: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            base_channels: 16,
            latent_dim: 8,
            num_res: 1,
            noise_map: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub base_channels: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self { base_channels: 16 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecConfig {
    pub channels: usize,
    pub encoder_blocks: usize,
    pub decoder_layers: usize,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            channels: 32,
            encoder_blocks: 4,
            decoder_layers: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub lr_g: f64,
    pub lr_d: f64,
    pub lr_codec: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decay of the exponential moving average of generator weights used
    /// for inference; 0 disables averaging.
    pub ema_decay: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr_g: 2e-4,
            lr_d: 2e-4,
            lr_codec: 1e-3,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
            ema_decay: 0.99,
        }
    }
}

/// Step budgets and checkpoint cadence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BudgetConfig {
    pub s2r_steps: usize,
    pub watermark_steps: usize,
    pub supervised_steps: usize,
    pub checkpoint_every: usize,
}

impl Default for BudgetConfig {
    fn default() -> Self {
        Self {
            s2r_steps: 1000,
            watermark_steps: 3000,
            supervised_steps: 500,
            checkpoint_every: 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub train_resolution: usize,
    pub message_length: usize,
    pub batch_size: usize,
    pub scales_k: usize,
    pub loss_weights: LossWeights,
    pub noise_pipeline: NoisePipelineConfig,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub codec: CodecConfig,
    pub optim: OptimConfig,
    pub budget: BudgetConfig,
    /// Optional safetensors file with pretrained perceptual feature weights.
    pub perceptual_weights: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            train_resolution: 128,
            message_length: 64,
            batch_size: 8,
            scales_k: 3,
            loss_weights: LossWeights::default(),
            noise_pipeline: NoisePipelineConfig::pimog_like(),
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            codec: CodecConfig::default(),
            optim: OptimConfig::default(),
            budget: BudgetConfig::default(),
            perceptual_weights: None,
        }
    }
}

impl RunConfig {
    /// Small-resolution defaults suitable for CPU runs. The codec is
    /// narrower and its image term is warmed up and weighted more heavily
    /// than the defaults, which is what it takes to get a decodable residual
    /// above 30 dB within a couple of thousand steps.
    pub fn desk_scale() -> Self {
        let d = Self::default();
        Self {
            train_resolution: 32,
            message_length: 16,
            batch_size: 8,
            loss_weights: LossWeights {
                image_weight: 10.0,
                image_warmup_steps: 150,
                image_ramp_steps: 500,
                ..d.loss_weights
            },
            codec: CodecConfig {
                channels: 16,
                encoder_blocks: 2,
                ..d.codec
            },
            budget: BudgetConfig {
                watermark_steps: 2000,
                ..d.budget
            },
            ..d
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scales_k == 0 {
            return Err(Error::Config("scales_k must be >= 1".into()));
        }
        // The critic downsamples three times, so it needs a multiple of 8 too.
        let gen_multiple = 1usize << (self.scales_k - 1);
        let multiple = gen_multiple.max(8);
        if self.train_resolution < 16 || self.train_resolution % multiple != 0 {
            return Err(Error::Config(format!(
                "train_resolution {} must be >= 16 and a multiple of {multiple}",
                self.train_resolution
            )));
        }
        if self.train_resolution / gen_multiple < 4 {
            return Err(Error::Config(format!(
                "train_resolution {} too small for {} scales",
                self.train_resolution, self.scales_k
            )));
        }
        if self.message_length == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "message_length and batch_size must be positive".into(),
            ));
        }
        if self.generator.base_channels < 4 || self.generator.latent_dim == 0 {
            return Err(Error::Config(
                "generator needs base_channels >= 4 and latent_dim >= 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.optim.ema_decay) {
            return Err(Error::Config("optim.ema_decay must be in [0, 1)".into()));
        }
        if self.budget.checkpoint_every == 0 {
            return Err(Error::Config("checkpoint_every must be positive".into()));
        }
        self.loss_weights.validate()?;
        self.noise_pipeline.validate()
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a `.toml` or `.json` file and applies the `S2R_SEED` override.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json_str(&text)?,
            _ => Self::from_toml_str(&text)?,
        };
        cfg.apply_env_override()?;
        Ok(cfg)
    }

    pub fn apply_env_override(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an integer")))?;
        }
        Ok(())
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = self.to_toml_string()?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// SHA-256 over the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config is always serializable");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
