//! The simulated channel `T`: a configured sequence of distortion stages
//! with per-sample parameters drawn from per-stage random substreams.

use std::fmt;

use candle_core::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::ops;
use super::perspective::perspective_warp;
use crate::config::{NoiseOpConfig, NoisePipelineConfig};
use crate::error::Result;
use crate::image::ImageTensor;
use crate::rng::{SeedStreams, Stream};

/// Concrete parameters drawn for one stage and one image.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SampledOp {
    Perspective { offsets: [[f64; 2]; 4] },
    Illumination { direction: f64, strength: f64 },
    Moire { freq: f64, angle: f64, amplitude: f64 },
    Gaussian { sigma: f64 },
    GrayscaleDeviation { delta: f64 },
    Blur { sigma: f64 },
    ColorShift { gain: [f64; 3], bias: [f64; 3] },
    JpegApprox { quality: f64 },
}

impl fmt::Display for SampledOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SampledOp::Perspective { offsets } => {
                write!(f, "perspective(")?;
                for (i, o) in offsets.iter().enumerate() {
                    if i > 0 {
                        write!(f, " ")?;
                    }
                    write!(f, "{:.4},{:.4}", o[0], o[1])?;
                }
                write!(f, ")")
            }
            SampledOp::Illumination {
                direction,
                strength,
            } => write!(f, "illumination(dir={direction:.4} strength={strength:.4})"),
            SampledOp::Moire {
                freq,
                angle,
                amplitude,
            } => write!(f, "moire(freq={freq:.3} angle={angle:.4} amp={amplitude:.4})"),
            SampledOp::Gaussian { sigma } => write!(f, "gaussian(sigma={sigma:.4})"),
            SampledOp::GrayscaleDeviation { delta } => {
                write!(f, "grayscale_deviation(delta={delta:.4})")
            }
            SampledOp::Blur { sigma } => write!(f, "blur(sigma={sigma:.4})"),
            SampledOp::ColorShift { gain, bias } => write!(
                f,
                "color_shift(gain={:.4},{:.4},{:.4} bias={:.4},{:.4},{:.4})",
                gain[0], gain[1], gain[2], bias[0], bias[1], bias[2]
            ),
            SampledOp::JpegApprox { quality } => write!(f, "jpeg_approx(q={quality:.2})"),
        }
    }
}

pub fn sample_op(cfg: &NoiseOpConfig, rng: &mut impl Rng) -> SampledOp {
    match cfg {
        NoiseOpConfig::Perspective { corner_jitter_frac } => {
            let bound = corner_jitter_frac.sample(rng);
            let offsets = std::array::from_fn(|_| {
                std::array::from_fn(|_| {
                    if bound == 0.0 {
                        0.0
                    } else {
                        rng.random_range(-bound..=bound)
                    }
                })
            });
            SampledOp::Perspective { offsets }
        }
        NoiseOpConfig::Illumination {
            strength,
            direction,
        } => SampledOp::Illumination {
            strength: strength.sample(rng),
            direction: direction.sample(rng),
        },
        NoiseOpConfig::Moire {
            freq,
            amplitude,
            angle,
        } => SampledOp::Moire {
            freq: freq.sample(rng),
            amplitude: amplitude.sample(rng),
            angle: angle.sample(rng),
        },
        NoiseOpConfig::Gaussian { sigma } => SampledOp::Gaussian {
            sigma: sigma.sample(rng),
        },
        NoiseOpConfig::GrayscaleDeviation { delta } => SampledOp::GrayscaleDeviation {
            delta: delta.sample(rng),
        },
        NoiseOpConfig::Blur { sigma } => SampledOp::Blur {
            sigma: sigma.sample(rng),
        },
        NoiseOpConfig::ColorShift { gain, bias } => SampledOp::ColorShift {
            gain: std::array::from_fn(|_| gain.sample(rng)),
            bias: std::array::from_fn(|_| bias.sample(rng)),
        },
        NoiseOpConfig::JpegApprox { quality } => SampledOp::JpegApprox {
            quality: quality.sample(rng),
        },
    }
}

/// Applies one sampled stage. `rng` supplies the noise field for the
/// Gaussian stage and is otherwise unused.
pub fn apply_op(x: &Tensor, op: &SampledOp, rng: &mut impl Rng) -> Result<Tensor> {
    match op {
        SampledOp::Perspective { offsets } => Ok(ops::clamp_unit(&perspective_warp(x, offsets)?)?),
        SampledOp::Illumination {
            direction,
            strength,
        } => ops::illumination(x, *direction, *strength),
        SampledOp::Moire {
            freq,
            angle,
            amplitude,
        } => ops::moire(x, *freq, *angle, *amplitude),
        SampledOp::Gaussian { sigma } => ops::gaussian_noise(x, *sigma, rng),
        SampledOp::GrayscaleDeviation { delta } => ops::grayscale_deviation(x, *delta),
        SampledOp::Blur { sigma } => ops::blur(x, *sigma),
        SampledOp::ColorShift { gain, bias } => ops::color_shift(x, gain, bias),
        SampledOp::JpegApprox { quality } => ops::jpeg_approx(x, *quality),
    }
}

fn op_rng(streams: &SeedStreams, op_index: usize, sample: usize) -> ChaCha8Rng {
    streams.rng_named(
        &format!("{}/op{op_index}", Stream::NoiseParams.name()),
        sample as u64,
    )
}

/// Runs the configured pipeline over an `(N, C, H, W)` batch. Sample `i`
/// of the batch draws its parameters from substreams keyed by `(seed, op, i)`,
/// so the output is a pure function of `(x, cfg, seed)`.
pub fn apply_t_logged(
    x: &Tensor,
    cfg: &NoisePipelineConfig,
    seed: u64,
) -> Result<(Tensor, Vec<Vec<SampledOp>>)> {
    cfg.validate()?;
    let streams = SeedStreams::new(seed);
    let n = x.dim(0)?;
    let mut outs = Vec::with_capacity(n);
    let mut logs = Vec::with_capacity(n);
    for i in 0..n {
        let mut y = x.narrow(0, i, 1)?;
        let mut log = Vec::with_capacity(cfg.ops.len());
        for (j, op_cfg) in cfg.ops.iter().enumerate() {
            let mut rng = op_rng(&streams, j, i);
            let op = sample_op(op_cfg, &mut rng);
            y = apply_op(&y, &op, &mut rng)?;
            log.push(op);
        }
        outs.push(y);
        logs.push(log);
    }
    let y = if n == 1 {
        outs.pop().unwrap()
    } else {
        Tensor::cat(&outs, 0)?
    };
    Ok((y, logs))
}

pub fn apply_t(x: &Tensor, cfg: &NoisePipelineConfig, seed: u64) -> Result<Tensor> {
    Ok(apply_t_logged(x, cfg, seed)?.0)
}

/// Single image through the pipeline, with the parameters each op drew.
pub fn apply_t_image_logged(
    x: &ImageTensor,
    cfg: &NoisePipelineConfig,
    seed: u64,
) -> Result<(ImageTensor, Vec<SampledOp>)> {
    let t = x.to_tensor(&candle_core::Device::Cpu, candle_core::DType::F32)?;
    let (y, mut logs) = apply_t_logged(&t, cfg, seed)?;
    Ok((ImageTensor::from_tensor(&y)?, logs.remove(0)))
}

/// Image-level convenience wrapper around [`apply_t`].
pub fn apply_t_image(x: &ImageTensor, cfg: &NoisePipelineConfig, seed: u64) -> Result<ImageTensor> {
    let t = x.to_tensor(&candle_core::Device::Cpu, candle_core::DType::F32)?;
    ImageTensor::from_tensor(&apply_t(&t, cfg, seed)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{PipelineVariant, Range};
    use candle_core::{DType, Device};

    fn identity_pipeline() -> NoisePipelineConfig {
        NoisePipelineConfig {
            variant_name: PipelineVariant::Custom,
            ops: vec![
                NoiseOpConfig::Perspective {
                    corner_jitter_frac: Range::fixed(0.0),
                },
                NoiseOpConfig::Gaussian {
                    sigma: Range::fixed(0.0),
                },
                NoiseOpConfig::Illumination {
                    strength: Range::fixed(0.0),
                    direction: Range::fixed(0.3),
                },
            ],
        }
    }

    #[test]
    fn identity_parameters_pass_through() {
        let x = Tensor::rand(-1f32, 1f32, (2, 3, 16, 16), &Device::Cpu).unwrap();
        let y = apply_t(&x, &identity_pipeline(), 9).unwrap();
        let d: f32 = (x - y).unwrap().abs().unwrap().max_all().unwrap().to_scalar().unwrap();
        assert!(d < 1e-6);
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let x = Tensor::rand(-1f32, 1f32, (2, 3, 16, 16), &Device::Cpu).unwrap();
        let cfg = NoisePipelineConfig::pimog_like();
        let a = apply_t(&x, &cfg, 4).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let b = apply_t(&x, &cfg, 4).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let c = apply_t(&x, &cfg, 5).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn sampled_parameters_stay_in_range() {
        let cfg = NoisePipelineConfig::stegastamp_like();
        let streams = SeedStreams::new(1);
        for i in 0..200 {
            for (j, op_cfg) in cfg.ops.iter().enumerate() {
                let op = sample_op(op_cfg, &mut op_rng(&streams, j, i));
                match (op_cfg, &op) {
                    (NoiseOpConfig::Blur { sigma: r }, SampledOp::Blur { sigma }) => {
                        assert!(r.contains(*sigma))
                    }
                    (NoiseOpConfig::ColorShift { gain, bias }, SampledOp::ColorShift { gain: g, bias: b }) => {
                        assert!(g.iter().all(|v| gain.contains(*v)));
                        assert!(b.iter().all(|v| bias.contains(*v)));
                    }
                    (NoiseOpConfig::JpegApprox { quality }, SampledOp::JpegApprox { quality: q }) => {
                        assert!(quality.contains(*q))
                    }
                    (NoiseOpConfig::Perspective { corner_jitter_frac }, SampledOp::Perspective { offsets }) => {
                        assert!(offsets.iter().flatten().all(|o| o.abs() <= corner_jitter_frac.hi))
                    }
                    (NoiseOpConfig::Gaussian { sigma: r }, SampledOp::Gaussian { sigma }) => {
                        assert!(r.contains(*sigma))
                    }
                    _ => panic!("op kind mismatch"),
                }
            }
        }
    }

    #[test]
    fn output_stays_in_unit_range() {
        let x = Tensor::rand(-1f32, 1f32, (3, 3, 32, 32), &Device::Cpu).unwrap();
        for cfg in [
            NoisePipelineConfig::pimog_like(),
            NoisePipelineConfig::stegastamp_like(),
            NoisePipelineConfig::ssds_like(),
        ] {
            let y = apply_t(&x, &cfg, 2).unwrap().to_dtype(DType::F32).unwrap();
            let v = y.flatten_all().unwrap().to_vec1::<f32>().unwrap();
            assert!(v.iter().all(|p| (-1.0..=1.0).contains(p)));
        }
    }
}
