//! Desk-scale stand-in for real screen-camera captures: a hidden distortion
//! pipeline whose op set is disjoint from every simulated pipeline's
//! geometric/moiré/illumination stages, with its own parameter ranges.

use crate::config::{NoiseOpConfig, NoisePipelineConfig, PipelineVariant, Range, RunConfig};
use crate::dataset::synthetic_images;
use crate::error::Result;
use crate::image::{stack, unstack, ImageTensor};
use crate::rng::{SeedStreams, Stream};
use crate::simnoise::apply_t;

/// Blur, a darkening color cast, a gray-level lift and compression.
pub fn oracle_pipeline() -> NoisePipelineConfig {
    NoisePipelineConfig {
        variant_name: PipelineVariant::Custom,
        ops: vec![
            NoiseOpConfig::Blur {
                sigma: Range { lo: 0.6, hi: 1.2 },
            },
            NoiseOpConfig::ColorShift {
                gain: Range { lo: 0.7, hi: 0.85 },
                bias: Range { lo: 0.1, hi: 0.2 },
            },
            NoiseOpConfig::GrayscaleDeviation {
                delta: Range { lo: 0.02, hi: 0.06 },
            },
            NoiseOpConfig::JpegApprox {
                quality: Range { lo: 40.0, hi: 70.0 },
            },
        ],
    }
}

/// Passes every image through the oracle; `label` keys the randomness so
/// different sets see independent distortions.
pub fn apply_oracle(images: &[ImageTensor], streams: &SeedStreams, label: u64) -> Result<Vec<ImageTensor>> {
    let batch = stack(images, &candle_core::Device::Cpu, candle_core::DType::F32)?;
    let out = apply_t(&batch, &oracle_pipeline(), streams.seed(Stream::Oracle, label))?;
    unstack(&out)
}

/// Synthetic sharp set `S`, oracle-captured set `U` built from *other*
/// sharp images (so the two are unpaired), and a held-out sharp set.
#[derive(Clone, Debug)]
pub struct DeskData {
    pub sharp: Vec<ImageTensor>,
    pub real_sc: Vec<ImageTensor>,
    pub holdout: Vec<ImageTensor>,
}

pub fn desk_data(cfg: &RunConfig, n_train: usize, n_holdout: usize) -> Result<DeskData> {
    let streams = SeedStreams::new(cfg.seed);
    let res = cfg.train_resolution;
    let sharp = synthetic_images(n_train, res, streams, 0)?;
    let hidden_sources = synthetic_images(n_train, res, streams, 1_000_000)?;
    let real_sc = apply_oracle(&hidden_sources, &streams, 0)?;
    let holdout = synthetic_images(n_holdout, res, streams, 2_000_000)?;
    Ok(DeskData {
        sharp,
        real_sc,
        holdout,
    })
}
