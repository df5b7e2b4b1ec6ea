//! Codec evaluation and Table-2-style reports (CSV rows plus one JSON
//! document with aggregates and provenance).

use std::path::Path;

use candle_core::{DType, Device};
use serde::{Deserialize, Serialize};

use crate::config::{NoisePipelineConfig, RunConfig};
use crate::error::{Error, Result};
use crate::image::{stack, unstack, ImageTensor};
use crate::message::{ber, WatermarkMessage};
use crate::metrics::{mean_std, psnr, ssim};
use crate::rng::{SeedStreams, Stream};
use crate::simnoise::apply_t;
use crate::train::{load_codec, oracle_pipeline, LoadedCodec};
use crate::watermark::message_signs;

/// What happens to a watermarked image before decoding.
#[derive(Clone, Debug)]
pub enum EvalChannel {
    Identity,
    /// The hidden desk-scale capture stand-in.
    Oracle,
    Pipeline(NoisePipelineConfig),
}

impl EvalChannel {
    pub fn name(&self) -> &'static str {
        match self {
            EvalChannel::Identity => "identity",
            EvalChannel::Oracle => "oracle",
            EvalChannel::Pipeline(_) => "pipeline",
        }
    }

    pub fn from_name(name: &str, cfg: &RunConfig) -> Result<Self> {
        match name {
            "identity" => Ok(EvalChannel::Identity),
            "oracle" => Ok(EvalChannel::Oracle),
            "t" | "pipeline" => Ok(EvalChannel::Pipeline(cfg.noise_pipeline.clone())),
            other => Err(Error::Config(format!(
                "unknown channel {other:?}; expected identity, oracle or t"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub image: usize,
    pub chain: String,
    pub channel: String,
    pub seed: u64,
    pub resolution: usize,
    pub psnr_db: f64,
    pub ssim: f64,
    pub ber_percent: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub chain: String,
    pub count: usize,
    pub psnr_mean: f64,
    pub psnr_std: f64,
    pub ssim_mean: f64,
    pub ssim_std: f64,
    pub ber_mean: f64,
    pub ber_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub config_hash: String,
    pub checkpoints: Vec<String>,
    pub channel: String,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metadata: ReportMetadata,
    pub aggregates: Vec<Aggregate>,
    pub rows: Vec<EvalRow>,
}

/// Groups rows by chain, in order of first appearance.
pub fn aggregate(rows: &[EvalRow]) -> Vec<Aggregate> {
    let mut chains: Vec<&str> = Vec::new();
    for r in rows {
        if !chains.contains(&r.chain.as_str()) {
            chains.push(&r.chain);
        }
    }
    chains
        .into_iter()
        .map(|chain| {
            let group: Vec<&EvalRow> = rows.iter().filter(|r| r.chain == chain).collect();
            let col = |f: fn(&EvalRow) -> f64| mean_std(&group.iter().map(|r| f(r)).collect::<Vec<_>>());
            let (psnr_mean, psnr_std) = col(|r| r.psnr_db);
            let (ssim_mean, ssim_std) = col(|r| r.ssim);
            let (ber_mean, ber_std) = col(|r| r.ber_percent);
            Aggregate {
                chain: chain.to_owned(),
                count: group.len(),
                psnr_mean,
                psnr_std,
                ssim_mean,
                ssim_std,
                ber_mean,
                ber_std,
            }
        })
        .collect()
}

impl EvalReport {
    pub fn new(rows: Vec<EvalRow>, metadata: ReportMetadata) -> Self {
        Self {
            aggregates: aggregate(&rows),
            rows,
            metadata,
        }
    }

    pub fn aggregate_for(&self, chain: &str) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.chain == chain)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.write_csv(&dir.join(format!("{stem}.csv")))?;
        self.write_json(&dir.join(format!("{stem}.json")))
    }
}

/// Rounds through 8 bits, as a displayed image would be.
fn quantize(images: Vec<ImageTensor>) -> Result<Vec<ImageTensor>> {
    images
        .into_iter()
        .map(|img| ImageTensor::from_u8(&img.to_u8(), img.height(), img.width(), img.channels()))
        .collect()
}

/// Embeds a fresh message into every cover, quantizes to 8 bits, passes the
/// result through `channel` and decodes. Messages and channel randomness
/// depend only on `seed` and the image index.
pub fn evaluate_codec(
    codec: &LoadedCodec,
    covers: &[ImageTensor],
    channel: &EvalChannel,
    seed: u64,
) -> Result<Vec<EvalRow>> {
    if covers.is_empty() {
        return Err(Error::Config("no images to evaluate".into()));
    }
    let device = Device::Cpu;
    let streams = SeedStreams::new(seed);
    let len = codec.encoder.message_length();
    let msgs: Vec<WatermarkMessage> = (0..covers.len())
        .map(|i| WatermarkMessage::random(len, &mut streams.rng(Stream::Eval, i as u64)))
        .collect();
    let x = stack(covers, &device, DType::F32)?;
    let signs = message_signs(&msgs, &device, DType::F32)?;
    let marked = quantize(unstack(&codec.encoder.forward(&x, &signs)?)?)?;
    let marked_t = stack(&marked, &device, DType::F32)?;
    let received = match channel {
        EvalChannel::Identity => marked_t,
        EvalChannel::Oracle => apply_t(&marked_t, &oracle_pipeline(), streams.seed(Stream::Oracle, 1))?,
        EvalChannel::Pipeline(p) => apply_t(&marked_t, p, streams.seed(Stream::NoiseParams, 0))?,
    };
    let scores = codec.decoder.scores(&received)?.to_dtype(DType::F32)?.to_vec2::<f32>()?;
    let resolution = covers[0].height();
    covers
        .iter()
        .zip(&marked)
        .zip(msgs.iter().zip(&scores))
        .enumerate()
        .map(|(i, ((cover, wm), (msg, s)))| {
            Ok(EvalRow {
                image: i,
                chain: codec.chain().to_owned(),
                channel: channel.name().to_owned(),
                seed,
                resolution,
                psnr_db: psnr(cover, wm)?,
                ssim: ssim(cover, wm)?,
                ber_percent: ber(msg, &WatermarkMessage::from_scores(s))?,
            })
        })
        .collect()
}

/// Evaluates one codec per chain on `holdout` under the oracle channel.
pub fn run_table2_analog(
    cfg: &RunConfig,
    codec_checkpoints: &[&Path],
    holdout: &[ImageTensor],
) -> Result<EvalReport> {
    let mut rows = Vec::new();
    let mut ids = Vec::new();
    for dir in codec_checkpoints {
        if !dir.join(crate::checkpoint::MANIFEST).exists() {
            return Err(Error::Checkpoint(format!("missing codec checkpoint {}", dir.display())));
        }
        let codec = load_codec(dir)?;
        ids.push(format!("{}:{}", codec.chain(), codec.manifest.id()));
        rows.extend(evaluate_codec(&codec, holdout, &EvalChannel::Oracle, cfg.seed)?);
    }
    Ok(EvalReport::new(
        rows,
        ReportMetadata {
            config_hash: cfg.hash(),
            checkpoints: ids,
            channel: EvalChannel::Oracle.name().into(),
            seed: cfg.seed,
        },
    ))
}
