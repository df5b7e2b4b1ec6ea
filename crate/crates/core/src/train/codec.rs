//! Watermark phase: encoder and decoder trained through a frozen noise
//! chain (identity, simulated `T`, or `T` followed by a trained `G`).

use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor, Var};
use candle_nn::VarMap;

use super::common::{check_moved, guard, ImageBank, LossCsv, LossRow};
use super::s2r::{checkpoint_dir, load_generator, write_config_snapshot};
use super::RunOptions;
use crate::checkpoint::{self, CheckpointKind, Manifest};
use crate::config::{NoisePipelineConfig, RunConfig};
use crate::dataset::BatchOrder;
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::losses::{bce_with_logits, mse, scalar};
use crate::message::WatermarkMessage;
use crate::nn::{backward, builder, default_init_rule, named_vars, seeded_init};
use crate::optim::{Adam, AdamParams};
use crate::rng::{SeedStreams, Stream};
use crate::simnoise::apply_t;
use crate::translator::{GeneratorNet, LatentCode};
use crate::watermark::{message_bits, message_signs, DecoderNet, EncoderNet};

pub const ENCODER: &str = "encoder";
pub const DECODER: &str = "decoder";
/// Manifest tag naming the noise chain a codec was trained through.
pub const CHAIN_TAG: &str = "chain";

/// The differentiable channel between encoder and decoder.
pub enum NoiseChain {
    Identity,
    Simulated(NoisePipelineConfig),
    /// `G(T(x), z)` with a frozen generator.
    Translated {
        pipeline: NoisePipelineConfig,
        generator: GeneratorNet,
        /// Manifest id of the generator checkpoint, for provenance.
        generator_id: String,
    },
}

impl NoiseChain {
    pub fn name(&self) -> &'static str {
        match self {
            NoiseChain::Identity => "identity",
            NoiseChain::Simulated(_) => "t",
            NoiseChain::Translated { .. } => "t_g",
        }
    }

    /// Builds a chain by name; `t_g` needs a translator checkpoint.
    pub fn from_name(name: &str, cfg: &RunConfig, generator_ckpt: Option<&Path>) -> Result<Self> {
        match name {
            "identity" => Ok(NoiseChain::Identity),
            "t" => Ok(NoiseChain::Simulated(cfg.noise_pipeline.clone())),
            "t_g" => {
                let dir = generator_ckpt.ok_or_else(|| {
                    Error::Config("chain t_g needs a generator checkpoint".into())
                })?;
                let (generator, manifest) = load_generator(dir)?;
                Ok(NoiseChain::Translated {
                    pipeline: cfg.noise_pipeline.clone(),
                    generator,
                    generator_id: manifest.id(),
                })
            }
            other => Err(Error::Config(format!(
                "unknown noise chain {other:?}; expected identity, t or t_g"
            ))),
        }
    }

    /// Applies the chain with randomness keyed by `(streams, index)`: a
    /// fresh `T` seed and a fresh latent code for every index.
    pub fn apply(&self, x: &Tensor, streams: &SeedStreams, index: u64) -> Result<Tensor> {
        match self {
            NoiseChain::Identity => Ok(x.clone()),
            NoiseChain::Simulated(p) => apply_t(x, p, streams.seed(Stream::NoiseParams, index)),
            NoiseChain::Translated {
                pipeline,
                generator,
                ..
            } => {
                let y_c = apply_t(x, pipeline, streams.seed(Stream::NoiseParams, index))?;
                let (n, _, h, w) = y_c.dims4()?;
                let z = LatentCode::sample(
                    &mut streams.rng(Stream::LatentCodes, index),
                    n,
                    generator.config(),
                    generator.scales_k(),
                    (h, w),
                    x.device(),
                    x.dtype(),
                )?;
                generator.translate(&y_c, &z)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WatermarkRow {
    pub step: usize,
    pub total: f64,
    pub bce: f64,
    pub mse: f64,
    /// Batch BER in percent, after the chain.
    pub ber: f64,
}

impl LossRow for WatermarkRow {
    fn header() -> &'static [&'static str] {
        &["total", "bce", "mse", "ber"]
    }
    fn step(&self) -> usize {
        self.step
    }
    fn values(&self) -> Vec<f64> {
        vec![self.total, self.bce, self.mse, self.ber]
    }
}

/// Random messages for a batch, drawn from the message stream at `index`.
pub fn batch_messages(streams: &SeedStreams, index: u64, n: usize, len: usize) -> Vec<WatermarkMessage> {
    let mut rng = streams.rng(Stream::Messages, index);
    (0..n).map(|_| WatermarkMessage::random(len, &mut rng)).collect()
}

fn prefixed(prefix: &str, varmap: &VarMap) -> Vec<(String, Var)> {
    named_vars(varmap)
        .into_iter()
        .map(|(n, v)| (format!("{prefix}.{n}"), v))
        .collect()
}

pub struct CodecTrainer {
    cfg: RunConfig,
    device: Device,
    streams: SeedStreams,
    chain: NoiseChain,
    enc_vars: VarMap,
    dec_vars: VarMap,
    encoder: EncoderNet,
    decoder: DecoderNet,
    opt: Adam,
    covers: ImageBank,
    order: BatchOrder,
    step: usize,
}

impl CodecTrainer {
    pub fn new(cfg: &RunConfig, covers: &[ImageTensor], chain: NoiseChain) -> Result<Self> {
        cfg.validate()?;
        let device = Device::Cpu;
        let streams = SeedStreams::new(cfg.seed);
        let res = cfg.train_resolution;
        let enc_vars = VarMap::new();
        let encoder = EncoderNet::new(
            &cfg.codec,
            cfg.message_length,
            (res, res),
            builder(&enc_vars, DType::F32, &device),
        )?;
        seeded_init(
            &enc_vars,
            &mut streams.rng_named(&format!("{}/encoder", Stream::Init.name()), 0),
            default_init_rule,
        )?;
        let dec_vars = VarMap::new();
        let decoder = DecoderNet::new(&cfg.codec, cfg.message_length, (res, res), builder(&dec_vars, DType::F32, &device))?;
        seeded_init(
            &dec_vars,
            &mut streams.rng_named(&format!("{}/decoder", Stream::Init.name()), 0),
            default_init_rule,
        )?;
        let mut vars = prefixed(ENCODER, &enc_vars);
        vars.extend(prefixed(DECODER, &dec_vars));
        let opt = Adam::new(
            vars,
            AdamParams {
                lr: cfg.optim.lr_codec,
                beta1: cfg.optim.beta1,
                beta2: cfg.optim.beta2,
                eps: cfg.optim.eps,
            },
        )?;
        let covers = ImageBank::new(covers, &device)?;
        let dims = covers.gather(&[0])?.dims().to_vec();
        if dims[1] != 3 || dims[2] != res || dims[3] != res {
            return Err(Error::Shape(format!(
                "covers must be RGB {res}x{res}, got {:?}",
                &dims[1..]
            )));
        }
        Ok(Self {
            order: BatchOrder::new(streams, "codec/covers", covers.len(), cfg.batch_size),
            cfg: cfg.clone(),
            device,
            streams,
            chain,
            enc_vars,
            dec_vars,
            encoder,
            decoder,
            opt,
            covers,
            step: 0,
        })
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn encoder(&self) -> &EncoderNet {
        &self.encoder
    }

    pub fn decoder(&self) -> &DecoderNet {
        &self.decoder
    }

    pub fn chain(&self) -> &NoiseChain {
        &self.chain
    }

    pub fn step(&mut self) -> Result<WatermarkRow> {
        let step = self.step;
        let cfg = &self.cfg;
        let cover = self.covers.gather(&self.order.indices(step))?;
        let n = cover.dim(0)?;
        let msgs = batch_messages(&self.streams, step as u64, n, cfg.message_length);
        let signs = message_signs(&msgs, &self.device, DType::F32)?;
        let bits = message_bits(&msgs, &self.device, DType::F32)?;
        let marked = self.encoder.forward(&cover, &signs)?;
        let received = self.chain.apply(&marked, &self.streams, step as u64)?;
        let logits = self.decoder.logits(&received)?;
        let bce = bce_with_logits(&logits, &bits)?;
        let image = mse(&marked, &cover)?;
        let w = &cfg.loss_weights;
        let total = ((&bce * w.message_weight)? + (&image * w.image_weight_at(step))?)?;
        let norms = self.opt.step(&backward(&total)?)?;
        check_moved("codec", step, &norms)?;

        let predicted = logits.gt(0.0)?.to_dtype(DType::F32)?;
        let wrong = predicted.ne(&bits)?.to_dtype(DType::F64)?.sum_all()?.to_scalar::<f64>()?;
        self.step += 1;
        Ok(WatermarkRow {
            step,
            total: scalar(&total)?,
            bce: scalar(&bce)?,
            mse: scalar(&image)?,
            ber: 100.0 * wrong / (n * cfg.message_length) as f64,
        })
    }

    fn manifest(&self) -> Result<Manifest> {
        let mut m = Manifest::new(CheckpointKind::Codec, self.step, &self.cfg)?;
        m.tags.insert(CHAIN_TAG.into(), self.chain.name().into());
        if let NoiseChain::Translated { generator_id, .. } = &self.chain {
            m.tags.insert("generator".into(), generator_id.clone());
        }
        Ok(m)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.opt.save(&checkpoint::optimizer_path(dir, "codec"))?;
        checkpoint::save(
            dir,
            &self.manifest()?,
            &[(ENCODER, &self.enc_vars), (DECODER, &self.dec_vars)],
        )
    }

    pub fn restore(&mut self, dir: &Path) -> Result<()> {
        let manifest = checkpoint::read_manifest(dir)?;
        checkpoint::expect_kind(&manifest, CheckpointKind::Codec, dir)?;
        let chain = manifest.tags.get(CHAIN_TAG).map(String::as_str).unwrap_or("");
        if chain != self.chain.name() || manifest.seed != self.cfg.seed {
            return Err(Error::Checkpoint(format!(
                "{} was trained with chain {chain:?} and seed {}; this run uses {:?} and {}",
                dir.display(),
                manifest.seed,
                self.chain.name(),
                self.cfg.seed
            )));
        }
        checkpoint::restore(dir, ENCODER, &manifest, &self.enc_vars)?;
        checkpoint::restore(dir, DECODER, &manifest, &self.dec_vars)?;
        self.opt.load(&checkpoint::optimizer_path(dir, "codec"))?;
        self.step = manifest.step;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct CodecRun {
    pub final_checkpoint: PathBuf,
    pub rows: Vec<WatermarkRow>,
}

pub fn train_watermark(
    covers: &[ImageTensor],
    chain: NoiseChain,
    cfg: &RunConfig,
    opts: &RunOptions,
) -> Result<CodecRun> {
    let mut trainer = CodecTrainer::new(cfg, covers, chain)?;
    if let Some(dir) = &opts.resume_from {
        trainer.restore(dir)?;
    }
    write_config_snapshot(&opts.out_dir, cfg)?;
    let mut csv = LossCsv::create::<WatermarkRow>(&opts.out_dir, trainer.steps_done())?;
    let mut last_good = opts.resume_from.clone();
    let mut rows = Vec::new();
    while trainer.steps_done() < opts.steps {
        let row = trainer.step()?;
        guard(row.step, &row, last_good.clone())?;
        csv.push(&row)?;
        rows.push(row);
        let done = trainer.steps_done();
        if opts.checkpoint_every > 0 && done % opts.checkpoint_every == 0 && done < opts.steps {
            let dir = checkpoint_dir(&opts.out_dir, done);
            trainer.save(&dir)?;
            last_good = Some(dir);
        }
    }
    let final_dir = opts.out_dir.join("final");
    trainer.save(&final_dir)?;
    Ok(CodecRun {
        final_checkpoint: final_dir,
        rows,
    })
}

/// Frozen encoder and decoder from a codec checkpoint.
pub struct LoadedCodec {
    pub encoder: EncoderNet,
    pub decoder: DecoderNet,
    pub manifest: Manifest,
}

impl LoadedCodec {
    pub fn chain(&self) -> &str {
        self.manifest.tags.get(CHAIN_TAG).map(String::as_str).unwrap_or("unknown")
    }
}

pub fn load_codec(dir: &Path) -> Result<LoadedCodec> {
    let manifest = checkpoint::read_manifest(dir)?;
    checkpoint::expect_kind(&manifest, CheckpointKind::Codec, dir)?;
    let cfg = &manifest.config;
    let res = cfg.train_resolution;
    let device = Device::Cpu;
    let encoder = EncoderNet::new(
        &cfg.codec,
        cfg.message_length,
        (res, res),
        checkpoint::frozen_builder(dir, ENCODER, &manifest, DType::F32, &device)?,
    )?;
    let decoder = DecoderNet::new(
        &cfg.codec,
        cfg.message_length,
        (res, res),
        checkpoint::frozen_builder(dir, DECODER, &manifest, DType::F32, &device)?,
    )?;
    Ok(LoadedCodec {
        encoder,
        decoder,
        manifest,
    })
}
