//! Unsupervised S2R: alternating critic and generator updates on unpaired
//! sharp and real-capture sets.

use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use candle_nn::VarMap;

use super::common::{check_moved, guard, ImageBank, LossCsv, LossRow};
use super::RunOptions;
use crate::checkpoint::{self, CheckpointKind, Manifest};
use crate::config::RunConfig;
use crate::dataset::{BatchOrder, UnpairedDataset};
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::losses::{
    adv_loss, cgan_objective, gradient_penalty, perceptual_multiscale, scalar, total_d, total_g,
    PerceptualExtractor, Side,
};
use crate::nn::{backward, builder, default_init_rule, named_vars, seeded_init};
use crate::optim::{Adam, AdamParams};
use crate::resample::pyramid;
use crate::rng::{SeedStreams, Stream};
use crate::simnoise::apply_t;
use crate::translator::{interpolate_samples, DiscriminatorNet, GeneratorNet, LatentCode};

pub const GENERATOR: &str = "generator";
pub const DISCRIMINATOR: &str = "discriminator";
/// Exponential moving average of the generator weights.
pub const GENERATOR_EMA: &str = "generator_ema";

#[derive(Clone, Debug, PartialEq)]
pub struct S2rRow {
    pub step: usize,
    pub total_g: f64,
    pub adv_g: f64,
    pub perc: f64,
    pub total_d: f64,
    pub gp: f64,
}

impl LossRow for S2rRow {
    fn header() -> &'static [&'static str] {
        &["total_G", "adv_G", "perc", "total_D", "gp"]
    }
    fn step(&self) -> usize {
        self.step
    }
    fn values(&self) -> Vec<f64> {
        vec![self.total_g, self.adv_g, self.perc, self.total_d, self.gp]
    }
}

pub(crate) fn perceptual_extractor(cfg: &RunConfig, device: &Device) -> Result<PerceptualExtractor> {
    match &cfg.perceptual_weights {
        Some(path) => PerceptualExtractor::from_safetensors(Path::new(path), device, DType::F32),
        None => PerceptualExtractor::random(SeedStreams::new(cfg.seed).seed(Stream::Init, 1), device, DType::F32),
    }
}

/// A freshly initialized generator backed by `varmap`.
pub(crate) fn new_generator(cfg: &RunConfig, varmap: &VarMap, device: &Device) -> Result<GeneratorNet> {
    let g = GeneratorNet::new(&cfg.generator, cfg.scales_k, builder(varmap, DType::F32, device))?;
    let mut rng = SeedStreams::new(cfg.seed).rng_named(&format!("{}/generator", Stream::Init.name()), 0);
    seeded_init(varmap, &mut rng, default_init_rule)?;
    Ok(g)
}

fn adam(cfg: &RunConfig, varmap: &VarMap, lr: f64) -> Result<Adam> {
    Adam::new(
        named_vars(varmap),
        AdamParams {
            lr,
            beta1: cfg.optim.beta1,
            beta2: cfg.optim.beta2,
            eps: cfg.optim.eps,
        },
    )
}

/// Training state of the S2R phase. Everything random is derived from
/// `(seed, step)`, so [`S2rTrainer::restore`] followed by [`S2rTrainer::step`]
/// continues exactly where an uninterrupted run would.
pub struct S2rTrainer {
    cfg: RunConfig,
    device: Device,
    streams: SeedStreams,
    g_vars: VarMap,
    d_vars: VarMap,
    g: GeneratorNet,
    d: DiscriminatorNet,
    ema_vars: VarMap,
    ema: GeneratorNet,
    opt_g: Adam,
    opt_d: Adam,
    ext: PerceptualExtractor,
    sharp: ImageBank,
    real: ImageBank,
    order_s: BatchOrder,
    order_u: BatchOrder,
    step: usize,
}

impl S2rTrainer {
    pub fn new(cfg: &RunConfig, sharp: &[ImageTensor], real_sc: &[ImageTensor]) -> Result<Self> {
        cfg.validate()?;
        crate::nn::enable_higher_order_grads();
        let device = Device::Cpu;
        let streams = SeedStreams::new(cfg.seed);
        let g_vars = VarMap::new();
        let g = new_generator(cfg, &g_vars, &device)?;
        let d_vars = VarMap::new();
        let d = DiscriminatorNet::new(
            &cfg.discriminator,
            cfg.train_resolution,
            builder(&d_vars, DType::F32, &device),
        )?;
        let mut rng = streams.rng_named(&format!("{}/discriminator", Stream::Init.name()), 0);
        seeded_init(&d_vars, &mut rng, default_init_rule)?;
        let ema_vars = VarMap::new();
        let ema = GeneratorNet::new(&cfg.generator, cfg.scales_k, builder(&ema_vars, DType::F32, &device))?;
        copy_vars(&g_vars, &ema_vars)?;
        let sharp = ImageBank::new(sharp, &device)?;
        let real = ImageBank::new(real_sc, &device)?;
        let res = cfg.train_resolution;
        for (name, bank) in [("sharp", &sharp), ("real_sc", &real)] {
            let dims = bank.gather(&[0])?.dims().to_vec();
            if dims[2] != res || dims[3] != res || dims[1] != 3 {
                return Err(Error::Shape(format!(
                    "{name} images must be RGB {res}x{res}, got {:?}",
                    &dims[1..]
                )));
            }
        }
        Ok(Self {
            opt_g: adam(cfg, &g_vars, cfg.optim.lr_g)?,
            opt_d: adam(cfg, &d_vars, cfg.optim.lr_d)?,
            ext: perceptual_extractor(cfg, &device)?,
            order_s: BatchOrder::new(streams, "s2r/sharp", sharp.len(), cfg.batch_size),
            order_u: BatchOrder::new(streams, "s2r/real_sc", real.len(), cfg.batch_size),
            cfg: cfg.clone(),
            device,
            streams,
            g_vars,
            d_vars,
            g,
            d,
            ema_vars,
            ema,
            sharp,
            real,
            step: 0,
        })
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn generator(&self) -> &GeneratorNet {
        &self.g
    }

    /// The weight-averaged generator used for inference (the raw one when
    /// averaging is disabled).
    pub fn inference_generator(&self) -> &GeneratorNet {
        if self.cfg.optim.ema_decay > 0.0 {
            &self.ema
        } else {
            &self.g
        }
    }

    pub fn generator_vars(&self) -> &VarMap {
        &self.g_vars
    }

    pub fn discriminator_vars(&self) -> &VarMap {
        &self.d_vars
    }

    /// One critic update followed by one generator update.
    pub fn step(&mut self) -> Result<S2rRow> {
        let step = self.step;
        let cfg = &self.cfg;
        let res = cfg.train_resolution;
        let x_s = self.sharp.gather(&self.order_s.indices(step))?;
        let y_c = apply_t(&x_s, &cfg.noise_pipeline, self.streams.seed(Stream::NoiseParams, step as u64))?;
        let n = y_c.dim(0)?;
        let z = LatentCode::sample(
            &mut self.streams.rng(Stream::LatentCodes, step as u64),
            n,
            &cfg.generator,
            cfg.scales_k,
            (res, res),
            &self.device,
            DType::F32,
        )?;
        let y_u = self.real.gather(&self.order_u.indices(step))?;

        // Critic.
        let outs = self.g.forward(&y_c, &z)?;
        let fake = outs.last().expect("at least one scale").detach();
        let objective = cgan_objective(&self.d.forward(&y_u)?, &self.d.forward(&fake)?)?;
        let mut rng = self.streams.rng(Stream::Interpolation, step as u64);
        let eps: Vec<f64> = (0..n).map(|_| rand::Rng::random::<f64>(&mut rng)).collect();
        let y_tilde = interpolate_samples(&y_u, &fake, &eps)?;
        let d = &self.d;
        let critic = |x: &Tensor| d.forward(x);
        let gp = gradient_penalty(&critic, &y_tilde)?;
        let loss_d = total_d(&objective, &gp, &cfg.loss_weights)?;
        let norms = self.opt_d.step(&backward(&loss_d)?)?;
        check_moved("critic", step, &norms)?;

        // Generator, against the updated critic.
        let fake_scores = self.d.forward(outs.last().expect("at least one scale"))?;
        let adv = adv_loss(&fake_scores, &fake_scores, Side::Generator)?;
        let targets = pyramid(&y_c, cfg.scales_k)?;
        let perc = perceptual_multiscale(&outs, &targets, &self.ext, cfg.scales_k)?;
        let loss_g = total_g(&adv, &perc, &cfg.loss_weights)?;
        let norms = self.opt_g.step(&backward(&loss_g)?)?;
        check_moved("generator", step, &norms)?;
        update_ema(&self.g_vars, &self.ema_vars, cfg.optim.ema_decay)?;

        self.step += 1;
        Ok(S2rRow {
            step,
            total_g: scalar(&loss_g)?,
            adv_g: scalar(&adv)?,
            perc: scalar(&perc)?,
            total_d: scalar(&loss_d)?,
            gp: scalar(&gp)?,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.opt_g.save(&checkpoint::optimizer_path(dir, GENERATOR))?;
        self.opt_d.save(&checkpoint::optimizer_path(dir, DISCRIMINATOR))?;
        let manifest = Manifest::new(CheckpointKind::Translator, self.step, &self.cfg)?;
        checkpoint::save(
            dir,
            &manifest,
            &[
                (GENERATOR, &self.g_vars),
                (DISCRIMINATOR, &self.d_vars),
                (GENERATOR_EMA, &self.ema_vars),
            ],
        )
    }

    pub fn restore(&mut self, dir: &Path) -> Result<()> {
        let manifest = checkpoint::read_manifest(dir)?;
        checkpoint::expect_kind(&manifest, CheckpointKind::Translator, dir)?;
        if manifest.seed != self.cfg.seed {
            return Err(Error::Checkpoint(format!(
                "{} was trained with seed {}, this run uses {}",
                dir.display(),
                manifest.seed,
                self.cfg.seed
            )));
        }
        if !manifest.nets.iter().any(|n| n == DISCRIMINATOR) {
            return Err(Error::Checkpoint(format!(
                "{} has no critic; supervised checkpoints cannot be resumed adversarially",
                dir.display()
            )));
        }
        checkpoint::restore(dir, GENERATOR, &manifest, &self.g_vars)?;
        checkpoint::restore(dir, DISCRIMINATOR, &manifest, &self.d_vars)?;
        checkpoint::restore(dir, GENERATOR_EMA, &manifest, &self.ema_vars)?;
        self.opt_g.load(&checkpoint::optimizer_path(dir, GENERATOR))?;
        self.opt_d.load(&checkpoint::optimizer_path(dir, DISCRIMINATOR))?;
        self.step = manifest.step;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct S2rRun {
    pub final_checkpoint: PathBuf,
    pub rows: Vec<S2rRow>,
}

pub(crate) fn checkpoint_dir(out: &Path, step: usize) -> PathBuf {
    out.join(format!("ckpt-{step:06}"))
}

pub(crate) fn write_config_snapshot(out: &Path, cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    cfg.save(&out.join("config.toml"))
}

/// Trains `G` and `D` for `opts.steps` steps, writing the loss CSV, periodic
/// checkpoints and `<out>/final`.
pub fn train_s2r(data: &UnpairedDataset, cfg: &RunConfig, opts: &RunOptions) -> Result<S2rRun> {
    let mut trainer = S2rTrainer::new(cfg, &data.sharp_set, &data.real_sc_set)?;
    if let Some(dir) = &opts.resume_from {
        trainer.restore(dir)?;
    }
    write_config_snapshot(&opts.out_dir, cfg)?;
    let mut csv = LossCsv::create::<S2rRow>(&opts.out_dir, trainer.steps_done())?;
    let mut last_good = opts.resume_from.clone();
    let mut rows = Vec::new();
    while trainer.steps_done() < opts.steps {
        let row = trainer.step()?;
        guard(row.step, &row, last_good.clone())?;
        csv.push(&row)?;
        log::debug!("s2r step {} total_G {:.4} total_D {:.4}", row.step, row.total_g, row.total_d);
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
    Ok(S2rRun {
        final_checkpoint: final_dir,
        rows,
    })
}

/// Copies every value of `src` into the same-named variable of `dst`.
fn copy_vars(src: &VarMap, dst: &VarMap) -> Result<()> {
    let src = named_vars(src);
    let dst = named_vars(dst);
    for ((sn, s), (dn, d)) in src.iter().zip(&dst) {
        debug_assert_eq!(sn, dn);
        d.set(&s.as_tensor().copy()?)?;
    }
    Ok(())
}

/// `ema = decay · ema + (1 − decay) · current`.
fn update_ema(current: &VarMap, ema: &VarMap, decay: f64) -> Result<()> {
    if decay <= 0.0 {
        return Ok(());
    }
    for ((_, c), (_, e)) in named_vars(current).iter().zip(&named_vars(ema)) {
        let next = ((e.as_tensor() * decay)? + (c.as_tensor().detach() * (1.0 - decay))?)?;
        e.set(&next)?;
    }
    Ok(())
}

/// A frozen generator from any translator checkpoint (supervised or not),
/// preferring the weight-averaged copy when the checkpoint has one.
pub fn load_generator(dir: &Path) -> Result<(GeneratorNet, Manifest)> {
    let manifest = checkpoint::read_manifest(dir)?;
    checkpoint::expect_kind(&manifest, CheckpointKind::Translator, dir)?;
    let net = if manifest.config.optim.ema_decay > 0.0 && manifest.nets.iter().any(|n| n == GENERATOR_EMA) {
        GENERATOR_EMA
    } else {
        GENERATOR
    };
    let vb = checkpoint::frozen_builder(dir, net, &manifest, DType::F32, &Device::Cpu)?;
    let g = GeneratorNet::new(&manifest.config.generator, manifest.config.scales_k, vb)?;
    Ok((g, manifest))
}
