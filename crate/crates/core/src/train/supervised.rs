//! Supervised S2R ablation: `G` fit to index-aligned (simulated, real)
//! pairs with perceptual and L1 reconstruction, no critic.

use candle_core::{DType, Device};
use candle_nn::VarMap;

use super::common::{check_moved, guard, ImageBank, LossCsv, LossRow};
use super::s2r::{checkpoint_dir, new_generator, perceptual_extractor, write_config_snapshot, GENERATOR};
use super::RunOptions;
use crate::checkpoint::{self, CheckpointKind, Manifest};
use crate::config::RunConfig;
use crate::dataset::BatchOrder;
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::losses::{l1, perceptual_multiscale, scalar};
use crate::nn::{backward, named_vars};
use crate::optim::{Adam, AdamParams};
use crate::resample::pyramid;
use crate::rng::{SeedStreams, Stream};
use crate::translator::LatentCode;

#[derive(Clone, Debug, PartialEq)]
pub struct SupervisedRow {
    pub step: usize,
    pub total: f64,
    pub perc: f64,
    pub l1: f64,
}

impl LossRow for SupervisedRow {
    fn header() -> &'static [&'static str] {
        &["total", "perc", "l1"]
    }
    fn step(&self) -> usize {
        self.step
    }
    fn values(&self) -> Vec<f64> {
        vec![self.total, self.perc, self.l1]
    }
}

#[derive(Clone, Debug)]
pub struct SupervisedRun {
    pub final_checkpoint: std::path::PathBuf,
    pub rows: Vec<SupervisedRow>,
}

/// Trains on `pairs.0[i] -> pairs.1[i]`. The checkpoint has the same format
/// as an unsupervised one minus the critic, so Phase B accepts either.
pub fn train_s2r_supervised(
    pairs: (&[ImageTensor], &[ImageTensor]),
    cfg: &RunConfig,
    opts: &RunOptions,
) -> Result<SupervisedRun> {
    let (inputs, targets) = pairs;
    if inputs.len() != targets.len() {
        return Err(Error::Shape(format!(
            "supervised pairs must be index-aligned: {} inputs vs {} targets",
            inputs.len(),
            targets.len()
        )));
    }
    cfg.validate()?;
    let device = Device::Cpu;
    let streams = SeedStreams::new(cfg.seed);
    let g_vars = VarMap::new();
    let g = new_generator(cfg, &g_vars, &device)?;
    let mut opt = Adam::new(
        named_vars(&g_vars),
        AdamParams {
            lr: cfg.optim.lr_g,
            beta1: cfg.optim.beta1,
            beta2: cfg.optim.beta2,
            eps: cfg.optim.eps,
        },
    )?;
    let mut start = 0;
    if let Some(dir) = &opts.resume_from {
        let manifest = checkpoint::read_manifest(dir)?;
        checkpoint::expect_kind(&manifest, CheckpointKind::Translator, dir)?;
        checkpoint::restore(dir, GENERATOR, &manifest, &g_vars)?;
        opt.load(&checkpoint::optimizer_path(dir, GENERATOR))?;
        start = manifest.step;
    }
    let ext = perceptual_extractor(cfg, &device)?;
    let x_bank = ImageBank::new(inputs, &device)?;
    let y_bank = ImageBank::new(targets, &device)?;
    let order = BatchOrder::new(streams, "supervised/pairs", inputs.len(), cfg.batch_size);
    let res = cfg.train_resolution;

    write_config_snapshot(&opts.out_dir, cfg)?;
    let mut csv = LossCsv::create::<SupervisedRow>(&opts.out_dir, start)?;
    let save = |dir: &std::path::Path, step: usize, opt: &Adam| -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        opt.save(&checkpoint::optimizer_path(dir, GENERATOR))?;
        let mut m = Manifest::new(CheckpointKind::Translator, step, cfg)?;
        m.tags.insert("training".into(), "supervised".into());
        checkpoint::save(dir, &m, &[(GENERATOR, &g_vars)])
    };
    let mut last_good = opts.resume_from.clone();
    let mut rows = Vec::new();
    for step in start..opts.steps {
        let idx = order.indices(step);
        let x = x_bank.gather(&idx)?;
        let y = y_bank.gather(&idx)?;
        let z = LatentCode::sample(
            &mut streams.rng(Stream::LatentCodes, step as u64),
            idx.len(),
            &cfg.generator,
            cfg.scales_k,
            (res, res),
            &device,
            DType::F32,
        )?;
        let outs = g.forward(&x, &z)?;
        let perc = perceptual_multiscale(&outs, &pyramid(&y, cfg.scales_k)?, &ext, cfg.scales_k)?;
        let rec = l1(outs.last().expect("at least one scale"), &y)?;
        let total = (&perc + (&rec * cfg.loss_weights.l1_weight)?)?;
        let norms = opt.step(&backward(&total)?)?;
        check_moved("generator", step, &norms)?;
        let row = SupervisedRow {
            step,
            total: scalar(&total)?,
            perc: scalar(&perc)?,
            l1: scalar(&rec)?,
        };
        guard(step, &row, last_good.clone())?;
        csv.push(&row)?;
        rows.push(row);
        let done = step + 1;
        if opts.checkpoint_every > 0 && done % opts.checkpoint_every == 0 && done < opts.steps {
            let dir = checkpoint_dir(&opts.out_dir, done);
            save(&dir, done, &opt)?;
            last_good = Some(dir);
        }
    }
    let final_dir = opts.out_dir.join("final");
    save(&final_dir, opts.steps.max(start), &opt)?;
    Ok(SupervisedRun {
        final_checkpoint: final_dir,
        rows,
    })
}
