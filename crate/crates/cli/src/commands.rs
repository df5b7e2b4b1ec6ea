use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use s2r_core::config::{NoisePipelineConfig, PipelineVariant, RunConfig};
use s2r_core::dataset::{list_images, load_image_dir, load_unpaired_dataset, write_image_dir, REAL_SC_DIR, SHARP_DIR};
use s2r_core::image::ImageTensor;
use s2r_core::message::WatermarkMessage;
use s2r_core::metrics::hist_compare;
use s2r_core::report::{evaluate_codec, EvalChannel, EvalReport, ReportMetadata};
use s2r_core::rng::{SeedStreams, Stream};
use s2r_core::simnoise::apply_t_image_logged;
use s2r_core::train::{
    apply_oracle, desk_data, load_codec, train_s2r, train_s2r_supervised, train_watermark, NoiseChain,
    RunOptions,
};
use s2r_core::watermark::{decode, resolution_scale_embed};

use crate::{Cli, Command};

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading config {}", p.display()))?,
        None => {
            let mut c = RunConfig::desk_scale();
            c.apply_env_override()?;
            c
        }
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn images_in(input: &Path) -> Result<Vec<PathBuf>> {
    if input.is_dir() {
        Ok(list_images(input)?)
    } else if input.is_file() {
        Ok(vec![input.to_path_buf()])
    } else {
        bail!("{} is neither a file nor a directory", input.display())
    }
}

fn file_stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into())
}

fn print_json(value: serde_json::Value) {
    println!("{value}");
}

pub fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Simulate {
            input,
            out,
            config,
            pipeline,
            oracle,
        } => simulate(&input, &out, config.as_deref(), pipeline.as_deref(), oracle, seed),
        Command::DeskConfig { out } => {
            let mut cfg = RunConfig::desk_scale();
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let text = cfg.to_toml_string()?;
            match out {
                Some(path) => std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?,
                None => print!("{text}"),
            }
            Ok(())
        }
        Command::MakeDeskData {
            out,
            config,
            count,
            holdout,
        } => {
            let cfg = load_config(config.as_deref(), seed)?;
            let data = desk_data(&cfg, count, holdout)?;
            write_image_dir(&out.join(SHARP_DIR), "sharp_", &data.sharp)?;
            write_image_dir(&out.join(REAL_SC_DIR), "real_", &data.real_sc)?;
            write_image_dir(&out.join("holdout"), "holdout_", &data.holdout)?;
            print_json(serde_json::json!({
                "out": out, "sharp": data.sharp.len(), "real_sc": data.real_sc.len(), "holdout": data.holdout.len()
            }));
            Ok(())
        }
        Command::TrainS2r {
            config,
            data,
            out,
            steps,
            resume,
        } => {
            let cfg = load_config(Some(&config), seed)?;
            let dataset = load_unpaired_dataset(&data.join(SHARP_DIR), &data.join(REAL_SC_DIR), cfg.train_resolution)?;
            let opts = options(&cfg, &out, steps.unwrap_or(cfg.budget.s2r_steps), resume);
            let run = train_s2r(&dataset, &cfg, &opts)?;
            print_json(serde_json::json!({
                "checkpoint": run.final_checkpoint, "steps": opts.steps, "loss_csv": out.join(s2r_core::train::LOSS_CSV)
            }));
            Ok(())
        }
        Command::TrainWatermark {
            config,
            data,
            out,
            chain,
            generator,
            steps,
            resume,
        } => {
            let cfg = load_config(Some(&config), seed)?;
            let covers = load_covers(&data, cfg.train_resolution)?;
            let chain = NoiseChain::from_name(&chain, &cfg, generator.as_deref())?;
            let opts = options(&cfg, &out, steps.unwrap_or(cfg.budget.watermark_steps), resume);
            let run = train_watermark(&covers, chain, &cfg, &opts)?;
            let last_ber = run.rows.last().map(|r| r.ber);
            print_json(serde_json::json!({
                "checkpoint": run.final_checkpoint, "steps": opts.steps, "last_batch_ber": last_ber
            }));
            Ok(())
        }
        Command::TrainS2rSupervised {
            config,
            inputs,
            targets,
            out,
            steps,
        } => {
            let cfg = load_config(Some(&config), seed)?;
            let x = load_covers(&inputs, cfg.train_resolution)?;
            let y = load_covers(&targets, cfg.train_resolution)?;
            let opts = options(&cfg, &out, steps.unwrap_or(cfg.budget.supervised_steps), None);
            let run = train_s2r_supervised((&x, &y), &cfg, &opts)?;
            print_json(serde_json::json!({ "checkpoint": run.final_checkpoint, "steps": opts.steps }));
            Ok(())
        }
        Command::Embed {
            image,
            message_hex,
            checkpoint,
            out,
        } => {
            let codec = load_codec(&checkpoint)?;
            let msg = WatermarkMessage::parse(&message_hex, codec.encoder.message_length())?;
            let cover = ::image::open(&image)
                .with_context(|| format!("reading {}", image.display()))?
                .to_rgb8();
            let marked = resolution_scale_embed(&cover, &msg, &codec.encoder)?;
            marked
                .save(&out)
                .with_context(|| format!("writing {}", out.display()))?;
            print_json(serde_json::json!({ "out": out, "message_hex": msg.to_hex() }));
            Ok(())
        }
        Command::Extract { image, checkpoint } => {
            let codec = load_codec(&checkpoint)?;
            let (u, v) = codec.encoder.resolution();
            let img = ImageTensor::load_png(&image)?;
            if img.channels() != 3 {
                bail!("{} is not an RGB image", image.display());
            }
            let img = if (img.height(), img.width()) == (u, v) {
                img
            } else {
                img.resize(u, v)?
            };
            let (scores, msg) = decode(&img, &codec.decoder)?;
            print_json(serde_json::json!({
                "message_hex": msg.to_hex(), "bits": msg.to_bitstring(), "scores": scores
            }));
            Ok(())
        }
        Command::Evaluate {
            checkpoint,
            images,
            channel,
            out,
            config,
        } => evaluate(&checkpoint, &images, &channel, &out, config.as_deref(), seed),
        Command::HistCompare { a, b, csv, resolution } => {
            let sa: Vec<ImageTensor> = load_image_dir(&a, resolution)?.into_iter().map(|(_, i)| i).collect();
            let sb: Vec<ImageTensor> = load_image_dir(&b, resolution)?.into_iter().map(|(_, i)| i).collect();
            let cmp = hist_compare(&sa, &sb)?;
            if let Some(path) = &csv {
                cmp.write_csv(path)?;
            }
            print_json(serde_json::json!({ "distance": cmp.distance, "a": sa.len(), "b": sb.len() }));
            Ok(())
        }
        Command::Plot { csv, out, title } => crate::plot::plot_csv(&csv, &out, title.as_deref()),
    }
}

fn options(cfg: &RunConfig, out: &Path, steps: usize, resume: Option<PathBuf>) -> RunOptions {
    let mut opts = RunOptions::new(out, steps);
    opts.checkpoint_every = cfg.budget.checkpoint_every;
    opts.resume_from = resume;
    opts
}

fn load_covers(dir: &Path, resolution: usize) -> Result<Vec<ImageTensor>> {
    Ok(load_image_dir(dir, resolution)?
        .into_iter()
        .map(|(_, im)| im)
        .collect())
}

fn simulate(
    input: &Path,
    out: &Path,
    config: Option<&Path>,
    pipeline: Option<&str>,
    oracle: bool,
    seed: Option<u64>,
) -> Result<()> {
    let cfg = load_config(config, seed)?;
    let pipeline = match pipeline {
        None => cfg.noise_pipeline.clone(),
        Some(name) => {
            let variant: PipelineVariant = serde_json::from_value(serde_json::Value::String(name.into()))
                .map_err(|_| {
                    s2r_core::Error::Config(format!(
                        "unknown pipeline {name:?}; expected pimog_like, stegastamp_like or ssds_like"
                    ))
                })?;
            NoisePipelineConfig::preset(variant)?
        }
    };
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let streams = SeedStreams::new(cfg.seed);
    let mut log = csv::Writer::from_path(out.join("params.csv"))?;
    log.write_record(["image", "op_index", "op"])?;
    let files = images_in(input)?;
    for (i, path) in files.iter().enumerate() {
        let img = ImageTensor::load_png(path)?;
        let name = file_stem(path);
        let result = if oracle {
            apply_oracle(std::slice::from_ref(&img), &streams, i as u64)?.remove(0)
        } else {
            let (y, ops) = apply_t_image_logged(&img, &pipeline, streams.seed(Stream::NoiseParams, i as u64))?;
            for (j, op) in ops.iter().enumerate() {
                log.write_record([name.clone(), j.to_string(), op.to_string()])?;
            }
            y
        };
        result.save_png(&out.join(format!("{name}.png")))?;
    }
    log.flush()?;
    print_json(serde_json::json!({ "images": files.len(), "out": out }));
    Ok(())
}

fn evaluate(
    checkpoints: &[PathBuf],
    images: &Path,
    channel: &str,
    out: &Path,
    config: Option<&Path>,
    seed: Option<u64>,
) -> Result<()> {
    let mut rows = Vec::new();
    let mut ids = Vec::new();
    let mut hash = None;
    let mut eval_seed = None;
    for dir in checkpoints {
        let codec = load_codec(dir)?;
        let cfg = match config {
            Some(p) => load_config(Some(p), seed)?,
            None => {
                let mut c = codec.manifest.config.clone();
                if let Some(s) = seed {
                    c.seed = s;
                }
                c
            }
        };
        let covers = load_covers(images, codec.encoder.resolution().0)?;
        let ch = EvalChannel::from_name(channel, &cfg)?;
        rows.extend(evaluate_codec(&codec, &covers, &ch, cfg.seed)?);
        ids.push(format!("{}:{}", codec.chain(), codec.manifest.id()));
        hash.get_or_insert(cfg.hash());
        eval_seed.get_or_insert(cfg.seed);
    }
    let report = EvalReport::new(
        rows,
        ReportMetadata {
            config_hash: hash.unwrap_or_default(),
            checkpoints: ids,
            channel: channel.into(),
            seed: eval_seed.unwrap_or_default(),
        },
    );
    report.write(out, "report")?;
    for a in &report.aggregates {
        print_json(serde_json::to_value(a)?);
    }
    Ok(())
}
