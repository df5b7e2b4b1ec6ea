mod commands;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "s2r", version, about = "Screen-camera noise simulation, S2R translation and watermark training")]
pub struct Cli {
    /// Overrides the seed from the config file (and S2R_SEED).
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[arg(short, long, global = true)]
    pub verbose: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Apply the simulated distortion pipeline T to an image or a directory.
    Simulate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// pimog_like, stegastamp_like or ssds_like; defaults to the config's pipeline.
        #[arg(long)]
        pipeline: Option<String>,
        /// Also run the images through the desk-scale capture oracle instead of T.
        #[arg(long)]
        oracle: bool,
    },
    /// Print the desk-scale config as TOML, a starting point for --config.
    DeskConfig {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic desk dataset: sharp/, real_sc/ (oracle captures) and holdout/.
    MakeDeskData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 64)]
        count: usize,
        #[arg(long, default_value_t = 32)]
        holdout: usize,
    },
    /// Unsupervised S2R training of G and D on unpaired sets.
    TrainS2r {
        #[arg(long)]
        config: PathBuf,
        /// Directory holding sharp/ and real_sc/.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Train the watermark codec through a noise chain.
    TrainWatermark {
        #[arg(long)]
        config: PathBuf,
        /// Directory of cover images.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// identity, t or t_g.
        #[arg(long, default_value = "t_g")]
        chain: String,
        /// Translator checkpoint, required for the t_g chain.
        #[arg(long)]
        generator: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Supervised S2R ablation on index-aligned pairs.
    TrainS2rSupervised {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        inputs: PathBuf,
        #[arg(long)]
        targets: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Watermark an image of any resolution.
    Embed {
        #[arg(long)]
        image: PathBuf,
        /// Message as hex (or a 0b-prefixed / plain bitstring).
        #[arg(long)]
        message_hex: String,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode the message from an image; prints JSON with hex and scores.
    Extract {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Evaluate codec checkpoints on a directory of covers.
    Evaluate {
        #[arg(long, required = true, num_args = 1..)]
        checkpoint: Vec<PathBuf>,
        #[arg(long)]
        images: PathBuf,
        /// identity, oracle or t.
        #[arg(long, default_value = "oracle")]
        channel: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Histogram distance between two image directories.
    HistCompare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Where to write the per-bin curves.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long, default_value_t = 256)]
        resolution: usize,
    },
    /// Render a histogram or loss CSV as an SVG line plot.
    Plot {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        title: Option<String>,
    },
}

fn error_line(kind: &str, message: &str) {
    eprintln!("{}", serde_json::json!({ "error": { "kind": kind, "message": message } }));
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        // Help and version requests are not failures.
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            error_line("usage", e.to_string().trim_end());
            return ExitCode::from(2);
        }
    };
    let level = if cli.verbose { "debug" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_target(false)
        .init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let kind = err
                .downcast_ref::<s2r_core::Error>()
                .map(|e| e.kind())
                .unwrap_or("cli");
            error_line(kind, &format!("{err:#}"));
            ExitCode::from(2)
        }
    }
}
