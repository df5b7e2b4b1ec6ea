//! Training orchestration: the unsupervised S2R phase, the watermark phase
//! through a frozen noise chain, and the supervised S2R ablation.

mod codec;
mod common;
mod oracle;
mod s2r;
mod supervised;

pub use codec::{
    batch_messages, load_codec, train_watermark, CodecRun, CodecTrainer, LoadedCodec, NoiseChain,
    WatermarkRow, CHAIN_TAG,
};
pub use common::{read_loss_csv, LossCsv, LossRow, DIVERGENCE_LIMIT, LOSS_CSV};
pub use oracle::{apply_oracle, desk_data, oracle_pipeline, DeskData};
pub use s2r::{load_generator, train_s2r, S2rRow, S2rRun, S2rTrainer, GENERATOR, GENERATOR_EMA};
pub use supervised::{train_s2r_supervised, SupervisedRow, SupervisedRun};

/// Where and how often a run writes its artifacts.
#[derive(Clone, Debug)]
pub struct RunOptions {
    pub out_dir: std::path::PathBuf,
    /// Total number of optimizer steps (the run ends at this step count).
    pub steps: usize,
    /// Save a checkpoint every this many steps; 0 keeps only the final one.
    pub checkpoint_every: usize,
    /// Continue from this checkpoint directory instead of starting fresh.
    pub resume_from: Option<std::path::PathBuf>,
}

impl RunOptions {
    pub fn new(out_dir: impl Into<std::path::PathBuf>, steps: usize) -> Self {
        Self {
            out_dir: out_dir.into(),
            steps,
            checkpoint_every: 0,
            resume_from: None,
        }
    }
}
