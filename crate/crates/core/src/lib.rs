//! Simulation-to-real screen-camera noise approximation.
//!
//! A differentiable simulated distortion `T` is followed by a learned
//! translator `G`, trained on unpaired data, that moves `T`'s output toward
//! the real capture distribution. The composed channel is then used as the
//! noise layer when training a watermark encoder/decoder.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod image;
pub mod losses;
pub mod message;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod report;
pub mod resample;
pub mod rng;
pub mod simnoise;
pub mod train;
pub mod translator;
pub mod watermark;

pub use config::{LossWeights, NoiseOpConfig, NoisePipelineConfig, RunConfig};
pub use dataset::{load_unpaired_dataset, UnpairedDataset};
pub use error::{Error, Result};
pub use image::ImageTensor;
pub use message::{ber, WatermarkMessage};
