//! Simulated screen-camera channel: distortion stages, the configurable
//! pipeline built from them, and the affine operator algebra.

pub mod operator;
pub mod ops;
pub mod perspective;
pub mod pipeline;

pub use operator::{compose_operator_pairs, NoiseOperatorPair};
pub use ops::{blur, color_shift, gaussian_noise, grayscale_deviation, illumination, jpeg_approx, moire};
pub use perspective::{perspective_warp, warp_homography, Homography};
pub use pipeline::{apply_t, apply_t_image, apply_t_image_logged, apply_t_logged, SampledOp};
