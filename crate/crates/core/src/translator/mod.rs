//! Noise translator `G` and the patch critic `D`.

pub mod discriminator;
pub mod generator;

pub use discriminator::{critic_values, interpolate_samples, Critic, DiscriminatorNet};
pub use generator::{GeneratorNet, LatentCode};

/// `generator_forward`: coarse-to-fine outputs of `net` on `y_c`.
pub fn generator_forward(
    y_c: &candle_core::Tensor,
    z: &LatentCode,
    net: &GeneratorNet,
) -> crate::Result<Vec<candle_core::Tensor>> {
    net.forward(y_c, z)
}

/// `discriminator_forward`: the critic's score map.
pub fn discriminator_forward(
    img: &candle_core::Tensor,
    net: &DiscriminatorNet,
) -> crate::Result<candle_core::Tensor> {
    net.forward(img)
}
