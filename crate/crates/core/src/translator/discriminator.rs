use candle_core::Tensor;
use candle_nn::{Conv2d, Module, VarBuilder};

use crate::config::DiscriminatorConfig;
use crate::error::{Error, Result};
use crate::nn::{conv, conv_down4, lrelu};

/// Anything producing a real-valued score map from an `(N, C, H, W)` batch.
/// The per-sample critic value is the mean over the map.
pub trait Critic {
    fn score_map(&self, x: &Tensor) -> Result<Tensor>;
}

impl<F> Critic for F
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    fn score_map(&self, x: &Tensor) -> Result<Tensor> {
        self(x)
    }
}

/// Mean of each sample's score map, shape `(N,)`.
pub fn critic_values(critic: &dyn Critic, x: &Tensor) -> Result<Tensor> {
    let map = critic.score_map(x)?;
    let n = map.dim(0)?;
    Ok(map.reshape((n, ()))?.mean(1)?)
}

/// Four-layer strided patch critic, no normalization, raw logits out.
#[derive(Clone, Debug)]
pub struct DiscriminatorNet {
    resolution: usize,
    layers: [Conv2d; 3],
    out: Conv2d,
}

impl DiscriminatorNet {
    pub fn new(cfg: &DiscriminatorConfig, resolution: usize, vb: VarBuilder) -> Result<Self> {
        if resolution < 16 || resolution % 8 != 0 {
            return Err(Error::Config(format!(
                "discriminator resolution {resolution} must be a multiple of 8 and >= 16"
            )));
        }
        let c = cfg.base_channels;
        Ok(Self {
            resolution,
            layers: [
                conv_down4(3, c, vb.pp("l0"))?,
                conv_down4(c, 2 * c, vb.pp("l1"))?,
                conv_down4(2 * c, 4 * c, vb.pp("l2"))?,
            ],
            out: conv(4 * c, 1, 3, 1, vb.pp("l3"))?,
        })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    /// `(N, 1, R/8, R/8)` logit map.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = x
            .dims4()
            .map_err(|_| Error::Shape(format!("critic expects (N, C, H, W), got {:?}", x.dims())))?;
        if c != 3 || h != self.resolution || w != self.resolution {
            return Err(Error::Shape(format!(
                "critic built for 3x{r}x{r} inputs, got {c}x{h}x{w}",
                r = self.resolution
            )));
        }
        let mut h = x.clone();
        for layer in &self.layers {
            h = lrelu(&layer.forward(&h)?)?;
        }
        Ok(self.out.forward(&h)?)
    }
}

impl Critic for DiscriminatorNet {
    fn score_map(&self, x: &Tensor) -> Result<Tensor> {
        self.forward(x)
    }
}

/// `eps · real + (1 − eps) · fake` with one `eps` per batch element.
pub fn interpolate_samples(real: &Tensor, fake: &Tensor, eps: &[f64]) -> Result<Tensor> {
    if real.dims() != fake.dims() {
        return Err(Error::Shape(format!(
            "cannot interpolate {:?} with {:?}",
            real.dims(),
            fake.dims()
        )));
    }
    let n = real.dim(0)?;
    if eps.len() != n {
        return Err(Error::Shape(format!(
            "need {n} interpolation weights, got {}",
            eps.len()
        )));
    }
    let mut shape = vec![n];
    shape.extend(std::iter::repeat(1).take(real.rank() - 1));
    let e = Tensor::from_slice(eps, shape.as_slice(), real.device())?.to_dtype(real.dtype())?;
    let one_minus = e.affine(-1.0, 1.0)?;
    Ok(real.broadcast_mul(&e)?.add(&fake.broadcast_mul(&one_minus)?)?)
}
