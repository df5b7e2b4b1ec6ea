//! Training objectives: adversarial terms, gradient penalty, multi-scale
//! perceptual reconstruction and the weighted totals.
//!
//! Critic outputs are logits. With `σ` the logistic function,
//! `log σ(r) = −softplus(−r)` and `log(1 − σ(f)) = −softplus(f)`, so the
//! shared objective `E[log D(real)] + E[log(1 − D(fake))]` becomes
//! `−E[softplus(−r)] − E[softplus(f)]`. The critic minimizes its negation;
//! the generator minimizes the non-saturating `E[softplus(−f)]`, which has
//! the same fixed point as the literal form without its vanishing gradient.

use std::path::Path;

use candle_core::{DType, Device, Tensor, Var};

use crate::config::LossWeights;
use crate::error::{Error, Result};
use crate::nn::{backward, lrelu, softplus};
use crate::rng::{normal_tensor, SeedStreams, Stream};
use crate::translator::{critic_values, Critic};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Generator,
    Discriminator,
}

fn ensure_finite(t: &Tensor, what: &str) -> Result<()> {
    let s: f64 = t.sum_all()?.to_dtype(DType::F64)?.to_scalar()?;
    if s.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("{what} contains non-finite values")))
    }
}

pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// The shared adversarial objective `−E[softplus(−r)] − E[softplus(f)]`.
pub fn cgan_objective(real_scores: &Tensor, fake_scores: &Tensor) -> Result<Tensor> {
    ensure_finite(real_scores, "real scores")?;
    ensure_finite(fake_scores, "fake scores")?;
    let real_term = softplus(&real_scores.neg()?)?.mean_all()?;
    let fake_term = softplus(fake_scores)?.mean_all()?;
    Ok((real_term + fake_term)?.neg()?)
}

/// Per-side adversarial loss, each minimized by its own optimizer.
/// Generator: `E[softplus(−f)]`. Discriminator: `−cgan_objective`.
pub fn adv_loss(real_scores: &Tensor, fake_scores: &Tensor, side: Side) -> Result<Tensor> {
    match side {
        Side::Generator => {
            ensure_finite(fake_scores, "fake scores")?;
            Ok(softplus(&fake_scores.neg()?)?.mean_all()?)
        }
        Side::Discriminator => Ok(cgan_objective(real_scores, fake_scores)?.neg()?),
    }
}

/// `mean_b (‖∇_{ỹ_b} meanD(ỹ_b)‖₂ − 1)²`. The result stays attached to the
/// critic's parameters so it can be minimized.
pub fn gradient_penalty(critic: &dyn Critic, y_tilde: &Tensor) -> Result<Tensor> {
    let point = Var::from_tensor(&y_tilde.detach())?;
    let values = critic_values(critic, point.as_tensor())?;
    let grads = backward(&values.sum_all()?)?;
    let g = grads.get(point.as_tensor()).ok_or_else(|| {
        Error::Contract("critic output does not depend on its input; no gradient available".into())
    })?;
    let n = g.dim(0)?;
    let norms = (g.sqr()?.reshape((n, ()))?.sum(1)? + 1e-12)?.sqrt()?;
    Ok((norms - 1.0)?.sqr()?.mean_all()?)
}

/// Frozen convolutional feature map `φ`.
#[derive(Clone, Debug)]
pub struct PerceptualExtractor {
    layers: Vec<(Tensor, Tensor)>,
}

impl PerceptualExtractor {
    /// Channel widths of the default random-feature stack.
    pub const DEFAULT_WIDTHS: [usize; 4] = [3, 16, 32, 32];

    /// Three 3x3 conv layers with fixed seeded He-normal weights.
    pub fn random(seed: u64, device: &Device, dtype: DType) -> Result<Self> {
        let mut rng = SeedStreams::new(seed).rng_named(&format!("{}/perceptual", Stream::Init.name()), 0);
        let w = Self::DEFAULT_WIDTHS;
        let layers = w
            .windows(2)
            .map(|p| {
                let fan_in = p[0] * 9;
                let weight = normal_tensor(&mut rng, (p[1], p[0], 3, 3), (2.0 / fan_in as f64).sqrt(), device, dtype)?;
                let bias = Tensor::zeros(p[1], dtype, device)?;
                Ok((weight, bias))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers })
    }

    /// Loads pretrained conv layers stored as `layer{i}.weight` /
    /// `layer{i}.bias` (bias optional), applied in index order.
    pub fn from_safetensors(path: &Path, device: &Device, dtype: DType) -> Result<Self> {
        let map = candle_core::safetensors::load(path, device)?;
        let mut layers = Vec::new();
        for i in 0.. {
            let Some(w) = map.get(&format!("layer{i}.weight")) else {
                break;
            };
            let (out_c, _, kh, kw) = w.dims4()?;
            if kh != kw || kh % 2 == 0 {
                return Err(Error::Config(format!(
                    "perceptual layer {i} needs an odd square kernel, got {kh}x{kw}"
                )));
            }
            let b = match map.get(&format!("layer{i}.bias")) {
                Some(b) => b.to_dtype(dtype)?,
                None => Tensor::zeros(out_c, dtype, device)?,
            };
            layers.push((w.to_dtype(dtype)?, b));
        }
        if layers.is_empty() {
            return Err(Error::Config(format!(
                "{} holds no layer0.weight tensor",
                path.display()
            )));
        }
        Ok(Self { layers })
    }

    pub fn features(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for (w, b) in &self.layers {
            let pad = w.dim(2)? / 2;
            h = h.conv2d(w, pad, 1, 1, 1)?;
            h = lrelu(&h.broadcast_add(&b.reshape((1, (), 1, 1))?)?)?;
        }
        Ok(h)
    }
}

/// `(1 / 2^{k−1}) Σᵢ mean|φ(targetᵢ) − φ(outputᵢ)|`, scales coarse to fine.
/// Each term is normalized by the element count of its feature map.
pub fn perceptual_multiscale(
    outputs: &[Tensor],
    targets: &[Tensor],
    ext: &PerceptualExtractor,
    k: usize,
) -> Result<Tensor> {
    if outputs.len() != k || targets.len() != k || k == 0 {
        return Err(Error::Shape(format!(
            "expected {k} scales, got {} outputs and {} targets",
            outputs.len(),
            targets.len()
        )));
    }
    let mut total: Option<Tensor> = None;
    for (i, (o, t)) in outputs.iter().zip(targets).enumerate() {
        if o.dims() != t.dims() {
            return Err(Error::Shape(format!(
                "scale {i}: output {:?} vs target {:?}",
                o.dims(),
                t.dims()
            )));
        }
        let term = (ext.features(t)? - ext.features(o)?)?.abs()?.mean_all()?;
        total = Some(match total {
            Some(acc) => (acc + term)?,
            None => term,
        });
    }
    let weight = 1.0 / (1u64 << (k - 1)) as f64;
    Ok((total.expect("k > 0") * weight)?)
}

/// `adv + λ_G · perc`.
pub fn total_g(adv: &Tensor, perc: &Tensor, w: &LossWeights) -> Result<Tensor> {
    Ok((adv + (perc * w.lambda_g)?)?)
}

/// `−objective + λ_grad · gp`, where `objective` is [`cgan_objective`].
pub fn total_d(objective: &Tensor, gp: &Tensor, w: &LossWeights) -> Result<Tensor> {
    Ok((objective.neg()? + (gp * w.lambda_grad)?)?)
}

/// Mean binary cross-entropy on logits against `{0, 1}` targets.
pub fn bce_with_logits(logits: &Tensor, targets: &Tensor) -> Result<Tensor> {
    let t = targets.to_dtype(logits.dtype())?;
    Ok((softplus(logits)? - (logits * t)?)?.mean_all()?)
}

pub fn mse(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    Ok((a - b)?.sqr()?.mean_all()?)
}

pub fn l1(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    Ok((a - b)?.abs()?.mean_all()?)
}
