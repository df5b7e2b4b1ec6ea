//! Layer helpers shared by the networks, plus seeded parameter
//! initialization and the higher-order-gradient switch.

use std::sync::Once;

use candle_core::{DType, Device, Tensor, Var};
use candle_nn::{Conv2d, Conv2dConfig, Module, VarBuilder, VarMap};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::normal_tensor;

static HIGHER_ORDER: Once = Once::new();

/// Keeps gradient graphs alive so penalties on input gradients can be
/// differentiated again. Must run before the first backward pass of any
/// thread; every backward in this crate goes through [`backward`].
pub fn enable_higher_order_grads() {
    HIGHER_ORDER.call_once(|| {
        // SAFETY: set once, before any backward pass reads it; the tensor
        // library reads this variable lazily per thread.
        unsafe { std::env::set_var("CANDLE_GRAD_DO_NOT_DETACH", "1") };
    });
}

pub fn backward(loss: &Tensor) -> Result<candle_core::backprop::GradStore> {
    enable_higher_order_grads();
    Ok(loss.backward()?)
}

pub fn conv(
    in_c: usize,
    out_c: usize,
    kernel: usize,
    stride: usize,
    vb: VarBuilder,
) -> Result<Conv2d> {
    let cfg = Conv2dConfig {
        padding: kernel / 2,
        stride,
        ..Default::default()
    };
    Ok(candle_nn::conv2d(in_c, out_c, kernel, cfg, vb)?)
}

/// 4x4 stride-2 convolution with padding 1, exactly halving the input.
pub fn conv_down4(in_c: usize, out_c: usize, vb: VarBuilder) -> Result<Conv2d> {
    let cfg = Conv2dConfig {
        padding: 1,
        stride: 2,
        ..Default::default()
    };
    Ok(candle_nn::conv2d(in_c, out_c, 4, cfg, vb)?)
}

pub fn lrelu(x: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::leaky_relu(x, 0.2)?)
}

/// `softplus(x) = log(1 + eˣ)` in the overflow-free form
/// `max(x, 0) + log(1 + e^{-|x|})`.
pub fn softplus(x: &Tensor) -> Result<Tensor> {
    let tail = (x.abs()?.neg()?.exp()? + 1.0)?.log()?;
    Ok((x.relu()? + tail)?)
}

/// conv-relu-conv with identity skip.
#[derive(Clone, Debug)]
pub struct ResBlock {
    a: Conv2d,
    b: Conv2d,
}

impl ResBlock {
    pub fn new(c: usize, vb: VarBuilder) -> Result<Self> {
        Ok(Self {
            a: conv(c, c, 3, 1, vb.pp("a"))?,
            b: conv(c, c, 3, 1, vb.pp("res_out"))?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.a.forward(x)?.relu()?;
        Ok((x + self.b.forward(&h)?)?)
    }
}

#[derive(Clone, Debug)]
pub struct ResStack(Vec<ResBlock>);

impl ResStack {
    pub fn new(c: usize, n: usize, vb: VarBuilder) -> Result<Self> {
        (0..n)
            .map(|i| ResBlock::new(c, vb.pp(i.to_string())))
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.0.iter().try_fold(x.clone(), |h, b| b.forward(&h))
    }
}

/// How a parameter is initialized, chosen from its name.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    /// He-normal scaled by the given factor.
    HeNormal(f64),
    Normal(f64),
}

/// Default rule: biases and `zero_head` parameters start at zero, `head`
/// weights start tiny, the last conv of a residual branch (`res_out`) starts
/// damped so deep stacks keep unit-scale features, everything else is
/// He-normal.
pub fn default_init_rule(name: &str) -> Init {
    if name.ends_with(".bias") || name.ends_with("bias") || name.contains("zero_head") {
        Init::Zeros
    } else if name.contains("head") {
        Init::Normal(1e-3)
    } else if name.contains("res_out") {
        Init::HeNormal(0.1)
    } else {
        Init::HeNormal(1.0)
    }
}

/// Overwrites every variable in `varmap` from `rng`, visiting them in name
/// order so the result depends only on the rng state.
pub fn seeded_init(varmap: &VarMap, rng: &mut impl Rng, rule: impl Fn(&str) -> Init) -> Result<()> {
    let data = varmap.data().lock().expect("varmap lock poisoned");
    let mut names: Vec<&String> = data.keys().collect();
    names.sort();
    for name in names {
        let var = &data[name];
        let dims = var.dims().to_vec();
        let fan_in: usize = dims.iter().skip(1).product::<usize>().max(1);
        let value = match rule(name) {
            Init::Zeros => var.zeros_like()?,
            Init::Normal(std) => normal_tensor(rng, dims.as_slice(), std, var.device(), var.dtype())?,
            Init::HeNormal(gain) => normal_tensor(
                rng,
                dims.as_slice(),
                gain * (2.0 / fan_in as f64).sqrt(),
                var.device(),
                var.dtype(),
            )?,
        };
        var.set(&value)?;
    }
    Ok(())
}

/// Named variables sorted by name.
pub fn named_vars(varmap: &VarMap) -> Vec<(String, Var)> {
    let data = varmap.data().lock().expect("varmap lock poisoned");
    let mut v: Vec<(String, Var)> = data.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    v.sort_by(|a, b| a.0.cmp(&b.0));
    v
}

/// Flattened copy of every parameter, for before/after comparisons.
pub fn snapshot(varmap: &VarMap) -> Result<Vec<(String, Vec<f64>)>> {
    named_vars(varmap)
        .into_iter()
        .map(|(n, v)| {
            let vals = v.as_tensor().to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
            Ok((n, vals))
        })
        .collect()
}

/// A fresh varmap-backed builder.
pub fn builder(varmap: &VarMap, dtype: DType, device: &Device) -> VarBuilder<'static> {
    VarBuilder::from_varmap(varmap, dtype, device)
}

pub fn check_dims4(x: &Tensor, what: &str) -> Result<(usize, usize, usize, usize)> {
    x.dims4()
        .map_err(|_| Error::Shape(format!("{what} expects (N, C, H, W), got {:?}", x.dims())))
}
