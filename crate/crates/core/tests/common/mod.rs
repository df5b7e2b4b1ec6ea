#![allow(dead_code)]

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use s2r_core::config::{BudgetConfig, CodecConfig, DiscriminatorConfig, GeneratorConfig};
use s2r_core::RunConfig;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor {
    let mut r = rng(seed);
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| r.random_range(lo..hi)).collect();
    Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
}

pub fn to_vec(t: &Tensor) -> Vec<f64> {
    t.to_dtype(DType::F64).unwrap().flatten_all().unwrap().to_vec1().unwrap()
}

pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    to_vec(a)
        .iter()
        .zip(to_vec(b))
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Compares the analytic gradient of `sum(w ⊙ f(x))` with central finite
/// differences (step `h`) at every input element. Returns the worst
/// relative error, `|a − n| / max(|a|, |n|, floor)`.
pub fn fd_check(f: &dyn Fn(&Tensor) -> s2r_core::Result<Tensor>, x: &Tensor, h: f64, seed: u64) -> f64 {
    let x = x.to_dtype(DType::F64).unwrap();
    let var = Var::from_tensor(&x).unwrap();
    let y = f(var.as_tensor()).unwrap();
    let w = uniform(y.dims(), 0.5, 1.5, seed);
    let loss = (&y * &w).unwrap().sum_all().unwrap();
    let grads = s2r_core::nn::backward(&loss).unwrap();
    let analytic = to_vec(grads.get(var.as_tensor()).expect("input receives a gradient"));
    let base = to_vec(&x);
    let eval = |v: &[f64]| -> f64 {
        let t = Tensor::from_slice(v, x.dims(), &Device::Cpu).unwrap();
        let y = f(&t).unwrap();
        (&y * &w).unwrap().sum_all().unwrap().to_scalar::<f64>().unwrap()
    };
    let mut worst = 0.0f64;
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] += h;
        let mut m = base.clone();
        m[i] -= h;
        let numeric = (eval(&p) - eval(&m)) / (2.0 * h);
        let scale = analytic[i].abs().max(numeric.abs()).max(1e-4);
        worst = worst.max((analytic[i] - numeric).abs() / scale);
    }
    worst
}

/// Small networks so training-loop tests run in seconds.
pub fn tiny_config(seed: u64) -> RunConfig {
    RunConfig {
        seed,
        train_resolution: 16,
        message_length: 8,
        batch_size: 4,
        scales_k: 2,
        generator: GeneratorConfig {
            base_channels: 4,
            latent_dim: 2,
            num_res: 1,
            noise_map: false,
        },
        discriminator: DiscriminatorConfig { base_channels: 4 },
        codec: CodecConfig {
            channels: 8,
            encoder_blocks: 1,
            decoder_layers: 2,
        },
        budget: BudgetConfig {
            s2r_steps: 6,
            watermark_steps: 6,
            supervised_steps: 6,
            checkpoint_every: 3,
        },
        ..RunConfig::desk_scale()
    }
}
pub mod suites;
