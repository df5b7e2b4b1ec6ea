//! Checks shared by the focused test files and the acceptance target.

use candle_core::{DType, Device, Tensor};
use candle_nn::VarMap;
use image::RgbImage;
use rand::Rng;
use s2r_core::config::{CodecConfig, GeneratorConfig};
use s2r_core::losses::{self, PerceptualExtractor, Side};
use s2r_core::metrics;
use s2r_core::nn::{self, Init};
use s2r_core::resample::resize;
use s2r_core::simnoise::{self, compose_operator_pairs, NoiseOperatorPair};
use s2r_core::translator::{GeneratorNet, LatentCode};
use s2r_core::watermark::{direct_embed_u8, resolution_scale_embed, EncoderNet};
use s2r_core::{ImageTensor, NoisePipelineConfig, WatermarkMessage};

use super::{fd_check, rng, uniform};

pub const FD_STEP: f64 = 1e-3;
pub const FD_TOLERANCE: f64 = 1e-2;
/// Step for the perceptual loss: its L1 over hundreds of leaky-ReLU
/// features has kinks closer together than `FD_STEP`.
pub const FD_STEP_KINKED: f64 = 1e-6;

fn nonzero_rule(name: &str) -> Init {
    if name.ends_with("bias") {
        Init::Zeros
    } else {
        Init::HeNormal(1.0)
    }
}

/// Max abs error between staged and composed application over `trials`
/// random per-pixel triples on 16×16 RGB images, with `n^s = 0`.
pub fn operator_algebra_max_err(trials: usize, seed: u64) -> f64 {
    let shape = [1, 3, 16, 16];
    let mut worst = 0.0f64;
    for t in 0..trials {
        let s = seed.wrapping_mul(1_000_003).wrapping_add(t as u64 * 7);
        let x = uniform(&shape, -1.0, 1.0, s);
        let p_s = NoiseOperatorPair::new(uniform(&shape, 0.5, 1.5, s + 1), Tensor::zeros(&shape[..], DType::F64, &Device::Cpu).unwrap()).unwrap();
        let p_sc = NoiseOperatorPair::new(uniform(&shape, 0.5, 1.5, s + 2), uniform(&shape, -0.2, 0.2, s + 3)).unwrap();
        let p_cu = NoiseOperatorPair::new(uniform(&shape, 0.5, 1.5, s + 4), uniform(&shape, -0.2, 0.2, s + 5)).unwrap();
        let staged = p_cu.apply(&p_sc.apply(&p_s.apply(&x).unwrap()).unwrap()).unwrap();
        let composed = compose_operator_pairs(&compose_operator_pairs(&p_s, &p_sc).unwrap(), &p_cu)
            .unwrap()
            .apply(&x)
            .unwrap();
        worst = worst.max(super::max_abs_diff(&staged, &composed));
    }
    worst
}

type Case = (&'static str, Box<dyn Fn(&Tensor) -> s2r_core::Result<Tensor>>, Tensor);

fn image_input(seed: u64) -> Tensor {
    uniform(&[1, 3, 4, 4], -0.5, 0.5, seed)
}

fn simnoise_cases() -> Vec<Case> {
    let offsets = [[0.05, -0.03], [-0.04, 0.02], [0.03, 0.05], [-0.02, -0.04]];
    vec![
        ("perspective", Box::new(move |x: &Tensor| simnoise::perspective_warp(x, &offsets)), image_input(1)),
        ("illumination", Box::new(|x: &Tensor| simnoise::illumination(x, 0.7, 0.2)), image_input(2)),
        ("moire", Box::new(|x: &Tensor| simnoise::moire(x, 8.0, 0.3, 0.1)), image_input(3)),
        (
            "gaussian",
            Box::new(|x: &Tensor| simnoise::gaussian_noise(x, 0.05, &mut rng(7))),
            image_input(4),
        ),
        ("grayscale_deviation", Box::new(|x: &Tensor| simnoise::grayscale_deviation(x, 0.05)), image_input(5)),
        ("blur", Box::new(|x: &Tensor| simnoise::blur(x, 1.0)), image_input(6)),
        (
            "color_shift",
            Box::new(|x: &Tensor| simnoise::color_shift(x, &[1.1, 0.9, 1.0], &[0.05, -0.02, 0.0])),
            image_input(7),
        ),
        ("jpeg_approx", Box::new(|x: &Tensor| simnoise::jpeg_approx(x, 50.0)), image_input(8)),
        (
            "apply_t/pimog_like",
            Box::new(|x: &Tensor| simnoise::apply_t(x, &NoisePipelineConfig::pimog_like(), 11)),
            image_input(9),
        ),
        (
            "apply_t/stegastamp_like",
            Box::new(|x: &Tensor| simnoise::apply_t(x, &NoisePipelineConfig::stegastamp_like(), 12)),
            image_input(10),
        ),
    ]
}

fn generator_case() -> Case {
    let cfg = GeneratorConfig {
        base_channels: 4,
        latent_dim: 2,
        num_res: 1,
        noise_map: true,
    };
    let varmap = VarMap::new();
    let net = GeneratorNet::new(&cfg, 2, nn::builder(&varmap, DType::F64, &Device::Cpu)).unwrap();
    nn::seeded_init(&varmap, &mut rng(21), nonzero_rule).unwrap();
    // Keep the bounded head away from its clamp so the map is smooth.
    for (name, var) in nn::named_vars(&varmap) {
        if name.starts_with("head") {
            var.set(&(var.as_tensor() * 0.1).unwrap()).unwrap();
        }
    }
    let z = LatentCode::sample(&mut rng(22), 1, &cfg, 2, (4, 4), &Device::Cpu, DType::F64).unwrap();
    (
        "generator",
        Box::new(move |x: &Tensor| {
            let outs = net.forward(x, &z)?;
            let flat: Vec<Tensor> = outs.iter().map(|o| o.flatten_all()).collect::<candle_core::Result<_>>()?;
            Ok(Tensor::cat(&flat, 0)?)
        }),
        image_input(23),
    )
}

fn loss_cases() -> Vec<Case> {
    let ext = PerceptualExtractor::random(31, &Device::Cpu, DType::F64).unwrap();
    let target = uniform(&[1, 3, 4, 4], -0.5, 0.5, 32);
    let target_small = resize(&target, 2, 2).unwrap();
    let bits = Tensor::new(&[[1.0f64, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0]], &Device::Cpu).unwrap();
    let other = uniform(&[1, 3, 4, 4], -0.5, 0.5, 33);
    let weights = s2r_core::LossWeights::default();
    let weights_d = weights.clone();
    let critic_input = uniform(&[2, 3, 4, 4], -0.5, 0.5, 34);
    vec![
        (
            "cgan_objective",
            Box::new(|x: &Tensor| {
                let (r, f) = (x.narrow(0, 0, 1)?, x.narrow(0, 1, 1)?);
                losses::cgan_objective(&r, &f)
            }),
            uniform(&[2, 1, 2, 2], -2.0, 2.0, 35),
        ),
        (
            "adv_loss/generator",
            Box::new(|x: &Tensor| losses::adv_loss(x, x, Side::Generator)),
            uniform(&[2, 1, 2, 2], -2.0, 2.0, 36),
        ),
        (
            "gradient_penalty",
            Box::new(move |w: &Tensor| {
                let w = w.clone();
                let critic = move |y: &Tensor| -> s2r_core::Result<Tensor> {
                    let h = nn::softplus(&y.conv2d(&w, 1, 1, 1, 1)?)?;
                    Ok((h.sqr()? * 0.5)?)
                };
                losses::gradient_penalty(&critic, &critic_input)
            }),
            uniform(&[2, 3, 3, 3], -0.5, 0.5, 37),
        ),
        (
            "perceptual_multiscale",
            Box::new(move |x: &Tensor| {
                let outs = [resize(x, 2, 2)?, x.clone()];
                losses::perceptual_multiscale(&outs, &[target_small.clone(), target.clone()], &ext, 2)
            }),
            image_input(38),
        ),
        (
            "total_g",
            Box::new(move |x: &Tensor| {
                let adv = losses::adv_loss(x, x, Side::Generator)?;
                let perc = losses::l1(x, &x.zeros_like()?)?;
                losses::total_g(&adv, &perc, &weights)
            }),
            uniform(&[1, 1, 2, 2], -2.0, 2.0, 39),
        ),
        (
            "total_d",
            Box::new(move |x: &Tensor| {
                let obj = losses::cgan_objective(&x.narrow(0, 0, 1)?, &x.narrow(0, 1, 1)?)?;
                let gp = x.sqr()?.mean_all()?;
                losses::total_d(&obj, &gp, &weights_d)
            }),
            uniform(&[2, 1, 2, 2], -2.0, 2.0, 40),
        ),
        (
            "bce_with_logits",
            Box::new(move |x: &Tensor| losses::bce_with_logits(x, &bits)),
            uniform(&[1, 8], -3.0, 3.0, 41),
        ),
        ("mse", Box::new(move |x: &Tensor| losses::mse(x, &other)), image_input(42)),
        (
            "l1",
            Box::new(|x: &Tensor| losses::l1(x, &uniform(&[1, 3, 4, 4], -0.5, 0.5, 43))),
            image_input(44),
        ),
    ]
}

/// Worst relative finite-difference error of every differentiable piece.
pub fn differentiability_suite() -> Vec<(&'static str, f64)> {
    nn::enable_higher_order_grads();
    let mut cases = simnoise_cases();
    cases.push(generator_case());
    cases.extend(loss_cases());
    cases
        .into_iter()
        .enumerate()
        .map(|(i, (name, f, x))| {
            let h = if name == "perceptual_multiscale" { FD_STEP_KINKED } else { FD_STEP };
            (name, fd_check(f.as_ref(), &x, h, 100 + i as u64))
        })
        .collect()
}

/// `(label, measured, expected)` gradient penalties of linear critics.
pub fn gp_closed_form_cases() -> Vec<(String, f64, f64)> {
    nn::enable_higher_order_grads();
    let mut out = Vec::new();
    for &(n, h, w) in &[(1usize, 4usize, 4usize), (3, 8, 5)] {
        let y = uniform(&[n, 3, h, w], -1.0, 1.0, (n * h * w) as u64);
        let p = (3 * h * w) as f64;
        let sum_critic = |x: &Tensor| -> s2r_core::Result<Tensor> { Ok(x.sum_keepdim((1, 2, 3))?) };
        let gp = losses::scalar(&losses::gradient_penalty(&sum_critic, &y).unwrap()).unwrap();
        out.push((format!("sum critic P={p}"), gp, (p.sqrt() - 1.0).powi(2)));

        let u = uniform(&[1, 3, h, w], -1.0, 1.0, 77 + n as u64);
        let norm = u.sqr().unwrap().sum_all().unwrap().sqrt().unwrap();
        let u = u.broadcast_div(&norm).unwrap();
        for slope in [0.0, 0.5, 1.0, 2.0, 3.7] {
            let dir = (&u * slope).unwrap();
            let critic = move |x: &Tensor| -> s2r_core::Result<Tensor> {
                Ok(x.broadcast_mul(&dir)?.sum_keepdim((1, 2, 3))?)
            };
            let gp = losses::scalar(&losses::gradient_penalty(&critic, &y).unwrap()).unwrap();
            out.push((format!("slope {slope} n={n}"), gp, (slope - 1.0f64).powi(2)));
        }
    }
    out
}

pub fn random_rgb(w: u32, h: u32, seed: u64) -> RgbImage {
    let mut r = rng(seed);
    let bytes: Vec<u8> = (0..w * h * 3).map(|_| r.random()).collect();
    RgbImage::from_raw(w, h, bytes).unwrap()
}

fn codec_cfg() -> CodecConfig {
    CodecConfig {
        channels: 8,
        encoder_blocks: 1,
        decoder_layers: 2,
    }
}

/// An encoder whose residual head is randomized instead of zero.
pub fn active_encoder(native: (usize, usize), len: usize, seed: u64) -> EncoderNet {
    let varmap = VarMap::new();
    let enc = EncoderNet::new(&codec_cfg(), len, native, nn::builder(&varmap, DType::F32, &Device::Cpu)).unwrap();
    nn::seeded_init(&varmap, &mut rng(seed), nonzero_rule).unwrap();
    enc
}

pub fn zero_residual_encoder(native: (usize, usize), len: usize, seed: u64) -> EncoderNet {
    let varmap = VarMap::new();
    let enc = EncoderNet::new(&codec_cfg(), len, native, nn::builder(&varmap, DType::F32, &Device::Cpu)).unwrap();
    nn::seeded_init(&varmap, &mut rng(seed), nn::default_init_rule).unwrap();
    enc
}

fn differing(a: &RgbImage, b: &RgbImage) -> (usize, u8) {
    let mut count = 0;
    let mut worst = 0u8;
    for (p, q) in a.as_raw().iter().zip(b.as_raw()) {
        let d = p.abs_diff(*q);
        if d > 0 {
            count += 1;
        }
        worst = worst.max(d);
    }
    (count, worst)
}

/// `(native differing values, worst level change of a zero-residual
/// encoder over several sizes)`.
pub fn algorithm1_check() -> (usize, u8) {
    let len = 16;
    let mut native_diff = 0;
    for i in 0..4u64 {
        let enc = active_encoder((32, 32), len, 50 + i);
        let msg = WatermarkMessage::random(len, &mut rng(60 + i));
        let img = random_rgb(32, 32, 70 + i);
        let scaled = resolution_scale_embed(&img, &msg, &enc).unwrap();
        let direct = direct_embed_u8(&img, &msg, &enc).unwrap();
        assert_ne!(direct, img, "the active encoder must change the image");
        native_diff += differing(&scaled, &direct).0;
    }
    let enc = zero_residual_encoder((32, 32), len, 80);
    let msg = WatermarkMessage::random(len, &mut rng(81));
    let mut worst = 0;
    for (i, &(w, h)) in [(48u32, 40u32), (64, 64), (17, 23), (100, 75), (32, 32)].iter().enumerate() {
        let img = random_rgb(w, h, 90 + i as u64);
        let out = resolution_scale_embed(&img, &msg, &enc).unwrap();
        worst = worst.max(differing(&out, &img).1);
    }
    (native_diff, worst)
}

fn level(v: u8, side: usize) -> ImageTensor {
    ImageTensor::from_u8(&vec![v; side * side * 3], side, side, 3).unwrap()
}

fn bits_of(v: u32) -> WatermarkMessage {
    WatermarkMessage::new((0..8).map(|i| ((v >> i) & 1) as u8).collect()).unwrap()
}

/// Named pass/fail checks of the metrics against hand-computed values.
pub fn metric_checks() -> Vec<(String, bool)> {
    let mut out = Vec::new();
    let mut exhaustive = true;
    for a in 0..256u32 {
        for b in 0..256u32 {
            let expected = (a ^ b).count_ones() as f64 / 8.0 * 100.0;
            let got = s2r_core::ber(&bits_of(a), &bits_of(b)).unwrap();
            exhaustive &= (got - expected).abs() < 1e-12;
        }
    }
    out.push(("ber exhaustive 2^8 x 2^8".into(), exhaustive));

    let m = WatermarkMessage::random(64, &mut rng(5));
    let flipped: Vec<u8> = m.bits().iter().map(|b| 1 - b).collect();
    let mut two = m.bits().to_vec();
    two[3] ^= 1;
    two[40] ^= 1;
    let ber = |b: Vec<u8>| s2r_core::ber(&m, &WatermarkMessage::new(b).unwrap()).unwrap();
    out.push(("ber identical = 0".into(), ber(m.bits().to_vec()) == 0.0));
    out.push(("ber complement = 100".into(), ber(flipped) == 100.0));
    out.push(("ber 2 of 64 = 3.125".into(), ber(two) == 3.125));
    let tie = WatermarkMessage::from_scores(&[0.5; 8]);
    out.push(("tie scores decode to zeros".into(), tie.bits().iter().all(|&b| b == 0)));

    let close = |a: f64, b: f64, tol: f64| (a - b).abs() <= tol;
    let p = |a: &ImageTensor, b: &ImageTensor| metrics::psnr(a, b).unwrap();
    out.push(("psnr identical = 100".into(), p(&level(90, 16), &level(90, 16)) == 100.0));
    out.push((
        "psnr one level = 20 log10 255".into(),
        close(p(&level(90, 16), &level(91, 16)), 20.0 * 255f64.log10(), 1e-6),
    ));
    out.push((
        "psnr mse 4 = 10 log10(255^2/4)".into(),
        close(p(&level(90, 16), &level(92, 16)), 10.0 * (255f64 * 255.0 / 4.0).log10(), 1e-6),
    ));
    out.push(("psnr one level ~ 48.13".into(), close(p(&level(0, 16), &level(1, 16)), 48.13, 5e-3)));
    out.push(("psnr mse 4 ~ 42.11".into(), close(p(&level(0, 16), &level(2, 16)), 42.11, 5e-3)));

    let s = |a: &ImageTensor, b: &ImageTensor| metrics::ssim(a, b).unwrap();
    let img = ImageTensor::from_u8(random_rgb(24, 24, 3).as_raw(), 24, 24, 3).unwrap();
    let img2 = ImageTensor::from_u8(random_rgb(24, 24, 4).as_raw(), 24, 24, 3).unwrap();
    out.push(("ssim identical = 1".into(), close(s(&img, &img), 1.0, 1e-12)));
    let c1 = (0.01f64 * 255.0).powi(2);
    let black_white = s(&level(0, 16), &level(255, 16));
    out.push(("ssim black vs white < 0.01".into(), black_white < 0.01));
    out.push((
        "ssim black vs white = C1/(255^2+C1)".into(),
        close(black_white, c1 / (255.0 * 255.0 + c1), 1e-9),
    ));
    out.push(("ssim symmetric".into(), close(s(&img, &img2), s(&img2, &img), 1e-12)));

    let h = |a: &[ImageTensor], b: &[ImageTensor]| metrics::hist_compare(a, b).unwrap().distance;
    let set_a = vec![img.clone(), img2.clone()];
    out.push(("hist identical = 0".into(), h(&set_a, &set_a) == 0.0));
    out.push((
        "hist black vs white = 2/256".into(),
        close(h(&[level(0, 16)], &[level(255, 16)]), 2.0 / 256.0, 1e-12),
    ));
    out.push(("hist symmetric".into(), h(&set_a, &[level(7, 24)]) == h(&[level(7, 24)], &set_a)));
    out
}
