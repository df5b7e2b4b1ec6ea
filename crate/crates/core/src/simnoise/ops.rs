//! Individual distortion stages. All act on `(N, C, H, W)` tensors in
//! [-1, 1], preserve shape, clamp their output and are differentiable in
//! the input.

use candle_core::{Tensor, D};
use rand::Rng;

use crate::error::{Error, Result};
use crate::resample::{self, apply_separable};
use crate::rng::normal_tensor;

/// Angle between the two gratings whose product forms the moiré pattern.
pub const MOIRE_DETUNE_RAD: f64 = 0.25;

pub fn clamp_unit(x: &Tensor) -> Result<Tensor> {
    Ok(x.clamp(-1.0, 1.0)?)
}

fn plane(h: usize, w: usize, like: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    let mut v = Vec::with_capacity(h * w);
    for i in 0..h {
        for j in 0..w {
            v.push(f((j as f64 + 0.5) / w as f64, (i as f64 + 0.5) / h as f64));
        }
    }
    Ok(Tensor::from_vec(v, (1, 1, h, w), like.device())?.to_dtype(like.dtype())?)
}

/// Linear brightness fall-off along `direction` (radians): the lit side is
/// unchanged, the far side is pulled toward black by `strength`.
pub fn illumination(x: &Tensor, direction: f64, strength: f64) -> Result<Tensor> {
    if strength == 0.0 {
        return Ok(x.clone());
    }
    let (_, _, h, w) = x.dims4()?;
    let (c, s) = (direction.cos(), direction.sin());
    let span = c.abs() + s.abs();
    let ramp = plane(h, w, x, |u, v| {
        strength * (0.5 + ((u - 0.5) * c + (v - 0.5) * s) / span)
    })?;
    let darkening = (x + 1.0)?.broadcast_mul(&ramp)?;
    clamp_unit(&(x - darkening)?)
}

/// The moiré grating product `amplitude · sin(φ₁) · sin(φ₂)` sampled at
/// pixel centers, shape `(1, 1, H, W)`.
pub fn moire_pattern(
    h: usize,
    w: usize,
    freq: f64,
    angle: f64,
    amplitude: f64,
    like: &Tensor,
) -> Result<Tensor> {
    let tau = std::f64::consts::TAU;
    let (c1, s1) = (angle.cos(), angle.sin());
    let (c2, s2) = ((angle + MOIRE_DETUNE_RAD).cos(), (angle + MOIRE_DETUNE_RAD).sin());
    plane(h, w, like, |u, v| {
        amplitude * (tau * freq * (u * c1 + v * s1)).sin() * (tau * freq * (u * c2 + v * s2)).sin()
    })
}

pub fn moire(x: &Tensor, freq: f64, angle: f64, amplitude: f64) -> Result<Tensor> {
    if !(0.0..=0.3).contains(&amplitude) {
        return Err(Error::Config(format!("moire amplitude {amplitude} outside [0, 0.3]")));
    }
    if amplitude == 0.0 {
        return Ok(x.clone());
    }
    let (_, _, h, w) = x.dims4()?;
    let pattern = moire_pattern(h, w, freq, angle, amplitude, x)?;
    clamp_unit(&x.broadcast_add(&pattern)?)
}

pub fn gaussian_noise(x: &Tensor, sigma: f64, rng: &mut impl Rng) -> Result<Tensor> {
    if sigma == 0.0 {
        return Ok(x.clone());
    }
    let noise = normal_tensor(rng, x.shape(), sigma, x.device(), x.dtype())?;
    clamp_unit(&(x + noise)?)
}

/// Uniform gray-level offset.
pub fn grayscale_deviation(x: &Tensor, delta: f64) -> Result<Tensor> {
    if delta == 0.0 {
        return Ok(x.clone());
    }
    clamp_unit(&(x + delta)?)
}

/// Separable Gaussian blur with mean-preserving reflected borders.
pub fn blur(x: &Tensor, sigma: f64) -> Result<Tensor> {
    if sigma <= 0.0 {
        return Ok(x.clone());
    }
    let (_, _, h, w) = x.dims4()?;
    let y = apply_separable(
        x,
        resample::gaussian_blur_matrix(h, sigma),
        h,
        resample::gaussian_blur_matrix(w, sigma),
        w,
    )?;
    clamp_unit(&y)
}

/// Per-channel affine colour change `gain · x + bias`. Single-channel inputs
/// use the first entries.
pub fn color_shift(x: &Tensor, gain: &[f64], bias: &[f64]) -> Result<Tensor> {
    let c = x.dim(1)?;
    if gain.len() < c || bias.len() < c {
        return Err(Error::Shape(format!(
            "color_shift needs {c} gains and biases, got {} and {}",
            gain.len(),
            bias.len()
        )));
    }
    let g = Tensor::from_slice(&gain[..c], (1, c, 1, 1), x.device())?.to_dtype(x.dtype())?;
    let b = Tensor::from_slice(&bias[..c], (1, c, 1, 1), x.device())?.to_dtype(x.dtype())?;
    clamp_unit(&x.broadcast_mul(&g)?.broadcast_add(&b)?)
}

/// Standard JPEG luminance quantization table.
const JPEG_LUMA: [[f64; 8]; 8] = [
    [16., 11., 10., 16., 24., 40., 51., 61.],
    [12., 12., 14., 19., 26., 58., 60., 55.],
    [14., 13., 16., 24., 40., 57., 69., 56.],
    [14., 17., 22., 29., 51., 87., 80., 62.],
    [18., 22., 37., 56., 68., 109., 103., 77.],
    [24., 35., 55., 64., 81., 104., 113., 92.],
    [49., 64., 78., 87., 103., 121., 120., 101.],
    [72., 92., 95., 98., 112., 100., 103., 99.],
];

/// Quantizer step (8-bit units) at which an AC coefficient keeps half its
/// energy under the smooth attenuation.
pub const JPEG_SOFTNESS: f64 = 32.0;

/// Block-diagonal orthonormal DCT-II matrix with 8-point blocks; a trailing
/// partial block uses a DCT of its own length.
fn block_dct_matrix(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    let mut start = 0;
    while start < n {
        let len = (n - start).min(8);
        for k in 0..len {
            let scale = if k == 0 {
                (1.0 / len as f64).sqrt()
            } else {
                (2.0 / len as f64).sqrt()
            };
            for i in 0..len {
                let v = scale
                    * (std::f64::consts::PI * (2 * i + 1) as f64 * k as f64 / (2 * len) as f64).cos();
                m[(start + k) * n + start + i] = v;
            }
        }
        start += len;
    }
    m
}

fn transpose(m: &[f64], n: usize) -> Vec<f64> {
    let mut t = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            t[j * n + i] = m[i * n + j];
        }
    }
    t
}

/// Per-coefficient gain for a given JPEG quality: DC passes unchanged, AC
/// coefficients are scaled by `1 / (1 + (step / softness)²)`.
pub fn jpeg_attenuation(quality: f64) -> [[f64; 8]; 8] {
    let q = quality.clamp(1.0, 100.0);
    let scale = if q < 50.0 { 5000.0 / q } else { 200.0 - 2.0 * q };
    let mut a = [[1.0; 8]; 8];
    for (u, row) in a.iter_mut().enumerate() {
        for (v, g) in row.iter_mut().enumerate() {
            if u + v > 0 {
                let step = JPEG_LUMA[u][v] * scale / 100.0;
                *g = 1.0 / (1.0 + (step / JPEG_SOFTNESS).powi(2));
            }
        }
    }
    a
}

/// Smooth stand-in for JPEG: 8x8 block DCT, frequency-dependent attenuation,
/// inverse DCT. No rounding anywhere, so gradients pass through.
pub fn jpeg_approx(x: &Tensor, quality: f64) -> Result<Tensor> {
    if quality >= 100.0 {
        return Ok(x.clone());
    }
    let (_, _, h, w) = x.dims4()?;
    let dh = block_dct_matrix(h);
    let dw = block_dct_matrix(w);
    let coeffs = apply_separable(x, dh.clone(), h, dw.clone(), w)?;
    let table = jpeg_attenuation(quality);
    let mut mask = Vec::with_capacity(h * w);
    for i in 0..h {
        for j in 0..w {
            mask.push(table[i % 8][j % 8]);
        }
    }
    let mask = Tensor::from_vec(mask, (1, 1, h, w), x.device())?.to_dtype(x.dtype())?;
    let kept = coeffs.broadcast_mul(&mask)?;
    let y = apply_separable(&kept, transpose(&dh, h), h, transpose(&dw, w), w)?;
    clamp_unit(&y)
}

/// Mean over everything but the batch axis.
pub fn per_sample_mean(x: &Tensor) -> Result<Tensor> {
    Ok(x.flatten_from(1)?.mean(D::Minus1)?)
}
