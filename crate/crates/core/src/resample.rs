//! Linear resampling operators expressed as dense matrices, so that every
//! resize and blur is an exact, differentiable `R_h · X · R_wᵀ` product.

use candle_core::Tensor;

use crate::error::{Error, Result};

/// Row-major `out × inp` bilinear interpolation matrix with half-pixel
/// centers (corner alignment disabled) and edge clamping.
pub fn bilinear_matrix(out: usize, inp: usize) -> Vec<f64> {
    let mut m = vec![0.0; out * inp];
    let scale = inp as f64 / out as f64;
    for i in 0..out {
        let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
        let lo = src.floor() as usize;
        let hi = (lo + 1).min(inp - 1);
        let frac = src - lo as f64;
        m[i * inp + lo] += 1.0 - frac;
        m[i * inp + hi] += frac;
    }
    m
}

/// Symmetric `n × n` Gaussian smoothing matrix with half-sample reflection at
/// the borders. The matrix is symmetric with unit row sums, hence also unit
/// column sums, so it preserves the mean of whatever it is applied to.
pub fn gaussian_blur_matrix(n: usize, sigma: f64) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    if sigma <= 0.0 {
        for i in 0..n {
            m[i * n + i] = 1.0;
        }
        return m;
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    let n_i = n as isize;
    for i in 0..n_i {
        for (k, d) in (-radius..=radius).enumerate() {
            let mut j = i + d;
            // reflect until inside, handles radii larger than the image
            loop {
                if j < 0 {
                    j = -j - 1;
                } else if j >= n_i {
                    j = 2 * n_i - j - 1;
                } else {
                    break;
                }
            }
            m[(i * n_i + j) as usize] += taps[k] / total;
        }
    }
    m
}

fn matrix_tensor(values: Vec<f64>, rows: usize, cols: usize, like: &Tensor) -> Result<Tensor> {
    Ok(Tensor::from_vec(values, (rows, cols), like.device())?.to_dtype(like.dtype())?)
}

/// Applies `rows · X · colsᵀ` to the trailing two axes of `x`.
pub fn apply_separable(
    x: &Tensor,
    rows: Vec<f64>,
    out_h: usize,
    cols: Vec<f64>,
    out_w: usize,
) -> Result<Tensor> {
    let dims = x.dims();
    if dims.len() < 2 {
        return Err(Error::Shape(format!("need at least 2 axes, got {dims:?}")));
    }
    let h = dims[dims.len() - 2];
    let w = dims[dims.len() - 1];
    let rh = matrix_tensor(rows, out_h, h, x)?;
    let rw_t = matrix_tensor(cols, out_w, w, x)?.t()?;
    let y = x.broadcast_matmul(&rw_t)?;
    Ok(rh.broadcast_matmul(&y)?)
}

/// Bilinear resize of the trailing `(H, W)` axes. Same-size requests return
/// the input unchanged.
pub fn resize(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let dims = x.dims();
    if dims.len() < 2 {
        return Err(Error::Shape(format!("need at least 2 axes, got {dims:?}")));
    }
    let h = dims[dims.len() - 2];
    let w = dims[dims.len() - 1];
    if out_h == 0 || out_w == 0 {
        return Err(Error::Shape("resize target must be non-empty".into()));
    }
    if (h, w) == (out_h, out_w) {
        return Ok(x.clone());
    }
    apply_separable(
        x,
        bilinear_matrix(out_h, h),
        out_h,
        bilinear_matrix(out_w, w),
        out_w,
    )
}

/// Pyramid of `levels` images, coarse to fine, each half the size of the
/// next. The finest level is `x` itself.
pub fn pyramid(x: &Tensor, levels: usize) -> Result<Vec<Tensor>> {
    let dims = x.dims();
    let h = dims[dims.len() - 2];
    let w = dims[dims.len() - 1];
    let mut out = Vec::with_capacity(levels);
    for i in (0..levels).rev() {
        let f = 1usize << i;
        out.push(resize(x, h / f, w / f)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    #[test]
    fn bilinear_rows_sum_to_one() {
        for (o, i) in [(8, 32), (32, 8), (7, 13), (16, 16)] {
            let m = bilinear_matrix(o, i);
            for r in 0..o {
                let s: f64 = m[r * i..(r + 1) * i].iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn halving_averages_pairs() {
        let m = bilinear_matrix(2, 4);
        assert_eq!(m, vec![0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.5, 0.5]);
    }

    #[test]
    fn blur_matrix_is_doubly_stochastic() {
        let n = 11;
        let m = gaussian_blur_matrix(n, 1.7);
        for i in 0..n {
            let row: f64 = (0..n).map(|j| m[i * n + j]).sum();
            let col: f64 = (0..n).map(|j| m[j * n + i]).sum();
            assert!((row - 1.0).abs() < 1e-12);
            assert!((col - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pyramid_sizes() {
        let x = Tensor::zeros((1, 3, 32, 32), DType::F32, &Device::Cpu).unwrap();
        let p = pyramid(&x, 3).unwrap();
        let sizes: Vec<_> = p.iter().map(|t| t.dims()[2]).collect();
        assert_eq!(sizes, vec![8, 16, 32]);
    }
}
