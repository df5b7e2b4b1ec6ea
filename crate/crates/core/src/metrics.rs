//! Image quality and distribution metrics on the 0–255 scale.

use crate::error::{Error, Result};
use crate::image::{denormalize_value, ImageTensor};

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const HIST_BINS: usize = 256;

fn same_shape(a: &ImageTensor, b: &ImageTensor) -> Result<()> {
    if (a.height(), a.width(), a.channels()) != (b.height(), b.width(), b.channels()) {
        return Err(Error::Shape(format!(
            "images differ in shape: {}x{}x{} vs {}x{}x{}",
            a.height(),
            a.width(),
            a.channels(),
            b.height(),
            b.width(),
            b.channels()
        )));
    }
    Ok(())
}

fn to_255(x: f32) -> f64 {
    x as f64 * 127.5 + 127.5
}

pub fn mse_255(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    same_shape(a, b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (to_255(x) - to_255(y)).powi(2))
        .sum();
    Ok(sum / a.data().len() as f64)
}

/// Peak signal-to-noise ratio in dB with peak 255, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    let mse = mse_255(a, b)?;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (255.0f64 * 255.0 / mse).log10()).min(PSNR_CAP_DB))
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let w: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - half).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering of one `h × w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, win: &[f64]) -> Vec<f64> {
    let k = win.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|i| win[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| win[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Single-scale SSIM with an 11×11 Gaussian window (σ = 1.5), averaged over
/// window positions and then channels.
pub fn ssim(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    same_shape(a, b)?;
    let (h, w, c) = (a.height(), a.width(), a.channels());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "ssim needs both sides >= {SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let c1 = (0.01f64 * 255.0).powi(2);
    let c2 = (0.03f64 * 255.0).powi(2);
    let win = gaussian_window();
    let mut total = 0.0;
    for ch in 0..c {
        let plane = |img: &ImageTensor| -> Vec<f64> {
            (0..h * w).map(|i| to_255(img.data()[i * c + ch])).collect()
        };
        let (pa, pb) = (plane(a), plane(b));
        let prod = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(x, y)| x * y).collect() };
        let mu_a = filter_valid(&pa, h, w, &win);
        let mu_b = filter_valid(&pb, h, w, &win);
        let aa = filter_valid(&prod(&pa, &pa), h, w, &win);
        let bb = filter_valid(&prod(&pb, &pb), h, w, &win);
        let ab = filter_valid(&prod(&pa, &pb), h, w, &win);
        let n = mu_a.len();
        let mut sum = 0.0;
        for i in 0..n {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        total += sum / n as f64;
    }
    Ok(total / c as f64)
}

/// Per-channel intensity histograms averaged over a set, each normalized to
/// sum to one. Layout: `curves[channel][bin]`.
pub fn set_histogram(images: &[ImageTensor]) -> Result<Vec<Vec<f64>>> {
    let first = images
        .first()
        .ok_or_else(|| Error::Shape("histogram of an empty image set".into()))?;
    let c = first.channels();
    let mut curves = vec![vec![0.0; HIST_BINS]; c];
    for img in images {
        if img.channels() != c {
            return Err(Error::Shape("image set mixes channel counts".into()));
        }
        let pixels = (img.height() * img.width()) as f64;
        let mut counts = vec![vec![0u64; HIST_BINS]; c];
        for (i, &x) in img.data().iter().enumerate() {
            counts[i % c][denormalize_value(x) as usize] += 1;
        }
        for ch in 0..c {
            for bin in 0..HIST_BINS {
                curves[ch][bin] += counts[ch][bin] as f64 / pixels;
            }
        }
    }
    let n = images.len() as f64;
    for curve in &mut curves {
        curve.iter_mut().for_each(|v| *v /= n);
    }
    Ok(curves)
}

#[derive(Clone, Debug)]
pub struct HistComparison {
    pub distance: f64,
    /// Channel-averaged curves for plotting.
    pub freq_a: Vec<f64>,
    pub freq_b: Vec<f64>,
}

impl HistComparison {
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["bin", "freq_a", "freq_b"])?;
        for bin in 0..HIST_BINS {
            w.write_record([
                bin.to_string(),
                self.freq_a[bin].to_string(),
                self.freq_b[bin].to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Mean per-bin L1 distance between the two sets' normalized histograms,
/// `(1 / (C · 256)) Σ_c Σ_bin |f_a − f_b|`. Ranges over `[0, 2/256]`.
pub fn hist_compare(set_a: &[ImageTensor], set_b: &[ImageTensor]) -> Result<HistComparison> {
    let ha = set_histogram(set_a)?;
    let hb = set_histogram(set_b)?;
    if ha.len() != hb.len() {
        return Err(Error::Shape("image sets differ in channel count".into()));
    }
    let c = ha.len();
    let mut l1 = 0.0;
    for ch in 0..c {
        for bin in 0..HIST_BINS {
            l1 += (ha[ch][bin] - hb[ch][bin]).abs();
        }
    }
    let average = |h: &[Vec<f64>]| -> Vec<f64> {
        (0..HIST_BINS)
            .map(|bin| h.iter().map(|curve| curve[bin]).sum::<f64>() / c as f64)
            .collect()
    };
    Ok(HistComparison {
        distance: l1 / (c * HIST_BINS) as f64,
        freq_a: average(&ha),
        freq_b: average(&hb),
    })
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
