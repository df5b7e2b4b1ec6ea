//! Projective warps with differentiable bilinear sampling.

use candle_core::{Device, Tensor};

use crate::error::{Error, Result};

/// Corners of the unit square in normalized `(x, y)` image coordinates:
/// top-left, top-right, bottom-right, bottom-left.
pub const UNIT_CORNERS: [[f64; 2]; 4] = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];

/// Largest per-coordinate corner displacement accepted by [`perspective_warp`].
pub const MAX_CORNER_OFFSET: f64 = 0.25;

/// 3x3 projective transform acting on normalized image coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Homography(pub [[f64; 3]; 3]);

impl Homography {
    pub fn identity() -> Self {
        Self([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    }

    /// Fits the transform taking `src[i]` to `dst[i]` for the four corners.
    pub fn fit(src: &[[f64; 2]; 4], dst: &[[f64; 2]; 4]) -> Result<Self> {
        check_quad(dst)?;
        check_quad(src)?;
        // h33 = 1; 8 unknowns, two equations per correspondence
        let mut a = [[0.0f64; 9]; 8];
        for i in 0..4 {
            let [x, y] = src[i];
            let [u, v] = dst[i];
            a[2 * i] = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, u];
            a[2 * i + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y, v];
        }
        let h = solve8(a).ok_or_else(|| Error::Numeric("singular homography fit".into()))?;
        Ok(Self([[h[0], h[1], h[2]], [h[3], h[4], h[5]], [h[6], h[7], 1.0]]))
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let m = &self.0;
        let w = m[2][0] * p[0] + m[2][1] * p[1] + m[2][2];
        [
            (m[0][0] * p[0] + m[0][1] * p[1] + m[0][2]) / w,
            (m[1][0] * p[0] + m[1][1] * p[1] + m[1][2]) / w,
        ]
    }

    pub fn inverse(&self) -> Result<Self> {
        let m = &self.0;
        let cof = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
        let det = m[0][0] * cof(1, 2, 1, 2) - m[0][1] * cof(1, 2, 0, 2) + m[0][2] * cof(1, 2, 0, 1);
        if det.abs() < 1e-12 {
            return Err(Error::Numeric("homography is not invertible".into()));
        }
        let adj = [
            [cof(1, 2, 1, 2), -cof(0, 2, 1, 2), cof(0, 1, 1, 2)],
            [-cof(1, 2, 0, 2), cof(0, 2, 0, 2), -cof(0, 1, 0, 2)],
            [cof(1, 2, 0, 1), -cof(0, 2, 0, 1), cof(0, 1, 0, 1)],
        ];
        let mut inv = [[0.0; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                inv[r][c] = adj[r][c] / det;
            }
        }
        Ok(Self(inv))
    }
}

/// Rejects quadrilaterals with a collinear or folded corner, naming it.
fn check_quad(q: &[[f64; 2]; 4]) -> Result<()> {
    let cross: Vec<f64> = (0..4)
        .map(|i| {
            let prev = q[(i + 3) % 4];
            let cur = q[i];
            let next = q[(i + 1) % 4];
            let (ax, ay) = (cur[0] - prev[0], cur[1] - prev[1]);
            let (bx, by) = (next[0] - cur[0], next[1] - cur[1]);
            ax * by - ay * bx
        })
        .collect();
    let positive = cross.iter().filter(|c| **c > 0.0).count();
    let majority_sign = if positive >= 2 { 1.0 } else { -1.0 };
    for (i, c) in cross.iter().enumerate() {
        if c.abs() < 1e-9 || c.signum() != majority_sign {
            return Err(Error::DegenerateCorners { corner: i });
        }
    }
    Ok(())
}

fn solve8(mut a: [[f64; 9]; 8]) -> Option<[f64; 8]> {
    for col in 0..8 {
        let pivot = (col..8).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        for row in 0..8 {
            if row != col {
                let f = a[row][col] / a[col][col];
                for k in col..9 {
                    a[row][k] -= f * a[col][k];
                }
            }
        }
    }
    let mut x = [0.0; 8];
    for i in 0..8 {
        x[i] = a[i][8] / a[i][i];
    }
    Some(x)
}

/// Precomputed bilinear gather: four source indices and weights per output
/// pixel, source coordinates clamped to the frame (edge replication).
struct Sampler {
    index: Vec<u32>,
    weight: Vec<f64>,
}

impl Sampler {
    fn new(h: usize, w: usize, forward: &Homography) -> Result<Self> {
        let inv = forward.inverse()?;
        let mut index = Vec::with_capacity(4 * h * w);
        let mut weight = Vec::with_capacity(4 * h * w);
        for i in 0..h {
            for j in 0..w {
                let p = [(j as f64 + 0.5) / w as f64, (i as f64 + 0.5) / h as f64];
                let q = inv.apply(p);
                let sx = (q[0] * w as f64 - 0.5).clamp(0.0, (w - 1) as f64);
                let sy = (q[1] * h as f64 - 0.5).clamp(0.0, (h - 1) as f64);
                let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
                let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
                let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
                for (yy, xx, wt) in [
                    (y0, x0, (1.0 - fx) * (1.0 - fy)),
                    (y0, x1, fx * (1.0 - fy)),
                    (y1, x0, (1.0 - fx) * fy),
                    (y1, x1, fx * fy),
                ] {
                    index.push((yy * w + xx) as u32);
                    weight.push(wt);
                }
            }
        }
        Ok(Self { index, weight })
    }

    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = x.dims4()?;
        let dev: &Device = x.device();
        let idx = Tensor::from_slice(&self.index, self.index.len(), dev)?;
        let wts = Tensor::from_slice(&self.weight, (h * w, 4), dev)?.to_dtype(x.dtype())?;
        let flat = x.reshape((n, c, h * w))?;
        let gathered = flat.index_select(&idx, 2)?.reshape((n, c, h * w, 4))?;
        let out = gathered.broadcast_mul(&wts)?.sum(3)?;
        Ok(out.reshape((n, c, h, w))?)
    }
}

/// Resamples `x` so that content at `q` moves to `forward(q)`.
pub fn warp_homography(x: &Tensor, forward: &Homography) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    Sampler::new(h, w, forward)?.apply(x)
}

/// Moves the image corners by `offsets` (fractions of side length, `x`
/// then `y`) with the homography fitted from the unit square.
pub fn perspective_warp(x: &Tensor, offsets: &[[f64; 2]; 4]) -> Result<Tensor> {
    if offsets.iter().flatten().any(|o| o.abs() > MAX_CORNER_OFFSET + 1e-12) {
        return Err(Error::Config(format!(
            "corner offsets must stay within ±{MAX_CORNER_OFFSET}"
        )));
    }
    if offsets.iter().flatten().all(|o| *o == 0.0) {
        return Ok(x.clone());
    }
    let dst = corners_with_offsets(offsets);
    let h = Homography::fit(&UNIT_CORNERS, &dst)?;
    warp_homography(x, &h)
}

pub fn corners_with_offsets(offsets: &[[f64; 2]; 4]) -> [[f64; 2]; 4] {
    std::array::from_fn(|i| [UNIT_CORNERS[i][0] + offsets[i][0], UNIT_CORNERS[i][1] + offsets[i][1]])
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    #[test]
    fn fit_maps_corners() {
        let dst = corners_with_offsets(&[[0.05, 0.02], [-0.03, 0.04], [0.01, -0.06], [0.02, 0.0]]);
        let h = Homography::fit(&UNIT_CORNERS, &dst).unwrap();
        for i in 0..4 {
            let p = h.apply(UNIT_CORNERS[i]);
            assert!((p[0] - dst[i][0]).abs() < 1e-12 && (p[1] - dst[i][1]).abs() < 1e-12);
        }
        let back = h.inverse().unwrap();
        let q = back.apply(h.apply([0.3, 0.7]));
        assert!((q[0] - 0.3).abs() < 1e-12 && (q[1] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn zero_offsets_identity() {
        let x = Tensor::randn(0f32, 0.3, (1, 3, 16, 16), &Device::Cpu).unwrap();
        let y = warp_homography(&x, &Homography::identity()).unwrap();
        let d: f32 = (x - y).unwrap().abs().unwrap().max_all().unwrap().to_scalar().unwrap();
        assert!(d < 1e-5);
    }

    #[test]
    fn collinear_corners_rejected() {
        // TL, TR and BR all land on y = x - 0.5
        let offsets = [[0.25, -0.25], [-0.25, 0.25], [0.25, -0.25], [0.0, 0.0]];
        let x = Tensor::zeros((1, 3, 16, 16), DType::F32, &Device::Cpu).unwrap();
        match perspective_warp(&x, &offsets) {
            Err(Error::DegenerateCorners { corner }) => assert_eq!(corner, 1),
            other => panic!("expected degeneracy, got {other:?}"),
        }
    }

    #[test]
    fn oversized_offset_rejected() {
        let x = Tensor::zeros((1, 3, 16, 16), DType::F32, &Device::Cpu).unwrap();
        let offsets = [[0.3, 0.0], [0.0; 2], [0.0; 2], [0.0; 2]];
        assert!(perspective_warp(&x, &offsets).is_err());
    }
}
