mod common;

use candle_core::{Device, Tensor};
use common::{max_abs_diff, rng, uniform};
use rand::Rng;
use s2r_core::simnoise::{
    compose_operator_pairs, perspective::corners_with_offsets, perspective::UNIT_CORNERS, warp_homography,
    Homography, NoiseOperatorPair,
};

fn smooth_image(side: usize) -> Tensor {
    let mut v = Vec::with_capacity(3 * side * side);
    for c in 0..3 {
        for i in 0..side {
            for j in 0..side {
                let (u, w) = (j as f64 / side as f64, i as f64 / side as f64);
                v.push(0.6 * (3.0 * u + c as f64).sin() * (2.0 * w).cos());
            }
        }
    }
    Tensor::from_vec(v, (1, 3, side, side), &Device::Cpu).unwrap()
}

#[test]
fn composition_is_associative() {
    let mut r = rng(9);
    let x = Tensor::new(0.37f64, &Device::Cpu).unwrap();
    for _ in 0..500 {
        let mut pair = || NoiseOperatorPair::scalar(r.random_range(-2.0..2.0), r.random_range(-1.0..1.0)).unwrap();
        let (p1, p2, p3) = (pair(), pair(), pair());
        let left = compose_operator_pairs(&compose_operator_pairs(&p1, &p2).unwrap(), &p3).unwrap();
        let right = compose_operator_pairs(&p1, &compose_operator_pairs(&p2, &p3).unwrap()).unwrap();
        assert!(max_abs_diff(&left.apply(&x).unwrap(), &right.apply(&x).unwrap()) <= 1e-9);
    }
}

#[test]
fn per_pixel_composition_matches_staging() {
    let shape = [2, 3, 5, 7];
    let x = uniform(&shape, -1.0, 1.0, 1);
    let p1 = NoiseOperatorPair::new(uniform(&shape, 0.5, 1.5, 2), uniform(&shape, -0.1, 0.1, 3)).unwrap();
    let p2 = NoiseOperatorPair::new(uniform(&[1, 3, 5, 7], 0.5, 1.5, 4), Tensor::new(0.05f64, &Device::Cpu).unwrap()).unwrap();
    let staged = p2.apply(&p1.apply(&x).unwrap()).unwrap();
    let composed = compose_operator_pairs(&p1, &p2).unwrap().apply(&x).unwrap();
    assert!(max_abs_diff(&staged, &composed) <= 1e-12);
}

#[test]
fn warp_then_inverse_recovers_interior() {
    let side = 64;
    let x = smooth_image(side);
    let offsets = [[0.06, -0.04], [-0.05, 0.03], [0.04, 0.06], [-0.03, -0.05]];
    let h = Homography::fit(&UNIT_CORNERS, &corners_with_offsets(&offsets)).unwrap();
    let back = warp_homography(&warp_homography(&x, &h).unwrap(), &h.inverse().unwrap()).unwrap();
    let lo = side / 10;
    let n = side - 2 * lo;
    let crop = |t: &Tensor| t.narrow(2, lo, n).unwrap().narrow(3, lo, n).unwrap();
    let diff = (crop(&back) - crop(&x)).unwrap().abs().unwrap().mean_all().unwrap().to_scalar::<f64>().unwrap();
    assert!(diff < 0.02, "mean abs diff {diff}");
}
