//! Affine noise operators `y = k · x + n` and their composition law.
//!
//! Chaining a sharp-to-simulated operator with a simulated-to-real one gives
//! another affine operator whose gain is the product of gains and whose
//! offset is the second gain applied to the first offset plus the second
//! offset. This module makes that identity executable.

use candle_core::{Device, Shape, Tensor};

use crate::error::{Error, Result};

/// Multiplicative field `k` and additive field `n`; each is a scalar or a
/// per-pixel map broadcast against the image it acts on.
#[derive(Clone, Debug)]
pub struct NoiseOperatorPair {
    pub k: Tensor,
    pub n: Tensor,
}

fn broadcast_shape(a: &Shape, b: &Shape) -> Result<Shape> {
    a.broadcast_shape_binary_op(b, "noise-operator")
        .map_err(|_| Error::Shape(format!("fields {a:?} and {b:?} do not broadcast")))
}

impl NoiseOperatorPair {
    pub fn new(k: Tensor, n: Tensor) -> Result<Self> {
        broadcast_shape(k.shape(), n.shape())?;
        Ok(Self { k, n })
    }

    pub fn scalar(k: f64, n: f64) -> Result<Self> {
        let dev = Device::Cpu;
        Self::new(Tensor::new(k, &dev)?, Tensor::new(n, &dev)?)
    }

    pub fn identity() -> Self {
        Self::scalar(1.0, 0.0).expect("scalar tensors always construct")
    }

    /// `k · x + n`.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        broadcast_shape(self.k.shape(), x.shape())?;
        broadcast_shape(self.n.shape(), x.shape())?;
        Ok(x.broadcast_mul(&self.k)?.broadcast_add(&self.n)?)
    }

    /// The pair equivalent to applying `self` first and `then` second:
    /// `(k₂·k₁, k₂·n₁ + n₂)`.
    pub fn then(&self, then: &NoiseOperatorPair) -> Result<NoiseOperatorPair> {
        broadcast_shape(self.k.shape(), then.k.shape())?;
        broadcast_shape(self.n.shape(), then.k.shape())?;
        let k = then.k.broadcast_mul(&self.k)?;
        let n = then.k.broadcast_mul(&self.n)?.broadcast_add(&then.n)?;
        NoiseOperatorPair::new(k, n)
    }
}

/// `compose_operator_pairs(p1, p2)`: apply `p1`, then `p2`.
pub fn compose_operator_pairs(
    p1: &NoiseOperatorPair,
    p2: &NoiseOperatorPair,
) -> Result<NoiseOperatorPair> {
    p1.then(p2)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(t: &Tensor) -> f64 {
        t.to_scalar::<f64>().unwrap()
    }

    #[test]
    fn scalar_example() {
        let p1 = NoiseOperatorPair::scalar(2.0, 0.1).unwrap();
        let p2 = NoiseOperatorPair::scalar(1.5, 0.05).unwrap();
        let x = Tensor::new(0.3f64, &Device::Cpu).unwrap();
        let staged = p2.apply(&p1.apply(&x).unwrap()).unwrap();
        let composed = compose_operator_pairs(&p1, &p2).unwrap().apply(&x).unwrap();
        assert!((s(&staged) - 1.1).abs() < 1e-12);
        assert!((s(&composed) - 1.1).abs() < 1e-12);
    }

    #[test]
    fn identity_is_neutral_on_both_sides() {
        let p = NoiseOperatorPair::scalar(0.7, -0.2).unwrap();
        let id = NoiseOperatorPair::identity();
        for q in [p.then(&id).unwrap(), id.then(&p).unwrap()] {
            assert_eq!(s(&q.k), 0.7);
            assert_eq!(s(&q.n), -0.2);
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let dev = Device::Cpu;
        let a = NoiseOperatorPair::new(
            Tensor::ones((3, 4, 4), candle_core::DType::F64, &dev).unwrap(),
            Tensor::zeros((3, 4, 4), candle_core::DType::F64, &dev).unwrap(),
        )
        .unwrap();
        let b = NoiseOperatorPair::new(
            Tensor::ones((3, 5, 5), candle_core::DType::F64, &dev).unwrap(),
            Tensor::zeros((3, 5, 5), candle_core::DType::F64, &dev).unwrap(),
        )
        .unwrap();
        assert!(matches!(a.then(&b), Err(Error::Shape(_))));
    }

    #[test]
    fn noisy_sharp_input_expands_as_derived() {
        // y_u = k_cu k_sc x + k_cu k_sc n_s + k_cu n_sc + n_cu
        let dev = Device::Cpu;
        let x = Tensor::new(&[0.2f64, -0.4, 0.9], &dev).unwrap();
        let n_s = Tensor::new(&[0.01f64, -0.02, 0.03], &dev).unwrap();
        let sc = NoiseOperatorPair::new(
            Tensor::new(&[0.9f64, 1.1, 0.8], &dev).unwrap(),
            Tensor::new(&[0.05f64, 0.0, -0.1], &dev).unwrap(),
        )
        .unwrap();
        let cu = NoiseOperatorPair::scalar(1.2, -0.03).unwrap();
        let staged = cu.apply(&sc.apply(&(&x + &n_s).unwrap()).unwrap()).unwrap();
        let composed = sc.then(&cu).unwrap();
        let expanded = (composed.apply(&x).unwrap()
            + n_s.broadcast_mul(&composed.k).unwrap())
        .unwrap();
        let d: f64 = (staged - expanded).unwrap().abs().unwrap().max(0).unwrap().to_scalar().unwrap();
        assert!(d < 1e-12);
    }
}
