//! Adam with serializable state, so a resumed run continues bit-identically.

use std::collections::HashMap;
use std::path::Path;

use candle_core::backprop::GradStore;
use candle_core::{DType, Device, Tensor, Var};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

struct Slot {
    name: String,
    var: Var,
    m: Tensor,
    v: Tensor,
}

pub struct Adam {
    params: AdamParams,
    slots: Vec<Slot>,
    step: u64,
}

/// L2 norm of the change each named parameter received in the last step.
pub type UpdateNorms = Vec<(String, f64)>;

impl Adam {
    pub fn new(vars: Vec<(String, Var)>, params: AdamParams) -> Result<Self> {
        let slots = vars
            .into_iter()
            .map(|(name, var)| {
                let m = var.as_tensor().zeros_like()?;
                let v = var.as_tensor().zeros_like()?;
                Ok(Slot { name, var, m, v })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            params,
            slots,
            step: 0,
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.params.lr = lr;
    }

    /// One update from `grads`. Parameters without a gradient are left alone.
    pub fn step(&mut self, grads: &GradStore) -> Result<UpdateNorms> {
        self.step += 1;
        let AdamParams {
            lr,
            beta1,
            beta2,
            eps,
        } = self.params;
        let t = self.step as i32;
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);
        let mut norms = Vec::with_capacity(self.slots.len());
        for slot in &mut self.slots {
            let Some(g) = grads.get(slot.var.as_tensor()) else {
                norms.push((slot.name.clone(), 0.0));
                continue;
            };
            let g = g.detach();
            slot.m = ((&slot.m * beta1)? + (&g * (1.0 - beta1))?)?;
            slot.v = ((&slot.v * beta2)? + (g.sqr()? * (1.0 - beta2))?)?;
            let m_hat = (&slot.m / bias1)?;
            let v_hat = (&slot.v / bias2)?;
            let update = ((m_hat / (v_hat.sqrt()? + eps)?)? * lr)?;
            let before = slot.var.as_tensor().copy()?;
            slot.var.set(&(&before - &update)?)?;
            let delta = (slot.var.as_tensor() - &before)?
                .sqr()?
                .sum_all()?
                .to_dtype(DType::F64)?
                .to_scalar::<f64>()?
                .sqrt();
            norms.push((slot.name.clone(), delta));
        }
        Ok(norms)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut map: HashMap<String, Tensor> = HashMap::new();
        for s in &self.slots {
            map.insert(format!("m.{}", s.name), s.m.clone());
            map.insert(format!("v.{}", s.name), s.v.clone());
        }
        map.insert(
            "step".into(),
            Tensor::new(&[self.step as f64], &Device::Cpu)?,
        );
        candle_core::safetensors::save(&map, path)?;
        Ok(())
    }

    pub fn load(&mut self, path: &Path) -> Result<()> {
        let map = candle_core::safetensors::load(path, &Device::Cpu)?;
        let step = map
            .get("step")
            .ok_or_else(|| Error::Checkpoint("optimizer state lacks a step counter".into()))?
            .to_vec1::<f64>()?[0];
        for s in &mut self.slots {
            let get = |k: String| {
                map.get(&k)
                    .cloned()
                    .ok_or_else(|| Error::Checkpoint(format!("optimizer state lacks {k}")))
            };
            let m = get(format!("m.{}", s.name))?;
            let v = get(format!("v.{}", s.name))?;
            if m.dims() != s.var.dims() || v.dims() != s.var.dims() {
                return Err(Error::Checkpoint(format!(
                    "optimizer state for {} has the wrong shape",
                    s.name
                )));
            }
            s.m = m.to_dtype(s.var.dtype())?;
            s.v = v.to_dtype(s.var.dtype())?;
        }
        self.step = step as u64;
        Ok(())
    }
}
