//! Checkpoint directories: one safetensors file per network plus a JSON
//! manifest carrying the run config, seed and step.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use candle_nn::{VarBuilder, VarMap};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "checkpoint.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    /// Generator (and, for unsupervised runs, critic) of the S2R phase.
    Translator,
    /// Watermark encoder and decoder.
    Codec,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub kind: CheckpointKind,
    pub step: usize,
    pub seed: u64,
    pub config_hash: String,
    pub config: RunConfig,
    /// Networks stored next to the manifest, by name.
    pub nets: Vec<String>,
    /// Free-form tags, e.g. the noise chain of a codec run.
    #[serde(default)]
    pub tags: HashMap<String, String>,
}

impl Manifest {
    pub fn new(kind: CheckpointKind, step: usize, config: &RunConfig) -> Result<Self> {
        Ok(Self {
            version: FORMAT_VERSION,
            kind,
            step,
            seed: config.seed,
            config_hash: config.hash(),
            config: config.clone(),
            nets: Vec::new(),
            tags: HashMap::new(),
        })
    }

    /// Short identifier for reports: kind, step and config hash prefix.
    pub fn id(&self) -> String {
        format!(
            "{}@{}#{}",
            serde_json::to_value(self.kind)
                .ok()
                .and_then(|v| v.as_str().map(str::to_owned))
                .unwrap_or_default(),
            self.step,
            &self.config_hash[..12.min(self.config_hash.len())]
        )
    }
}

fn net_path(dir: &Path, net: &str) -> PathBuf {
    dir.join(format!("{net}.safetensors"))
}

pub fn optimizer_path(dir: &Path, net: &str) -> PathBuf {
    dir.join(format!("{net}.adam.safetensors"))
}

/// Writes `nets` and the manifest into `dir`. The manifest is written last
/// and atomically, so a directory with a readable manifest is complete.
pub fn save(dir: &Path, manifest: &Manifest, nets: &[(&str, &VarMap)]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = manifest.clone();
    manifest.nets = nets.iter().map(|(n, _)| n.to_string()).collect();
    for (name, varmap) in nets {
        varmap.save(net_path(dir, name))?;
    }
    let tmp = dir.join(format!("{MANIFEST}.tmp"));
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    let dst = dir.join(MANIFEST);
    std::fs::rename(&tmp, &dst).map_err(|e| Error::io(&dst, e))?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported checkpoint version {}",
            dir.display(),
            manifest.version
        )));
    }
    Ok(manifest)
}

pub fn expect_kind(manifest: &Manifest, kind: CheckpointKind, dir: &Path) -> Result<()> {
    if manifest.kind != kind {
        return Err(Error::Checkpoint(format!(
            "{} holds a {:?} checkpoint, expected {:?}",
            dir.display(),
            manifest.kind,
            kind
        )));
    }
    Ok(())
}

fn load_tensors(dir: &Path, net: &str, manifest: &Manifest) -> Result<HashMap<String, Tensor>> {
    if !manifest.nets.iter().any(|n| n == net) {
        return Err(Error::Checkpoint(format!(
            "{} has no network named {net}",
            dir.display()
        )));
    }
    let path = net_path(dir, net);
    if !path.exists() {
        return Err(Error::Checkpoint(format!("missing {}", path.display())));
    }
    Ok(candle_core::safetensors::load(&path, &Device::Cpu)?)
}

/// Frozen weights: the builder hands out plain tensors, so nothing built
/// from it can receive gradients or be updated.
pub fn frozen_builder(
    dir: &Path,
    net: &str,
    manifest: &Manifest,
    dtype: DType,
    device: &Device,
) -> Result<VarBuilder<'static>> {
    let tensors = load_tensors(dir, net, manifest)?;
    Ok(VarBuilder::from_tensors(tensors, dtype, device))
}

/// Overwrites the variables of an already built `varmap` with stored values.
pub fn restore(dir: &Path, net: &str, manifest: &Manifest, varmap: &VarMap) -> Result<()> {
    let tensors = load_tensors(dir, net, manifest)?;
    let data = varmap.data().lock().expect("varmap lock poisoned");
    if data.len() != tensors.len() {
        return Err(Error::Checkpoint(format!(
            "{net}: checkpoint has {} tensors, network has {}",
            tensors.len(),
            data.len()
        )));
    }
    for (name, var) in data.iter() {
        let t = tensors
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("{net}: missing tensor {name}")))?;
        if t.dims() != var.dims() {
            return Err(Error::Checkpoint(format!("{net}: shape mismatch for {name}")));
        }
        var.set(&t.to_dtype(var.dtype())?.to_device(var.device())?)?;
    }
    Ok(())
}
