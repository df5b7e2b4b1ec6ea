//! Python bindings: images cross the boundary as `uint8` arrays of shape
//! `(H, W, 3)`; configs travel as TOML text.

use std::path::PathBuf;

use candle_core::{DType, Device};
use image::RgbImage;
use numpy::ndarray::Array3;
use numpy::{IntoPyArray, PyArray1, PyArray3, PyReadonlyArray3, PyUntypedArrayMethods};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use s2r_core::config::PipelineVariant;
use s2r_core::dataset::load_unpaired_dataset;
use s2r_core::image::ImageTensor;
use s2r_core::report::{evaluate_codec, EvalChannel};
use s2r_core::rng::{SeedStreams, Stream};
use s2r_core::simnoise::{self, NoiseOperatorPair};
use s2r_core::train::{self, LoadedCodec, NoiseChain, RunOptions};
use s2r_core::translator::{GeneratorNet, LatentCode};
use s2r_core::watermark;
use s2r_core::{metrics, NoisePipelineConfig, RunConfig, WatermarkMessage};

create_exception!(s2r, S2rError, PyException);

fn err(e: s2r_core::Error) -> PyErr {
    S2rError::new_err(format!("{}: {e}", e.kind()))
}

fn to_image(a: &PyReadonlyArray3<'_, u8>) -> PyResult<ImageTensor> {
    let shape = a.shape();
    let pixels: Vec<u8> = a.as_array().iter().copied().collect();
    ImageTensor::from_u8(&pixels, shape[0], shape[1], shape[2]).map_err(err)
}

fn to_rgb(a: &PyReadonlyArray3<'_, u8>) -> PyResult<RgbImage> {
    let shape = a.shape();
    if shape[2] != 3 {
        return Err(S2rError::new_err(format!("shape: expected (H, W, 3), got {shape:?}")));
    }
    let pixels: Vec<u8> = a.as_array().iter().copied().collect();
    Ok(RgbImage::from_raw(shape[1] as u32, shape[0] as u32, pixels).expect("buffer matches shape"))
}

fn from_parts<'py>(py: Python<'py>, pixels: Vec<u8>, h: usize, w: usize, c: usize) -> Bound<'py, PyArray3<u8>> {
    Array3::from_shape_vec((h, w, c), pixels)
        .expect("buffer matches shape")
        .into_pyarray(py)
}

fn from_image<'py>(py: Python<'py>, img: &ImageTensor) -> Bound<'py, PyArray3<u8>> {
    from_parts(py, img.to_u8(), img.height(), img.width(), img.channels())
}

fn pipeline(name: &str) -> PyResult<NoisePipelineConfig> {
    let variant: PipelineVariant = serde_json::from_value(serde_json::Value::String(name.into()))
        .map_err(|_| S2rError::new_err(format!("config: unknown pipeline {name:?}")))?;
    NoisePipelineConfig::preset(variant).map_err(err)
}

fn config(toml_text: Option<&str>) -> PyResult<RunConfig> {
    let cfg = match toml_text {
        Some(t) => RunConfig::from_toml_str(t).map_err(err)?,
        None => RunConfig::desk_scale(),
    };
    cfg.validate().map_err(err)?;
    Ok(cfg)
}

/// Maps 8-bit values to [-1, 1] floats.
#[pyfunction]
fn normalize<'py>(py: Python<'py>, image: PyReadonlyArray3<'py, u8>) -> Bound<'py, PyArray3<f32>> {
    image.as_array().mapv(|v| s2r_core::image::normalize_value(v as f32)).into_pyarray(py)
}

/// Bit error rate in percent between two equal-length bit lists.
#[pyfunction]
fn ber(a: Vec<u8>, b: Vec<u8>) -> PyResult<f64> {
    let a = WatermarkMessage::new(a).map_err(err)?;
    let b = WatermarkMessage::new(b).map_err(err)?;
    s2r_core::ber(&a, &b).map_err(err)
}

#[pyfunction]
fn psnr(a: PyReadonlyArray3<'_, u8>, b: PyReadonlyArray3<'_, u8>) -> PyResult<f64> {
    metrics::psnr(&to_image(&a)?, &to_image(&b)?).map_err(err)
}

#[pyfunction]
fn ssim(a: PyReadonlyArray3<'_, u8>, b: PyReadonlyArray3<'_, u8>) -> PyResult<f64> {
    metrics::ssim(&to_image(&a)?, &to_image(&b)?).map_err(err)
}

/// Histogram distance between two image sets.
#[pyfunction]
fn hist_compare(a: Vec<PyReadonlyArray3<'_, u8>>, b: Vec<PyReadonlyArray3<'_, u8>>) -> PyResult<f64> {
    let a = a.iter().map(to_image).collect::<PyResult<Vec<_>>>()?;
    let b = b.iter().map(to_image).collect::<PyResult<Vec<_>>>()?;
    Ok(metrics::hist_compare(&a, &b).map_err(err)?.distance)
}

/// Runs the simulated distortion `T` (a named preset) on one image.
#[pyfunction]
#[pyo3(signature = (image, pipeline_name = "pimog_like", seed = 0))]
fn apply_t<'py>(
    py: Python<'py>,
    image: PyReadonlyArray3<'py, u8>,
    pipeline_name: &str,
    seed: u64,
) -> PyResult<Bound<'py, PyArray3<u8>>> {
    let out = simnoise::apply_t_image(&to_image(&image)?, &pipeline(pipeline_name)?, seed).map_err(err)?;
    Ok(from_image(py, &out))
}

/// Composes scalar operator pairs `(k1, n1)` then `(k2, n2)`.
#[pyfunction]
fn compose_pairs(p1: (f64, f64), p2: (f64, f64)) -> PyResult<(f64, f64)> {
    let a = NoiseOperatorPair::scalar(p1.0, p1.1).map_err(err)?;
    let b = NoiseOperatorPair::scalar(p2.0, p2.1).map_err(err)?;
    let c = simnoise::compose_operator_pairs(&a, &b).map_err(err)?;
    let get = |t: &candle_core::Tensor| t.to_scalar::<f64>().map_err(|e| err(e.into()));
    Ok((get(&c.k)?, get(&c.n)?))
}

/// Hex and bit views of a watermark message.
#[pyclass(name = "Message", from_py_object)]
#[derive(Clone)]
struct PyMessage {
    inner: WatermarkMessage,
}

#[pymethods]
impl PyMessage {
    #[new]
    fn new(bits: Vec<u8>) -> PyResult<Self> {
        Ok(Self { inner: WatermarkMessage::new(bits).map_err(err)? })
    }

    #[staticmethod]
    fn from_hex(hex: &str, length: usize) -> PyResult<Self> {
        Ok(Self { inner: WatermarkMessage::from_hex(hex, length).map_err(err)? })
    }

    #[staticmethod]
    fn random(length: usize, seed: u64) -> Self {
        let mut rng = SeedStreams::new(seed).rng(Stream::Messages, 0);
        Self { inner: WatermarkMessage::random(length, &mut rng) }
    }

    #[getter]
    fn bits(&self) -> Vec<u8> {
        self.inner.bits().to_vec()
    }

    #[getter]
    fn hex(&self) -> String {
        self.inner.to_hex()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Message('{}')", self.inner.to_bitstring())
    }
}

/// A trained encoder/decoder pair loaded from a codec checkpoint.
#[pyclass(name = "Codec")]
struct PyCodec {
    inner: LoadedCodec,
}

#[pymethods]
impl PyCodec {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: train::load_codec(&path).map_err(err)? })
    }

    #[getter]
    fn message_length(&self) -> usize {
        self.inner.encoder.message_length()
    }

    #[getter]
    fn chain(&self) -> String {
        self.inner.chain().to_owned()
    }

    /// Watermarks an image of any size.
    fn embed<'py>(
        &self,
        py: Python<'py>,
        image: PyReadonlyArray3<'py, u8>,
        message: &PyMessage,
    ) -> PyResult<Bound<'py, PyArray3<u8>>> {
        let out = watermark::resolution_scale_embed(&to_rgb(&image)?, &message.inner, &self.inner.encoder)
            .map_err(err)?;
        let (w, h) = out.dimensions();
        Ok(from_parts(py, out.into_raw(), h as usize, w as usize, 3))
    }

    /// Decodes after resizing to the encoder's native size; returns the
    /// message and the per-bit scores.
    fn extract<'py>(
        &self,
        py: Python<'py>,
        image: PyReadonlyArray3<'py, u8>,
    ) -> PyResult<(PyMessage, Bound<'py, PyArray1<f32>>)> {
        let (u, v) = self.inner.encoder.resolution();
        let mut img = to_image(&image)?;
        if (img.height(), img.width()) != (u, v) {
            img = img.resize(u, v).map_err(err)?;
        }
        let (scores, msg) = watermark::decode(&img, &self.inner.decoder).map_err(err)?;
        Ok((PyMessage { inner: msg }, scores.into_pyarray(py)))
    }

    /// Mean BER (percent) over `images` after the named channel:
    /// identity, oracle or t.
    #[pyo3(signature = (images, channel = "oracle", seed = 0))]
    fn evaluate_ber(&self, images: Vec<PyReadonlyArray3<'_, u8>>, channel: &str, seed: u64) -> PyResult<f64> {
        let covers = images.iter().map(to_image).collect::<PyResult<Vec<_>>>()?;
        let channel = EvalChannel::from_name(channel, &self.inner.manifest.config).map_err(err)?;
        let rows = evaluate_codec(&self.inner, &covers, &channel, seed).map_err(err)?;
        Ok(rows.iter().map(|r| r.ber_percent).sum::<f64>() / rows.len() as f64)
    }
}

/// A frozen translator `G` loaded from a translator checkpoint.
#[pyclass(name = "Generator")]
struct PyGenerator {
    net: GeneratorNet,
    config: RunConfig,
}

#[pymethods]
impl PyGenerator {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (net, manifest) = train::load_generator(&path).map_err(err)?;
        Ok(Self { net, config: manifest.config })
    }

    /// Translates one image with the latent code drawn from `seed`.
    #[pyo3(signature = (image, seed = 0))]
    fn translate<'py>(
        &self,
        py: Python<'py>,
        image: PyReadonlyArray3<'py, u8>,
        seed: u64,
    ) -> PyResult<Bound<'py, PyArray3<u8>>> {
        let img = to_image(&image)?;
        let dev = Device::Cpu;
        let x = img.to_tensor(&dev, DType::F32).map_err(err)?;
        let z = LatentCode::sample(
            &mut SeedStreams::new(seed).rng(Stream::LatentCodes, 0),
            1,
            &self.config.generator,
            self.config.scales_k,
            (img.height(), img.width()),
            &dev,
            DType::F32,
        )
        .map_err(err)?;
        let y = self.net.translate(&x, &z).map_err(err)?;
        Ok(from_image(py, &ImageTensor::from_tensor(&y).map_err(err)?))
    }
}

/// The desk-scale default config as TOML text.
#[pyfunction]
fn desk_config() -> PyResult<String> {
    RunConfig::desk_scale().to_toml_string().map_err(err)
}

/// Stable hash of a TOML config.
#[pyfunction]
fn config_hash(config_toml: &str) -> PyResult<String> {
    Ok(config(Some(config_toml))?.hash())
}

/// Unsupervised S2R training on `<data>/sharp` and `<data>/real_sc`;
/// returns the final checkpoint directory.
#[pyfunction]
#[pyo3(signature = (data, out, steps, config_toml = None))]
fn train_s2r(py: Python<'_>, data: PathBuf, out: PathBuf, steps: usize, config_toml: Option<&str>) -> PyResult<PathBuf> {
    let cfg = config(config_toml)?;
    py.detach(|| {
        let dataset = load_unpaired_dataset(&data.join("sharp"), &data.join("real_sc"), cfg.train_resolution)?;
        Ok(train::train_s2r(&dataset, &cfg, &RunOptions::new(out, steps))?.final_checkpoint)
    })
    .map_err(err)
}

/// Codec training on a directory of covers through the named chain.
#[pyfunction]
#[pyo3(signature = (covers, out, steps, chain = "identity", generator = None, config_toml = None))]
fn train_watermark(
    py: Python<'_>,
    covers: PathBuf,
    out: PathBuf,
    steps: usize,
    chain: &str,
    generator: Option<PathBuf>,
    config_toml: Option<&str>,
) -> PyResult<PathBuf> {
    let cfg = config(config_toml)?;
    py.detach(|| {
        let images: Vec<ImageTensor> = s2r_core::dataset::load_image_dir(&covers, cfg.train_resolution)?
            .into_iter()
            .map(|(_, i)| i)
            .collect();
        let chain = NoiseChain::from_name(chain, &cfg, generator.as_deref())?;
        Ok(train::train_watermark(&images, chain, &cfg, &RunOptions::new(out, steps))?.final_checkpoint)
    })
    .map_err(err)
}

#[pymodule]
fn s2r(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("S2rError", m.py().get_type::<S2rError>())?;
    m.add_function(wrap_pyfunction!(normalize, m)?)?;
    m.add_function(wrap_pyfunction!(ber, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(hist_compare, m)?)?;
    m.add_function(wrap_pyfunction!(apply_t, m)?)?;
    m.add_function(wrap_pyfunction!(compose_pairs, m)?)?;
    m.add_function(wrap_pyfunction!(desk_config, m)?)?;
    m.add_function(wrap_pyfunction!(config_hash, m)?)?;
    m.add_function(wrap_pyfunction!(train_s2r, m)?)?;
    m.add_function(wrap_pyfunction!(train_watermark, m)?)?;
    m.add_class::<PyMessage>()?;
    m.add_class::<PyCodec>()?;
    m.add_class::<PyGenerator>()?;
    Ok(())
}
