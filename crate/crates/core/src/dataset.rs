//! Directory-backed unpaired datasets, deterministic batch ordering and a
//! procedural image generator for desk-scale runs.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::rng::{SeedStreams, Stream};

/// Subdirectory names of the on-disk layout.
pub const SHARP_DIR: &str = "sharp";
pub const REAL_SC_DIR: &str = "real_sc";

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "bmp", "tif", "tiff", "webp"];

/// Two independent image collections with no index correspondence.
#[derive(Clone, Debug)]
pub struct UnpairedDataset {
    pub sharp_set: Vec<ImageTensor>,
    pub real_sc_set: Vec<ImageTensor>,
    pub resolution: usize,
}

impl UnpairedDataset {
    pub fn new(
        sharp_set: Vec<ImageTensor>,
        real_sc_set: Vec<ImageTensor>,
        resolution: usize,
    ) -> Result<Self> {
        if sharp_set.is_empty() || real_sc_set.is_empty() {
            return Err(Error::Config("both image sets must be non-empty".into()));
        }
        for im in sharp_set.iter().chain(&real_sc_set) {
            if im.height() != resolution || im.width() != resolution {
                return Err(Error::Shape(format!(
                    "dataset image is {}x{}, expected {resolution}x{resolution}",
                    im.height(),
                    im.width()
                )));
            }
        }
        Ok(Self {
            sharp_set,
            real_sc_set,
            resolution,
        })
    }
}

/// Center-crops to a square, then resizes to `resolution`.
pub fn fit_square(image: &ImageTensor, resolution: usize) -> Result<ImageTensor> {
    let (h, w) = (image.height(), image.width());
    let side = h.min(w);
    let cropped = if h == w {
        image.clone()
    } else {
        let (y0, x0) = ((h - side) / 2, (w - side) / 2);
        let c = image.channels();
        let mut data = Vec::with_capacity(side * side * c);
        for y in y0..y0 + side {
            let row = (y * w + x0) * c;
            data.extend_from_slice(&image.data()[row..row + side * c]);
        }
        ImageTensor::new(data, side, side, c)?
    };
    cropped.resize(resolution, resolution)
}

/// Image files directly inside `dir`, sorted by file name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::Config(format!(
            "image directory {} does not exist",
            dir.display()
        )));
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Loads every decodable image in `dir`, fitted to `resolution`. Files that
/// fail to decode are skipped with a warning; an empty result is an error.
pub fn load_image_dir(dir: &Path, resolution: usize) -> Result<Vec<(String, ImageTensor)>> {
    let mut out = Vec::new();
    for path in list_images(dir)? {
        match ImageTensor::load_png(&path) {
            Ok(im) => {
                let name = path
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default();
                out.push((name, fit_square(&im, resolution)?));
            }
            Err(e) => log::warn!("skipping {}: {e}", path.display()),
        }
    }
    if out.is_empty() {
        return Err(Error::Config(format!(
            "no decodable images in {}",
            dir.display()
        )));
    }
    Ok(out)
}

pub fn load_unpaired_dataset(
    sharp_dir: &Path,
    real_dir: &Path,
    resolution: usize,
) -> Result<UnpairedDataset> {
    let sharp = load_image_dir(sharp_dir, resolution)?;
    let real = load_image_dir(real_dir, resolution)?;
    UnpairedDataset::new(
        sharp.into_iter().map(|(_, im)| im).collect(),
        real.into_iter().map(|(_, im)| im).collect(),
        resolution,
    )
}

/// Writes images as `{prefix}{index:04}.png`.
pub fn write_image_dir(dir: &Path, prefix: &str, images: &[ImageTensor]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, im) in images.iter().enumerate() {
        im.save_png(&dir.join(format!("{prefix}{i:04}.png")))?;
    }
    Ok(())
}

/// Stateless epoch-shuffled index sequence: the indices for any step can be
/// produced without replaying earlier steps, so resumed runs and parallel
/// loaders see exactly the single-worker order.
#[derive(Clone, Debug)]
pub struct BatchOrder {
    streams: SeedStreams,
    label: String,
    len: usize,
    batch_size: usize,
}

impl BatchOrder {
    pub fn new(streams: SeedStreams, label: &str, len: usize, batch_size: usize) -> Self {
        assert!(len > 0 && batch_size > 0);
        Self {
            streams,
            label: format!("{}/{label}", Stream::DataOrder.name()),
            len,
            batch_size,
        }
    }

    fn permutation(&self, epoch: u64) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len).collect();
        idx.shuffle(&mut self.streams.rng_named(&self.label, epoch));
        idx
    }

    pub fn indices(&self, step: usize) -> Vec<usize> {
        let start = step * self.batch_size;
        let mut out = Vec::with_capacity(self.batch_size);
        let mut cached: Option<(u64, Vec<usize>)> = None;
        for pos in start..start + self.batch_size {
            let epoch = (pos / self.len) as u64;
            if cached.as_ref().map(|c| c.0) != Some(epoch) {
                cached = Some((epoch, self.permutation(epoch)));
            }
            out.push(cached.as_ref().unwrap().1[pos % self.len]);
        }
        out
    }

    pub fn batch<'a>(&self, step: usize, items: &'a [ImageTensor]) -> Vec<&'a ImageTensor> {
        self.indices(step).into_iter().map(|i| &items[i]).collect()
    }
}

/// Procedural "sharp" RGB images: smooth gradients, flat shapes and a
/// texture band, so histograms are spread over the whole intensity range.
pub fn synthetic_images(
    count: usize,
    resolution: usize,
    streams: SeedStreams,
    offset: u64,
) -> Result<Vec<ImageTensor>> {
    (0..count)
        .map(|i| synthetic_image(resolution, &mut streams.rng(Stream::Synthetic, offset + i as u64)))
        .collect()
}

fn synthetic_image(n: usize, rng: &mut impl Rng) -> Result<ImageTensor> {
    let mut px = vec![0f32; n * n * 3];
    let base: [f32; 3] = std::array::from_fn(|_| rng.random_range(-0.9..0.9));
    let grad: [[f32; 2]; 3] =
        std::array::from_fn(|_| [rng.random_range(-0.8..0.8), rng.random_range(-0.8..0.8)]);
    for y in 0..n {
        for x in 0..n {
            let (u, v) = (x as f32 / n as f32 - 0.5, y as f32 / n as f32 - 0.5);
            for c in 0..3 {
                px[(y * n + x) * 3 + c] = base[c] + grad[c][0] * u + grad[c][1] * v;
            }
        }
    }
    let shapes = rng.random_range(2..=4);
    for _ in 0..shapes {
        let color: [f32; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let cx = rng.random_range(0.0..n as f32);
        let cy = rng.random_range(0.0..n as f32);
        let r = rng.random_range(n as f32 * 0.1..n as f32 * 0.35);
        let round = rng.random_bool(0.5);
        for y in 0..n {
            for x in 0..n {
                let (dx, dy) = (x as f32 + 0.5 - cx, y as f32 + 0.5 - cy);
                let inside = if round {
                    dx * dx + dy * dy <= r * r
                } else {
                    dx.abs() <= r && dy.abs() <= r * 0.7
                };
                if inside {
                    px[(y * n + x) * 3..(y * n + x) * 3 + 3].copy_from_slice(&color);
                }
            }
        }
    }
    let freq = rng.random_range(2.0..6.0f32);
    let amp = rng.random_range(0.05..0.25f32);
    let phase = rng.random_range(0.0..std::f32::consts::TAU);
    for y in 0..n {
        for x in 0..n {
            let t = (std::f32::consts::TAU * freq * (x + y) as f32 / n as f32 + phase).sin() * amp;
            for c in 0..3 {
                let p = &mut px[(y * n + x) * 3 + c];
                *p = (*p + t).clamp(-1.0, 1.0);
            }
        }
    }
    ImageTensor::new(px, n, n, 3)
}
