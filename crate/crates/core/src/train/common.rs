use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};

use crate::error::{Error, Result};
use crate::image::{stack, ImageTensor};

pub const LOSS_CSV: &str = "losses.csv";
/// Losses beyond this magnitude abort the run.
pub const DIVERGENCE_LIMIT: f64 = 1e4;

/// One line of a loss CSV: the step followed by named values.
pub trait LossRow {
    fn header() -> &'static [&'static str];
    fn step(&self) -> usize;
    fn values(&self) -> Vec<f64>;
}

/// Appends rows to `<dir>/losses.csv`, keeping earlier rows from before a
/// resume point so resumed and uninterrupted runs produce the same file.
pub struct LossCsv {
    path: PathBuf,
    writer: csv::Writer<std::fs::File>,
}

impl LossCsv {
    pub fn create<R: LossRow>(dir: &Path, keep_before: usize) -> Result<Self> {
        let path = dir.join(LOSS_CSV);
        let kept: Vec<csv::StringRecord> = if keep_before > 0 && path.exists() {
            let mut r = csv::Reader::from_path(&path)?;
            r.records()
                .filter_map(|rec| rec.ok())
                .filter(|rec| {
                    rec.get(0)
                        .and_then(|s| s.parse::<usize>().ok())
                        .is_some_and(|s| s < keep_before)
                })
                .collect()
        } else {
            Vec::new()
        };
        let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut writer = csv::Writer::from_writer(file);
        let mut header = vec!["step"];
        header.extend_from_slice(R::header());
        writer.write_record(&header)?;
        for rec in &kept {
            writer.write_record(rec)?;
        }
        Ok(Self { path, writer })
    }

    pub fn push<R: LossRow>(&mut self, row: &R) -> Result<()> {
        let mut rec = vec![row.step().to_string()];
        rec.extend(row.values().iter().map(|v| format!("{v:.9e}")));
        self.writer.write_record(&rec)?;
        self.writer.flush().map_err(|e| Error::io(&self.path, e))?;
        Ok(())
    }
}

/// Reads a loss CSV into `(header, rows)`.
pub fn read_loss_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.iter().map(str::to_owned).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let vals = rec
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|e| Error::Serde(format!("{}: bad number {s:?}: {e}", path.display())))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(vals);
    }
    Ok((header, rows))
}

/// Errors out when any logged value is non-finite or beyond the limit.
pub fn guard<R: LossRow>(step: usize, row: &R, last_checkpoint: Option<PathBuf>) -> Result<()> {
    for (name, v) in R::header().iter().zip(row.values()) {
        if !v.is_finite() || v.abs() > DIVERGENCE_LIMIT {
            return Err(Error::Diverged {
                step,
                reason: format!("{name} = {v}"),
                last_checkpoint,
            });
        }
    }
    Ok(())
}

/// A whole image set as one `(N, C, H, W)` tensor, for cheap batch gathers.
pub struct ImageBank {
    all: Tensor,
}

impl ImageBank {
    pub fn new(images: &[ImageTensor], device: &Device) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::Config("image set is empty".into()));
        }
        Ok(Self {
            all: stack(images, device, DType::F32)?,
        })
    }

    pub fn len(&self) -> usize {
        self.all.dim(0).unwrap_or(0)
    }

    pub fn gather(&self, indices: &[usize]) -> Result<Tensor> {
        let idx: Vec<u32> = indices.iter().map(|&i| i as u32).collect();
        let idx = Tensor::from_vec(idx, indices.len(), self.all.device())?;
        Ok(self.all.index_select(&idx, 0)?)
    }
}

/// Every optimizer step must move the network it trains.
pub fn check_moved(what: &str, step: usize, norms: &[(String, f64)]) -> Result<()> {
    if norms.iter().all(|(_, n)| *n == 0.0) {
        return Err(Error::Contract(format!(
            "{what} optimizer step {step} left every parameter unchanged"
        )));
    }
    Ok(())
}
