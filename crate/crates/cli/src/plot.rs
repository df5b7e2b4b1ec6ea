//! Static SVG line plots of histogram-curve and loss CSVs.

use std::path::Path;

use anyhow::{bail, Context, Result};
use plotters::prelude::*;

const COLORS: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(214, 39, 40),
    RGBColor(44, 160, 44),
    RGBColor(255, 127, 14),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
];

/// First column is the x axis, every other column a series.
pub fn plot_csv(csv_path: &Path, out: &Path, title: Option<&str>) -> Result<()> {
    let mut reader = csv::Reader::from_path(csv_path).with_context(|| format!("reading {}", csv_path.display()))?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    if header.len() < 2 {
        bail!("{} needs an x column and at least one series", csv_path.display());
    }
    let mut xs = Vec::new();
    let mut series: Vec<Vec<f64>> = vec![Vec::new(); header.len() - 1];
    for rec in reader.records() {
        let rec = rec?;
        let parse = |s: &str| s.trim().parse::<f64>().with_context(|| format!("not a number: {s:?}"));
        xs.push(parse(&rec[0])?);
        for (i, col) in series.iter_mut().enumerate() {
            col.push(parse(&rec[i + 1])?);
        }
    }
    if xs.is_empty() {
        bail!("{} has no data rows", csv_path.display());
    }
    let finite = |v: &&f64| v.is_finite();
    let (x_lo, x_hi) = bounds(xs.iter().filter(finite).copied());
    let (y_lo, y_hi) = bounds(series.iter().flatten().filter(finite).copied());

    let root = SVGBackend::new(out, (800, 500)).into_drawing_area();
    root.fill(&WHITE)?;
    let default_title = csv_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut chart = ChartBuilder::on(&root)
        .caption(title.unwrap_or(&default_title), ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(70)
        .build_cartesian_2d(x_lo..x_hi, y_lo..y_hi)?;
    chart
        .configure_mesh()
        .x_desc(header[0].as_str())
        .draw()?;
    for (i, col) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        chart
            .draw_series(LineSeries::new(
                xs.iter().zip(col).filter(|(x, y)| x.is_finite() && y.is_finite()).map(|(x, y)| (*x, *y)),
                color.stroke_width(2),
            ))?
            .label(header[i + 1].as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()?;
    root.present()?;
    println!("{}", serde_json::json!({ "out": out }));
    Ok(())
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = (hi - lo) * 0.05;
    (lo - pad, hi + pad)
}
