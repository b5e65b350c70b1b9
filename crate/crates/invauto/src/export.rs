//! Heatmaps and CSV tables for the diagnostics.

use std::path::Path;

use invauto_core::linearize::{CosineStats, DeviationStats, NormStats};
use invauto_core::{Real, Tensor};

use crate::error::{write, IoError, Result};

/// Rank-2 matrix as a `P5` image, min-max scaled onto `0..=255`. A constant
/// matrix maps to all zeros.
pub fn heatmap_pgm<T: Real>(m: &Tensor<T>) -> Result<Vec<u8>> {
    let &[rows, cols] = m.shape() else {
        return Err(IoError::Format(format!("heatmap needs a matrix, got shape {:?}", m.shape())));
    };
    if rows == 0 || cols == 0 {
        return Err(IoError::Format("heatmap of an empty matrix".into()));
    }
    let vals: Vec<f64> = m.data().iter().map(|v| v.as_f64()).collect();
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(IoError::Format("heatmap entries must be finite".into()));
    }
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(vals.iter().map(|&v| if span > 0.0 { ((v - lo) / span * 255.0).round() as u8 } else { 0 }));
    Ok(out)
}

pub fn export_heatmap<T: Real>(m: &Tensor<T>, path: &Path) -> Result<()> {
    write(path, &heatmap_pgm(m)?)
}

/// CSV with one header row. Floats use the shortest representation that
/// parses back to the same value.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w.into_inner().map_err(|e| IoError::Format(e.to_string()))?;
    write(path, &bytes)
}

/// Header and rows of a CSV file.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.iter().map(str::to_owned).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec?.iter().map(str::to_owned).collect());
    }
    Ok((header, rows))
}

pub fn num(v: f64) -> String {
    format!("{v:?}")
}

/// Matrix as CSV: columns `c0..c{n-1}`, one row per matrix row.
pub fn export_matrix_csv<T: Real>(m: &Tensor<T>, path: &Path) -> Result<()> {
    let &[rows, cols] = m.shape() else {
        return Err(IoError::Format(format!("expected a matrix, got shape {:?}", m.shape())));
    };
    let header: Vec<String> = (0..cols).map(|j| format!("c{j}")).collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let d = m.data();
    let body = (0..rows).map(|i| d[i * cols..(i + 1) * cols].iter().map(|v| num(v.as_f64())).collect()).collect::<Vec<_>>();
    write_csv(path, &header, &body)
}

pub fn read_matrix_csv(path: &Path) -> Result<Tensor<f64>> {
    let (header, rows) = read_csv(path)?;
    let mut data = Vec::with_capacity(rows.len() * header.len());
    for r in &rows {
        if r.len() != header.len() {
            return Err(IoError::Format(format!("row of {} fields under a {}-column header", r.len(), header.len())));
        }
        for f in r {
            data.push(f.parse::<f64>().map_err(|_| IoError::Format(format!("not a number: {f:?}")))?);
        }
    }
    Ok(Tensor::new(&[rows.len(), header.len()], data)?)
}

pub fn export_deviation_csv(label: &str, s: &DeviationStats, path: &Path) -> Result<()> {
    write_csv(
        path,
        &["model", "mse_total", "mse_diag", "mse_offdiag", "ratio_offdiag_over_diag"],
        &[vec![
            label.into(),
            num(s.mse_total),
            num(s.mse_diag),
            num(s.mse_offdiag),
            num(s.ratio_offdiag_over_diag),
        ]],
    )
}

/// One row per histogram bin over `[-1, 1]`.
pub fn export_histogram_csv(s: &CosineStats, path: &Path) -> Result<()> {
    let bins = s.histogram.len() as f64;
    let rows = s
        .histogram
        .iter()
        .enumerate()
        .map(|(i, c)| vec![num(-1.0 + 2.0 * i as f64 / bins), num(-1.0 + 2.0 * (i + 1) as f64 / bins), c.to_string()])
        .collect::<Vec<_>>();
    write_csv(path, &["lo", "hi", "count"], &rows)
}

/// Summary of the row statistics of `E`.
pub fn export_row_stats_csv(label: &str, c: &CosineStats, n: &NormStats, path: &Path) -> Result<()> {
    write_csv(
        path,
        &["model", "cosine_mean", "cosine_std", "pairs", "norm_mean", "norm_std"],
        &[vec![label.into(), num(c.mean), num(c.std), c.pairs.to_string(), num(n.mean), num(n.std)]],
    )
}

/// One row per row of `E`: its index and l2 norm.
pub fn export_row_norms_csv(n: &NormStats, path: &Path) -> Result<()> {
    let rows = n.norms.iter().enumerate().map(|(i, v)| vec![i.to_string(), num(*v)]).collect::<Vec<_>>();
    write_csv(path, &["row", "norm"], &rows)
}
