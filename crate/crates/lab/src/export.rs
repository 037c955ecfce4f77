//! CSV, JSON and Netpbm exports. Numbers use Rust's shortest round-trip
//! decimal form, '.' separators and '\n' line endings.

use std::fmt::Write as _;
use std::path::Path;

use duet_core::transforms::Image;
use duet_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, parse_err, LabResult};

pub const METRICS_HEADER: &str = "epoch,loss_total,loss_content,loss_group,lr,probe_acc";

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_content: f64,
    pub loss_group: f64,
    pub lr: f64,
    /// Empty in the file when no probe ran for the epoch.
    pub probe_acc: Option<f64>,
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        let probe = r.probe_acc.map(|p| p.to_string()).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.epoch, r.loss_total, r.loss_content, r.loss_group, r.lr, probe
        );
    }
    s
}

pub fn parse_metrics_csv(text: &str) -> LabResult<Vec<MetricsRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(parse_err("metrics csv", 0, "missing or unexpected header"));
    }
    let mut offset = METRICS_HEADER.len() + 1;
    let mut rows = Vec::new();
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        let bad = |_| parse_err("metrics csv", offset, format!("bad row '{line}'"));
        if f.len() != 6 {
            return Err(parse_err("metrics csv", offset, format!("expected 6 fields in '{line}'")));
        }
        rows.push(MetricsRow {
            epoch: f[0].parse().map_err(|_| parse_err("metrics csv", offset, "bad epoch"))?,
            loss_total: f[1].parse().map_err(bad)?,
            loss_content: f[2].parse().map_err(bad)?,
            loss_group: f[3].parse().map_err(bad)?,
            lr: f[4].parse().map_err(bad)?,
            probe_acc: if f[5].is_empty() { None } else { Some(f[5].parse().map_err(bad)?) },
        });
        offset += line.len() + 1;
    }
    Ok(rows)
}

pub fn write_text(path: &Path, text: &str) -> LabResult<()> {
    std::fs::write(path, text).map_err(io_err(path))
}

pub fn write_metrics(rows: &[MetricsRow], path: &Path) -> LabResult<()> {
    write_text(path, &metrics_csv(rows))
}

/// One row per matrix row, comma separated.
pub fn matrix_csv(m: &Tensor) -> String {
    let mut s = String::new();
    for r in 0..m.rows() {
        let row: Vec<String> = m.row(r).iter().map(f64::to_string).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

pub fn parse_matrix_csv(text: &str) -> LabResult<Tensor> {
    let mut rows = Vec::new();
    let mut offset = 0;
    for line in text.lines() {
        let row = line
            .split(',')
            .map(|v| v.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| parse_err("matrix csv", offset, format!("bad row '{line}'")))?;
        rows.push(row);
        offset += line.len() + 1;
    }
    Ok(Tensor::from_rows(&rows)?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixSidecar {
    pub spec: String,
    pub resolution: usize,
    pub n_images: usize,
}

/// Min-max normalize to 0..=255; a constant matrix maps to zeros.
pub fn to_gray_bytes(values: &[f64]) -> Vec<u8> {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    values
        .iter()
        .map(|v| {
            if span > 0.0 {
                ((v - lo) / span * 255.0).round() as u8
            } else {
                0
            }
        })
        .collect()
}

pub fn pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

pub fn ppm(width: usize, height: usize, rgb: &[u8]) -> Vec<u8> {
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    out
}

pub fn matrix_pgm(m: &Tensor) -> Vec<u8> {
    pgm(m.cols(), m.rows(), &to_gray_bytes(m.data()))
}

/// Export `m` as `<stem>.csv`, `<stem>.json` and `<stem>.pgm`; returns the
/// written paths.
pub fn export_matrix(m: &Tensor, sidecar: &MatrixSidecar, dir: &Path, stem: &str) -> LabResult<Vec<std::path::PathBuf>> {
    let csv = dir.join(format!("{stem}.csv"));
    let json = dir.join(format!("{stem}.json"));
    let img = dir.join(format!("{stem}.pgm"));
    write_text(&csv, &matrix_csv(m))?;
    write_text(&json, &serde_json::to_string_pretty(sidecar)?)?;
    std::fs::write(&img, matrix_pgm(m)).map_err(io_err(&img))?;
    Ok(vec![csv, json, img])
}

/// Images side by side; all must share dimensions. Pixels are scaled by 255
/// without normalization. Returns a PGM for one channel, PPM for three.
pub fn image_strip(images: &[Image]) -> LabResult<Vec<u8>> {
    let first = images
        .first()
        .ok_or_else(|| parse_err("image strip", 0, "no frames"))?;
    let (h, w, c) = first.dims();
    if images.iter().any(|im| im.dims() != (h, w, c)) || !(c == 1 || c == 3) {
        return Err(parse_err("image strip", 0, "frames differ in size or channel count"));
    }
    let total_w = w * images.len();
    let mut px = vec![0u8; h * total_w * c];
    for (k, im) in images.iter().enumerate() {
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    px[(y * total_w + k * w + x) * c + ch] = (im.get(y, x, ch) * 255.0).round() as u8;
                }
            }
        }
    }
    Ok(if c == 1 { pgm(total_w, h, &px) } else { ppm(total_w, h, &px) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_metrics_is_header_only() {
        assert_eq!(metrics_csv(&[]), format!("{METRICS_HEADER}\n"));
    }

    #[test]
    fn pgm_header() {
        let b = pgm(3, 2, &[0; 6]);
        assert!(b.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(b.len(), 11 + 6);
    }
}
