//! Artifact writers and readers: CSV, JSON, SVG.

use std::fs;
use std::path::Path;

use coulomb_lab::field::ScalarField;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::CliError;

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Writes rows with a header taken from the row type's field names.
/// Floats use the shortest representation that parses back to the same value.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::csv(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| CliError::csv(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::csv(path, e))?;
    r.deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| CliError::csv(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    fs::write(path, s).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let s = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&s).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Grayscale mid-plane section `z ≈ 0` of `u`, one square per cell, black at
/// `max |u|`, with the outline of the cells where `|u| > level · max |u|`.
pub fn section_svg(u: &ScalarField, level: f64) -> String {
    let grid = u.grid();
    let n = grid.n();
    let k = n / 2;
    let peak = u.max_abs();
    let px = 4;
    let side = n * px;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{side}\" height=\"{side}\" viewBox=\"0 0 {side} {side}\">\n"
    );
    s.push_str(&format!("<rect width=\"{side}\" height=\"{side}\" fill=\"rgb(255,255,255)\"/>\n"));
    let at = |i: usize, j: usize| u.values()[grid.index(i, j, k)].abs();
    for j in 0..n {
        for i in 0..n {
            let v = at(i, j);
            if v == 0.0 || peak == 0.0 {
                continue;
            }
            let g = (255.0 * (1.0 - v / peak)).round() as u8;
            // Rows run top to bottom, so y is flipped.
            s.push_str(&format!(
                "<rect x=\"{}\" y=\"{}\" width=\"{px}\" height=\"{px}\" fill=\"rgb({g},{g},{g})\"/>\n",
                i * px,
                (n - 1 - j) * px
            ));
        }
    }
    // Level-set outline along cell edges.
    let thr = level * peak;
    let inside = |i: isize, j: isize| {
        i >= 0 && j >= 0 && (i as usize) < n && (j as usize) < n && peak > 0.0 && at(i as usize, j as usize) > thr
    };
    let mut path = String::new();
    for j in 0..n as isize {
        for i in 0..n as isize {
            if !inside(i, j) {
                continue;
            }
            let (x0, y0) = (i as usize * px, (n - 1 - j as usize) * px);
            let (x1, y1) = (x0 + px, y0 + px);
            if !inside(i - 1, j) {
                path.push_str(&format!("M{x0} {y0}V{y1}"));
            }
            if !inside(i + 1, j) {
                path.push_str(&format!("M{x1} {y0}V{y1}"));
            }
            if !inside(i, j + 1) {
                path.push_str(&format!("M{x0} {y0}H{x1}"));
            }
            if !inside(i, j - 1) {
                path.push_str(&format!("M{x0} {y1}H{x1}"));
            }
        }
    }
    if !path.is_empty() {
        s.push_str(&format!(
            "<path d=\"{path}\" fill=\"none\" stroke=\"rgb(220,40,40)\" stroke-width=\"1\"/>\n"
        ));
    }
    s.push_str("</svg>\n");
    s
}
