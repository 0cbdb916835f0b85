//! File formats: flat little-endian `.f64` arrays with JSON sidecars, CSV with 17
//! significant digits, and 16-bit binary PGM previews.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::MeansData;
use crate::geometry::SurfaceQuadrature;
use crate::grid::ScalarGrid;

pub fn write_f64(path: &Path, values: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(8 * values.len());
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_f64(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Format(format!(
            "{}: length {} is not a multiple of 8",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&s)?)
}

/// Formats a float with 17 significant digits.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes an RFC 4180 table with LF record terminators; callers format floats with
/// [`format_float`].
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| Error::Io(e.to_string()))?;
    w.write_record(header).map_err(|e| Error::Io(e.to_string()))?;
    for r in rows {
        w.write_record(r).map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridHeader {
    pub dim: usize,
    pub shape: Vec<usize>,
    pub origin: Vec<f64>,
    pub spacing: Vec<f64>,
    pub layout: String,
    pub data_file: String,
}

/// Writes `<stem>.f64` and `<stem>.json`.
pub fn write_grid(dir: &Path, stem: &str, grid: &ScalarGrid) -> Result<()> {
    let data_file = format!("{stem}.f64");
    write_f64(&dir.join(&data_file), &grid.values)?;
    let header = GridHeader {
        dim: grid.dim,
        shape: grid.shape.clone(),
        origin: grid.origin[..grid.dim].to_vec(),
        spacing: grid.spacing[..grid.dim].to_vec(),
        layout: "cell-centred, row-major, last axis fastest".into(),
        data_file,
    };
    write_json(&dir.join(format!("{stem}.json")), &header)
}

pub fn read_grid(dir: &Path, stem: &str) -> Result<ScalarGrid> {
    let h: GridHeader = read_json(&dir.join(format!("{stem}.json")))?;
    let values = read_f64(&dir.join(&h.data_file))?;
    let mut origin = [0.0; 3];
    let mut spacing = [1.0; 3];
    origin[..h.dim].copy_from_slice(&h.origin);
    spacing[..h.dim].copy_from_slice(&h.spacing);
    let mut g = ScalarGrid::with_geometry(h.dim, h.shape, origin, spacing);
    if values.len() != g.len() {
        return Err(Error::Format(format!(
            "grid data holds {} values, header expects {}",
            values.len(),
            g.len()
        )));
    }
    g.values = values;
    Ok(g)
}

/// Linear map from grey levels back to values: `value = min + level (max - min) / 65535`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PgmScale {
    pub min: f64,
    pub max: f64,
}

/// 16-bit big-endian P5 image of a planar grid, first axis left to right and second axis
/// bottom to top.
pub fn write_pgm(path: &Path, grid: &ScalarGrid) -> Result<PgmScale> {
    if grid.dim != 2 {
        return Err(Error::UnsupportedDimension(grid.dim));
    }
    let (nx, ny) = (grid.shape[0], grid.shape[1]);
    let min = grid.values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = grid.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = if max > min { max - min } else { 1.0 };
    let mut out = Vec::with_capacity(32 + 2 * nx * ny);
    write!(out, "P5\n{nx} {ny}\n65535\n")?;
    for iy in (0..ny).rev() {
        for ix in 0..nx {
            let v = grid.values[grid.index_of(&[ix, iy])];
            let level = ((v - min) / range * 65535.0).round().clamp(0.0, 65535.0) as u16;
            out.extend_from_slice(&level.to_be_bytes());
        }
    }
    fs::write(path, out)?;
    Ok(PgmScale { min, max })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MeansHeader {
    dim: usize,
    r_max: f64,
    radial_count: usize,
    node_count: usize,
    layout: String,
    data_file: String,
    quadrature: SurfaceQuadrature,
}

/// Writes `<stem>.f64` (node-major samples) and `<stem>.json`.
pub fn write_means(dir: &Path, stem: &str, data: &MeansData) -> Result<()> {
    let data_file = format!("{stem}.f64");
    write_f64(&dir.join(&data_file), &data.values)?;
    let h = MeansHeader {
        dim: data.dim,
        r_max: data.r_max,
        radial_count: data.radial_count,
        node_count: data.node_count(),
        layout: "row-major over (boundary node, radius); radius j is j r_max / (radial_count - 1)"
            .into(),
        data_file,
        quadrature: data.quadrature.clone(),
    };
    write_json(&dir.join(format!("{stem}.json")), &h)
}

/// Reads means written by [`write_means`] from the sidecar path; the filter is not applied.
pub fn read_means(json_path: &Path) -> Result<MeansData> {
    let h: MeansHeader = read_json(json_path)?;
    let dir = json_path.parent().unwrap_or(Path::new("."));
    let values = read_f64(&dir.join(&h.data_file))?;
    if values.len() != h.node_count * h.radial_count || h.quadrature.len() != h.node_count {
        return Err(Error::Format("means data size does not match its header".into()));
    }
    Ok(MeansData {
        dim: h.dim,
        quadrature: h.quadrature,
        r_max: h.r_max,
        radial_count: h.radial_count,
        values,
        filtered: None,
    })
}
