//! Cell-centred rectangular grids of scalar samples.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ConvexDomain, Point};

/// Samples at cell centres `origin + (i + 1/2) spacing` of an `n_1 x ... x n_d` grid, stored
/// row-major with the last axis fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarGrid {
    pub dim: usize,
    pub shape: Vec<usize>,
    pub origin: [f64; 3],
    pub spacing: [f64; 3],
    pub values: Vec<f64>,
}

impl ScalarGrid {
    /// Zero grid with `resolution` cells per axis over the bounding box of `domain`.
    pub fn covering(domain: &ConvexDomain, resolution: usize) -> Result<Self> {
        if resolution < 2 {
            return Err(Error::Resolution {
                name: "grid_resolution",
                value: resolution,
                min: 2,
            });
        }
        let (lo, hi) = domain.bounding_box();
        let dim = domain.dim();
        let mut origin = [0.0; 3];
        let mut spacing = [1.0; 3];
        for j in 0..dim {
            // a thin margin keeps boundary cells from straddling the box edge
            let pad = 1e-6 * (hi[j] - lo[j]);
            origin[j] = lo[j] - pad;
            spacing[j] = (hi[j] - lo[j] + 2.0 * pad) / resolution as f64;
        }
        Ok(Self {
            dim,
            shape: vec![resolution; dim],
            origin,
            spacing,
            values: vec![0.0; resolution.pow(dim as u32)],
        })
    }

    /// Grid with the given geometry and zero values.
    pub fn with_geometry(dim: usize, shape: Vec<usize>, origin: [f64; 3], spacing: [f64; 3]) -> Self {
        let n = shape.iter().product();
        Self {
            dim,
            shape,
            origin,
            spacing,
            values: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing[..self.dim].iter().product()
    }

    pub fn index_of(&self, ix: &[usize]) -> usize {
        ix.iter().zip(&self.shape).fold(0, |acc, (i, n)| acc * n + i)
    }

    pub fn multi_index(&self, mut idx: usize) -> [usize; 3] {
        let mut out = [0; 3];
        for a in (0..self.dim).rev() {
            out[a] = idx % self.shape[a];
            idx /= self.shape[a];
        }
        out
    }

    pub fn point(&self, idx: usize) -> Point {
        let ix = self.multi_index(idx);
        let mut p = Point::zeros();
        for a in 0..self.dim {
            p[a] = self.origin[a] + (ix[a] as f64 + 0.5) * self.spacing[a];
        }
        p
    }

    pub fn points(&self) -> impl Iterator<Item = Point> + '_ {
        (0..self.len()).map(|i| self.point(i))
    }

    /// Cells whose centre lies in the domain.
    pub fn mask(&self, domain: &ConvexDomain) -> Vec<bool> {
        self.points().map(|p| domain.indicator(&p)).collect()
    }

    /// Fills the grid with `f` on cells inside the domain and zero elsewhere.
    pub fn sample(&mut self, domain: &ConvexDomain, f: impl Fn(&Point) -> f64) {
        for i in 0..self.len() {
            let p = self.point(i);
            self.values[i] = if domain.indicator(&p) { f(&p) } else { 0.0 };
        }
    }

    /// Relative L2 and max-norm differences to `truth` over masked cells.
    pub fn relative_errors(&self, truth: &[f64], mask: &[bool]) -> (f64, f64) {
        let mut num = 0.0;
        let mut den = 0.0;
        let mut emax = 0.0_f64;
        let mut fmax = 0.0_f64;
        for ((v, t), &m) in self.values.iter().zip(truth).zip(mask) {
            if m {
                num += (v - t) * (v - t);
                den += t * t;
                emax = emax.max((v - t).abs());
                fmax = fmax.max(t.abs());
            }
        }
        let l2 = if den > 0.0 { (num / den).sqrt() } else { num.sqrt() };
        let linf = if fmax > 0.0 { emax / fmax } else { emax };
        (l2, linf)
    }

    /// `sqrt(sum v^2)` over masked cells.
    pub fn masked_norm(values: &[f64], mask: &[bool]) -> f64 {
        values
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(v, _)| v * v)
            .sum::<f64>()
            .sqrt()
    }
}
