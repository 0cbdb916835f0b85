//! Universal backprojection, the error kernel and operator it leaves on non-ellipsoidal
//! domains, and the Neumann-corrected solver.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, RwLock};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::forward::{interpolate_uniform, MeansData, Phantom};
use crate::geometry::{ConvexDomain, Point};
use crate::grid::ScalarGrid;
use crate::quadrature::corrected_trapezoid_weights;
use crate::transforms::{
    chord_profile_adaptive, default_mode_count, hilbert_finite, ChordFunction, ENDPOINT_MARGIN,
};

/// Pairs closer than this multiple of the diameter have no bisecting hyperplane.
pub const SEPARATION_FLOOR: f64 = 1e-9;
/// Points closer than this multiple of the diameter to a boundary node get a warning.
pub const NEAR_BOUNDARY: f64 = 1e-3;
/// Angular nodes of the planar kernel table (half a step off the axes).
pub const KERNEL_ANGLES: usize = 720;
/// Samples of each tabulated kernel slice in the normalised coordinate.
pub const KERNEL_SAMPLES: usize = 512;
/// Angular size of the spatial direction buckets, in degrees.
pub const BUCKET_DEGREES: f64 = 3.0;

const U_MAX: f64 = 1.0 - 2.0 * ENDPOINT_MARGIN;

/// `(omega, s)` of the hyperplane bisecting `x0 x1`: `omega = (x1 - x0)/|x1 - x0|`,
/// `s = (|x1|^2 - |x0|^2) / (2 |x1 - x0|)`.
pub fn omega_s_star(x0: &Point, x1: &Point) -> Result<(Point, f64)> {
    let d = x1 - x0;
    let sep = d.norm();
    let scale = 1.0_f64.max(x0.norm()).max(x1.norm());
    if !(sep >= SEPARATION_FLOOR * scale) {
        return Err(Error::DegeneratePair(sep));
    }
    Ok((d / sep, (x1.norm_squared() - x0.norm_squared()) / (2.0 * sep)))
}

#[derive(Debug, Clone, Serialize)]
pub struct KernelSample {
    pub x0: Point,
    pub x1: Point,
    pub omega_star: Point,
    pub s_star: f64,
    /// Kernel value with unit constant.
    pub value: f64,
    /// Whether the chord profile behind the value met the tail tolerance.
    pub confident: bool,
}

fn max_modes(dim: usize) -> usize {
    if dim == 2 {
        2049
    } else {
        257
    }
}

/// `d^n/ds^n` of `H R chi` (n even) or `R chi` (n odd) at `(omega*, s*)`, divided by
/// `|x0 - x1|^{n-1}`, with the chord profile refined from `mode_count` modes.
pub fn error_kernel_with(
    domain: &ConvexDomain,
    x0: &Point,
    x1: &Point,
    mode_count: usize,
) -> Result<KernelSample> {
    if !domain.indicator(x0) || !domain.indicator(x1) {
        return Err(Error::OutOfDomain);
    }
    let (omega, s) = omega_s_star(x0, x1)?;
    let dim = domain.dim();
    let sep = (x1 - x0).norm();
    let profile = chord_profile_adaptive(domain, &omega, mode_count, max_modes(dim))?;
    let confident = profile.converged;
    let numerator = if dim == 2 {
        crate::transforms::chord_derivative(&hilbert_finite(&profile)?, 2, s)?
    } else {
        crate::transforms::chord_derivative(&profile, 3, s)?
    };
    Ok(KernelSample {
        x0: *x0,
        x1: *x1,
        omega_star: omega,
        s_star: s,
        value: numerator / sep.powi(dim as i32 - 1),
        confident,
    })
}

pub fn error_kernel(domain: &ConvexDomain, x0: &Point, x1: &Point) -> Result<KernelSample> {
    error_kernel_with(domain, x0, x1, default_mode_count(domain.dim()))
}

fn lagrange4(x: f64) -> [f64; 4] {
    [
        -(x - 1.0) * (x - 2.0) * (x - 3.0) / 6.0,
        x * (x - 2.0) * (x - 3.0) / 2.0,
        -x * (x - 1.0) * (x - 3.0) / 2.0,
        x * (x - 1.0) * (x - 2.0) / 6.0,
    ]
}

/// The kernel numerator along one direction, sampled on `|u| <= 1 - 2 margin`. `offset` is
/// the support midpoint minus `center . omega`, so lookups are translation-aware.
#[derive(Debug)]
struct DirectionTable {
    offset: f64,
    half_width: f64,
    values: Vec<f64>,
    converged: bool,
}

impl DirectionTable {
    fn build(domain: &ConvexDomain, omega: &Point, mode_count: usize) -> Result<Self> {
        let dim = domain.dim();
        let profile = chord_profile_adaptive(domain, omega, mode_count, max_modes(dim))?;
        let c = profile.half_width;
        let du = 2.0 * U_MAX / (KERNEL_SAMPLES - 1) as f64;
        let us = (0..KERNEL_SAMPLES).map(|j| -U_MAX + j as f64 * du);
        let values = if dim == 2 {
            let h = hilbert_finite(&profile)?;
            us.map(|u| h.derivative_u(2, u) / (c * c)).collect()
        } else {
            us.map(|u| profile.derivative_u(3, u) / (c * c * c)).collect()
        };
        Ok(Self {
            offset: profile.midpoint - domain.center().dot(omega),
            half_width: c,
            values,
            converged: profile.converged,
        })
    }

    /// Value at `s_rel = s - center . omega`, or `None` inside the endpoint margin.
    fn eval(&self, s_rel: f64) -> Option<f64> {
        let u = (s_rel - self.offset) / self.half_width;
        if !(u.abs() <= U_MAX) {
            return None;
        }
        let du = 2.0 * U_MAX / (KERNEL_SAMPLES - 1) as f64;
        Some(interpolate_uniform(&self.values, du, u + U_MAX))
    }
}

/// Equal-area latitude rings of direction buckets on the sphere.
#[derive(Debug)]
struct BucketLayout {
    rings: Vec<(usize, usize)>,
}

impl BucketLayout {
    fn new(step: f64) -> Self {
        let n_rings = (PI / step).ceil() as usize;
        let mut rings = Vec::with_capacity(n_rings);
        let mut start = 0;
        for i in 0..n_rings {
            let theta = (i as f64 + 0.5) * PI / n_rings as f64;
            let count = ((2.0 * PI * theta.sin() / step).round() as usize).max(1);
            rings.push((start, count));
            start += count;
        }
        Self { rings }
    }

    fn locate(&self, w: &Point) -> (usize, Point) {
        let n = self.rings.len();
        let theta = w.z.clamp(-1.0, 1.0).acos();
        let i = ((theta / PI * n as f64) as usize).min(n - 1);
        let (start, count) = self.rings[i];
        let phi = w.y.atan2(w.x).rem_euclid(2.0 * PI);
        let j = ((phi / (2.0 * PI) * count as f64) as usize).min(count - 1);
        let tc = (i as f64 + 0.5) * PI / n as f64;
        let pc = (j as f64 + 0.5) * 2.0 * PI / count as f64;
        (
            start + j,
            Point::new(tc.sin() * pc.cos(), tc.sin() * pc.sin(), tc.cos()),
        )
    }
}

#[derive(Debug)]
enum TableStore {
    Planar(Vec<DirectionTable>),
    Spatial {
        layout: BucketLayout,
        cache: RwLock<HashMap<usize, Arc<DirectionTable>>>,
    },
}

/// Unit-constant error kernel backed by per-direction tables: in the plane 720 angles with
/// four-point interpolation across angles; in space a lazily filled cache of equal-area
/// direction buckets, each answered by its centre direction.
#[derive(Debug)]
pub struct ErrorOperator {
    domain: ConvexDomain,
    mode_count: usize,
    store: TableStore,
}

/// Result of one application of the error operator.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Applied {
    pub value: f64,
    /// Pairs dropped for coincidence or endpoint proximity.
    pub skipped: usize,
}

impl ErrorOperator {
    pub fn new(domain: &ConvexDomain, mode_count: usize) -> Result<Self> {
        let store = match domain.dim() {
            2 => {
                let step = 2.0 * PI / KERNEL_ANGLES as f64;
                let tables = (0..KERNEL_ANGLES)
                    .into_par_iter()
                    .map(|k| {
                        let th = (k as f64 + 0.5) * step;
                        DirectionTable::build(domain, &Point::new(th.cos(), th.sin(), 0.0), mode_count)
                    })
                    .collect::<Result<Vec<_>>>()?;
                TableStore::Planar(tables)
            }
            3 => TableStore::Spatial {
                layout: BucketLayout::new(BUCKET_DEGREES.to_radians()),
                cache: RwLock::new(HashMap::new()),
            },
            d => return Err(Error::UnsupportedDimension(d)),
        };
        Ok(Self {
            domain: domain.clone(),
            mode_count,
            store,
        })
    }

    pub fn domain(&self) -> &ConvexDomain {
        &self.domain
    }

    /// Fraction of tabulated directions whose profile met the tail tolerance.
    pub fn confident_fraction(&self) -> f64 {
        match &self.store {
            TableStore::Planar(t) => {
                t.iter().filter(|d| d.converged).count() as f64 / t.len() as f64
            }
            TableStore::Spatial { cache, .. } => {
                let c = cache.read().unwrap();
                if c.is_empty() {
                    1.0
                } else {
                    c.values().filter(|d| d.converged).count() as f64 / c.len() as f64
                }
            }
        }
    }

    fn spatial_table(&self, layout: &BucketLayout, cache: &RwLock<HashMap<usize, Arc<DirectionTable>>>, w: &Point) -> Result<(Arc<DirectionTable>, Point)> {
        let (key, centre) = layout.locate(w);
        if let Some(t) = cache.read().unwrap().get(&key) {
            return Ok((t.clone(), centre));
        }
        // built outside the lock; a racing thread may build the same table
        let t = Arc::new(DirectionTable::build(&self.domain, &centre, self.mode_count)?);
        cache.write().unwrap().entry(key).or_insert_with(|| t.clone());
        Ok((t, centre))
    }

    /// Tabulated kernel, `None` for pairs that are coincident or whose bisector falls in the
    /// endpoint margin.
    pub fn kernel(&self, x0: &Point, x1: &Point) -> Result<Option<f64>> {
        let d = x1 - x0;
        let sep = d.norm();
        if sep < SEPARATION_FLOOR * self.domain.diameter() {
            return Ok(None);
        }
        let w = d / sep;
        let s = (x1.norm_squared() - x0.norm_squared()) / (2.0 * sep);
        let s_rel = s - self.domain.center().dot(&w);
        match &self.store {
            TableStore::Planar(tables) => {
                let step = 2.0 * PI / KERNEL_ANGLES as f64;
                let pos = w.y.atan2(w.x).rem_euclid(2.0 * PI) / step - 0.5;
                let k0 = pos.floor();
                let weights = lagrange4(pos - k0 + 1.0);
                let mut acc = 0.0;
                for (j, wt) in weights.iter().enumerate() {
                    let k = (k0 as i64 - 1 + j as i64).rem_euclid(KERNEL_ANGLES as i64) as usize;
                    match tables[k].eval(s_rel) {
                        Some(v) => acc += wt * v,
                        None => return Ok(None),
                    }
                }
                Ok(Some(acc / sep))
            }
            TableStore::Spatial { layout, cache } => {
                let (t, _) = self.spatial_table(layout, cache, &w)?;
                Ok(t.eval(s_rel).map(|v| v / (sep * sep)))
            }
        }
    }

    /// `sum_cells k(x0, x_cell) f(x_cell) |cell|` over cells flagged in `mask`.
    pub fn apply_masked(&self, f: &ScalarGrid, mask: &[bool], x0: &Point) -> Result<Applied> {
        let vol = f.cell_volume();
        let mut value = 0.0;
        let mut skipped = 0;
        for (i, (&v, &m)) in f.values.iter().zip(mask).enumerate() {
            if !m || v == 0.0 {
                continue;
            }
            match self.kernel(x0, &f.point(i))? {
                Some(k) => value += k * v * vol,
                None => skipped += 1,
            }
        }
        Ok(Applied { value, skipped })
    }

    pub fn apply(&self, f: &ScalarGrid, x0: &Point) -> Result<Applied> {
        if !self.domain.indicator(x0) {
            return Err(Error::OutOfDomain);
        }
        self.apply_masked(f, &f.mask(&self.domain), x0)
    }

    /// Applies the operator to a function sampled on the lattice `x0 + h Z^n`, which keeps
    /// the singular pair symmetric about `x0`. Only lattice points inside `[lo, hi]` and the
    /// domain contribute.
    pub fn apply_lattice(
        &self,
        f: &(dyn Fn(&Point) -> f64 + Sync),
        x0: &Point,
        h: f64,
        lo: &Point,
        hi: &Point,
    ) -> Result<Applied> {
        let dim = self.domain.dim();
        let mut range = [(0i64, 0i64); 3];
        for a in 0..dim {
            range[a] = (((lo[a] - x0[a]) / h).floor() as i64, ((hi[a] - x0[a]) / h).ceil() as i64);
        }
        let vol = h.powi(dim as i32);
        let mut value = 0.0;
        let mut skipped = 0;
        for i in range[0].0..=range[0].1 {
            for j in range[1].0..=range[1].1 {
                for k in range[2].0..=range[2].1 {
                    if i == 0 && j == 0 && k == 0 {
                        continue;
                    }
                    let x1 = x0 + Point::new(i as f64, j as f64, k as f64) * h;
                    let v = f(&x1);
                    if v == 0.0 || !self.domain.indicator(&x1) {
                        continue;
                    }
                    match self.kernel(x0, &x1)? {
                        Some(kv) => value += kv * v * vol,
                        None => skipped += 1,
                    }
                }
            }
        }
        Ok(Applied { value, skipped })
    }
}

/// `[K f](x0)` with the unit constant, building the kernel tables on the fly. Reuse an
/// [`ErrorOperator`] for repeated calls.
pub fn apply_error_operator(domain: &ConvexDomain, f: &ScalarGrid, x0: &Point) -> Result<Applied> {
    ErrorOperator::new(domain, default_mode_count(domain.dim()))?.apply(f, x0)
}

/// Backprojection with its per-node radial tables. In the plane each row holds the
/// principal value `int_0^R g(r) / (r^2 - d^2) dr` at the radius nodes `d`; in space it
/// holds the filtered means `g` themselves.
#[derive(Debug, Clone)]
pub struct Backprojector {
    dim: usize,
    nodes: Vec<Point>,
    normals: Vec<Point>,
    weights: Vec<f64>,
    spacing: f64,
    radial_count: usize,
    table: Vec<f64>,
    near: f64,
}

impl Backprojector {
    pub fn new(data: &MeansData, domain: &ConvexDomain) -> Result<Self> {
        let filtered = data
            .filtered
            .as_ref()
            .ok_or_else(|| Error::Contract("backprojection needs filtered means".into()))?;
        if data.dim != domain.dim() {
            return Err(Error::Contract("data and domain dimensions differ".into()));
        }
        let m = data.radial_count;
        let h = data.spacing();
        let table = match data.dim {
            2 => {
                let deriv = filtered
                    .derivative
                    .as_ref()
                    .ok_or_else(|| Error::Contract("planar filter lacks g'".into()))?;
                let w = corrected_trapezoid_weights(m, h);
                let r_max = data.r_max;
                (0..data.node_count())
                    .into_par_iter()
                    .flat_map_iter(|i| {
                        let g = &filtered.values[i * m..(i + 1) * m];
                        let gp = &deriv[i * m..(i + 1) * m];
                        principal_value_row(g, gp, &w, h, r_max)
                    })
                    .collect()
            }
            3 => filtered.values.clone(),
            d => return Err(Error::UnsupportedDimension(d)),
        };
        Ok(Self {
            dim: data.dim,
            nodes: data.quadrature.nodes.clone(),
            normals: data.quadrature.normals.clone(),
            weights: data.quadrature.weights.clone(),
            spacing: h,
            radial_count: m,
            table,
            near: NEAR_BOUNDARY * domain.diameter(),
        })
    }

    /// Value at `x0` and whether `x0` is within the near-boundary distance of a node.
    pub fn eval(&self, x0: &Point) -> (f64, bool) {
        let m = self.radial_count;
        let mut acc = 0.0;
        let mut dmin = f64::INFINITY;
        for i in 0..self.nodes.len() {
            let diff = x0 - self.nodes[i];
            let d = diff.norm();
            dmin = dmin.min(d);
            let row = &self.table[i * m..(i + 1) * m];
            let v = interpolate_uniform(row, self.spacing, d);
            let geom = self.normals[i].dot(&diff);
            acc += self.weights[i] * if self.dim == 2 { geom * v } else { geom / d * v };
        }
        (acc / PI, dmin < self.near)
    }
}

/// `int_0^R g(r)/(r^2 - d^2) dr` at `d = r_j` by subtracting `g(d)`; the remainder has a
/// removable singularity with value `g'(d)/(2d)`.
fn principal_value_row(g: &[f64], gp: &[f64], w: &[f64], h: f64, r_max: f64) -> Vec<f64> {
    let m = g.len();
    let mut out = vec![0.0; m];
    for j in 1..m - 1 {
        let d = j as f64 * h;
        let d2 = d * d;
        let mut acc = 0.0;
        for k in 0..m {
            let q = if k == j {
                gp[j] / (2.0 * d)
            } else {
                let r = k as f64 * h;
                (g[k] - g[j]) / (r * r - d2)
            };
            acc += w[k] * q;
        }
        out[j] = acc + g[j] * ((r_max - d) / (r_max + d)).ln() / (2.0 * d);
    }
    // the value at d = 0 diverges logarithmically; copies keep interpolation finite
    out[0] = out[1];
    out[m - 1] = out[m - 2];
    out
}

/// `[N M f](x0)` from filtered data.
pub fn backproject(data: &MeansData, domain: &ConvexDomain, x0: &Point) -> Result<f64> {
    if !domain.indicator(x0) {
        return Err(Error::OutOfDomain);
    }
    Ok(Backprojector::new(data, domain)?.eval(x0).0)
}

#[derive(Debug, Clone, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// `|f_{k} - f_{k-1}| / |f_0|`; zero for the starting iterate.
    pub update_norm: f64,
    pub l2_error: Option<f64>,
    pub skipped_pairs: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReconstructionResult {
    pub grid: ScalarGrid,
    pub l2_relative_error: Option<f64>,
    pub linf_relative_error: Option<f64>,
    pub near_boundary_points: usize,
    pub trace: Vec<IterationRecord>,
}

fn truth_errors(
    grid: &ScalarGrid,
    mask: &[bool],
    truth: Option<&Phantom>,
) -> (Option<f64>, Option<f64>) {
    match truth {
        Some(f) => {
            let t: Vec<f64> = grid.points().map(|p| f.eval(&p)).collect();
            let (l2, linf) = grid.relative_errors(&t, mask);
            (Some(l2), Some(linf))
        }
        None => (None, None),
    }
}

/// Backprojection on a `resolution`-per-axis grid over the domain's bounding box.
pub fn reconstruct(
    data: &MeansData,
    domain: &ConvexDomain,
    resolution: usize,
    truth: Option<&Phantom>,
) -> Result<ReconstructionResult> {
    let bp = Backprojector::new(data, domain)?;
    let mut grid = ScalarGrid::covering(domain, resolution)?;
    let mask = grid.mask(domain);
    let vals: Vec<(f64, bool)> = (0..grid.len())
        .into_par_iter()
        .map(|i| if mask[i] { bp.eval(&grid.point(i)) } else { (0.0, false) })
        .collect();
    grid.values = vals.iter().map(|v| v.0).collect();
    let near_boundary_points = vals.iter().filter(|v| v.1).count();
    let (l2, linf) = truth_errors(&grid, &mask, truth);
    Ok(ReconstructionResult {
        l2_relative_error: l2,
        linf_relative_error: linf,
        near_boundary_points,
        trace: vec![IterationRecord {
            iteration: 0,
            update_norm: 0.0,
            l2_error: l2,
            skipped_pairs: 0,
        }],
        grid,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct CalibrationOptions {
    pub probes: usize,
    pub seed: u64,
    /// Lattice spacing for the error operator, as a fraction of the diameter.
    pub lattice_step: f64,
    /// Minimum support-distance of probes from the boundary, as a fraction of the diameter.
    pub margin: f64,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            probes: 64,
            seed: 7,
            lattice_step: 1.0 / 256.0,
            margin: 0.05,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CalibrationProbe {
    pub x0: Point,
    pub f: f64,
    pub backprojection: f64,
    pub error_term: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Calibration {
    pub c: f64,
    /// `|e - c k| / |e|` over the probes, with `e = f - N M f` and `k = K f`.
    pub residual: f64,
    /// `max |f - N M f - c K f| / max |f|` over the probes.
    pub identity_residual: f64,
    /// Set when the fit residual exceeds 10%.
    pub inconsistent: bool,
    pub probes: Vec<CalibrationProbe>,
}

/// Least-squares fit of `c` in `f - N M f = c K f` over seeded interior probes.
pub fn calibrate_constant(
    domain: &ConvexDomain,
    f: &Phantom,
    data: &MeansData,
    op: &ErrorOperator,
    opts: &CalibrationOptions,
) -> Result<Calibration> {
    if domain.is_ellipsoid() {
        return Err(Error::UnidentifiableConstant(
            "the error kernel vanishes on ellipsoids".into(),
        ));
    }
    let bp = Backprojector::new(data, domain)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let diam = domain.diameter();
    let xs: Vec<Point> = (0..opts.probes)
        .map(|_| domain.sample_interior(&mut rng, opts.margin * diam))
        .collect();
    let (lo, hi) = domain.bounding_box();
    let h = opts.lattice_step * diam;
    let eval = |p: &Point| f.eval(p);
    let probes = xs
        .par_iter()
        .map(|x0| {
            let k = op.apply_lattice(&eval, x0, h, &lo, &hi)?;
            Ok(CalibrationProbe {
                x0: *x0,
                f: f.eval(x0),
                backprojection: bp.eval(x0).0,
                error_term: k.value,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (mut ek, mut kk, mut ee) = (0.0, 0.0, 0.0);
    for p in &probes {
        let e = p.f - p.backprojection;
        ek += e * p.error_term;
        kk += p.error_term * p.error_term;
        ee += e * e;
    }
    if !(kk > 0.0) {
        return Err(Error::UnidentifiableConstant(
            "the error term vanishes at every probe".into(),
        ));
    }
    let c = ek / kk;
    let fmax = f.max_abs();
    let mut res2 = 0.0;
    let mut worst = 0.0_f64;
    for p in &probes {
        let r = p.f - p.backprojection - c * p.error_term;
        res2 += r * r;
        worst = worst.max(r.abs());
    }
    let residual = if ee > 0.0 { (res2 / ee).sqrt() } else { 0.0 };
    Ok(Calibration {
        c,
        residual,
        identity_residual: if fmax > 0.0 { worst / fmax } else { worst },
        inconsistent: residual > 0.1,
        probes,
    })
}

/// Iterates `f_{k+1} = N M f + c K f_k` from `f_0 = N M f` on a `resolution` grid.
pub fn neumann_solve(
    domain: &ConvexDomain,
    data: &MeansData,
    c: f64,
    iterations: usize,
    resolution: usize,
    op: &ErrorOperator,
    truth: Option<&Phantom>,
) -> Result<ReconstructionResult> {
    if iterations < 1 {
        return Err(Error::Resolution {
            name: "iterations",
            value: iterations,
            min: 1,
        });
    }
    let base = reconstruct(data, domain, resolution, truth)?;
    let mask = base.grid.mask(domain);
    let f0 = base.grid.values.clone();
    let norm0 = ScalarGrid::masked_norm(&f0, &mask);
    let mut current = base.grid.clone();
    let mut trace = base.trace.clone();
    let mut updates: Vec<f64> = Vec::new();
    for it in 1..=iterations {
        let applied = (0..current.len())
            .into_par_iter()
            .map(|i| {
                if mask[i] {
                    op.apply_masked(&current, &mask, &current.point(i))
                } else {
                    Ok(Applied {
                        value: 0.0,
                        skipped: 0,
                    })
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let next: Vec<f64> = f0
            .iter()
            .zip(&applied)
            .map(|(b, a)| b + c * a.value)
            .collect();
        let diff: Vec<f64> = next.iter().zip(&current.values).map(|(a, b)| a - b).collect();
        let dn = ScalarGrid::masked_norm(&diff, &mask);
        let update = if norm0 > 0.0 { dn / norm0 } else { dn };
        current.values = next;
        let (l2, _) = truth_errors(&current, &mask, truth);
        trace.push(IterationRecord {
            iteration: it,
            update_norm: update,
            l2_error: l2,
            skipped_pairs: applied.iter().map(|a| a.skipped).sum(),
        });
        updates.push(update);
        let n = updates.len();
        if n >= 3 && updates[n - 1] > updates[n - 2] && updates[n - 2] > updates[n - 3] {
            return Err(Error::Divergence { trace: updates });
        }
        if update < 1e-8 {
            break;
        }
    }
    let (l2, linf) = truth_errors(&current, &mask, truth);
    Ok(ReconstructionResult {
        grid: current,
        l2_relative_error: l2,
        linf_relative_error: linf,
        near_boundary_points: base.near_boundary_points,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{means_dataset, Bump};
    use crate::geometry::{point2, rotation_2d};
    use nalgebra::Matrix3;
    use proptest::prelude::*;
    use rand::Rng;

    fn superellipse() -> ConvexDomain {
        ConvexDomain::superellipse(2, 4, &[1.0, 1.0], &[0.0, 0.0], Matrix3::identity()).unwrap()
    }

    fn pairs(domain: &ConvexDomain, count: usize, seed: u64) -> Vec<(Point, Point)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                (
                    domain.sample_interior(&mut rng, 0.0),
                    domain.sample_interior(&mut rng, 0.0),
                )
            })
            .collect()
    }

    fn kernel_sup(domain: &ConvexDomain, count: usize, seed: u64) -> f64 {
        pairs(domain, count, seed)
            .iter()
            .filter_map(|(a, b)| error_kernel(domain, a, b).ok())
            .map(|k| k.value.abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn bisector_examples() {
        let (w, s) = omega_s_star(&point2(0.0, 0.0), &point2(1.0, 0.0)).unwrap();
        assert_eq!((w, s), (point2(1.0, 0.0), 0.5));
        assert!((point2(0.5, 0.0).dot(&w) - s).abs() < 1e-15);
        let (_, s) = omega_s_star(&point2(0.6, 0.8), &point2(-1.0, 0.0)).unwrap();
        assert!(s.abs() < 1e-15);
        assert!(matches!(
            omega_s_star(&point2(0.1, 0.2), &point2(0.1, 0.2)),
            Err(Error::DegeneratePair(_))
        ));
    }

    proptest! {
        #[test]
        fn bisector_translation(
            a in prop::array::uniform3(-2.0..2.0f64),
            b in prop::array::uniform3(-2.0..2.0f64),
            t in prop::array::uniform3(-2.0..2.0f64),
        ) {
            let (x0, x1, sh) = (Point::from(a), Point::from(b), Point::from(t));
            prop_assume!((x1 - x0).norm() > 1e-3);
            let (w, s) = omega_s_star(&x0, &x1).unwrap();
            let (w2, s2) = omega_s_star(&(x0 + sh), &(x1 + sh)).unwrap();
            prop_assert!((w - w2).norm() < 1e-12);
            prop_assert!((s2 - s - sh.dot(&w)).abs() < 1e-9);
            prop_assert!(((x0 + x1) * 0.5).dot(&w) - s < 1e-10);
        }
    }

    #[test]
    fn kernel_vanishes_on_ellipses() {
        let ellipse = ConvexDomain::ellipsoid(2, &[2.0, 1.0], &[0.3, 0.1], rotation_2d(0.4)).unwrap();
        let scale = kernel_sup(&superellipse(), 60, 3);
        assert!(scale > 1e-2);
        let e = kernel_sup(&ellipse, 200, 4);
        assert!(e <= 1e-6 * scale, "ellipse {e:e} vs {scale:e}");
    }

    #[test]
    fn kernel_vanishes_on_ball() {
        let ball = ConvexDomain::ball(3, 1.0).unwrap();
        let k = kernel_sup(&ball, 60, 5);
        assert!(k <= 1e-8, "{k:e}");
    }

    #[test]
    fn superellipse_kernel_is_stable() {
        let d = superellipse();
        let (x0, x1) = (point2(0.3, 0.0), point2(-0.3, 0.1));
        let a = error_kernel_with(&d, &x0, &x1, 129).unwrap();
        let b = error_kernel_with(&d, &x0, &x1, 257).unwrap();
        assert!(a.value.abs() > 1e-3);
        assert!((a.value - b.value).abs() <= 1e-3 * a.value.abs());
        assert!(((x0 + x1) * 0.5).dot(&a.omega_star) - a.s_star < 1e-10);
        let iv = d.support_interval(&a.omega_star).unwrap();
        assert!(iv.contains_open(a.s_star));
    }

    /// `max |a + sign b|` over pairs, relative to the largest kernel value seen.
    fn pair_mismatch(values: &[(f64, f64)], sign: f64) -> f64 {
        let scale = values.iter().map(|v| v.0.abs()).fold(0.0, f64::max);
        values.iter().map(|(a, b)| (a + sign * b).abs()).fold(0.0, f64::max) / scale
    }

    #[test]
    fn kernel_antisymmetry() {
        let d = superellipse();
        let vals: Vec<(f64, f64)> = pairs(&d, 100, 6)
            .iter()
            .filter_map(|(a, b)| {
                Some((error_kernel(&d, a, b).ok()?.value, error_kernel(&d, b, a).ok()?.value))
            })
            .collect();
        assert!(vals.len() > 80);
        assert!(pair_mismatch(&vals, 1.0) <= 1e-6);
        let d3 = ConvexDomain::superellipse(3, 4, &[1.0, 0.9, 0.8], &[0.0; 3], Matrix3::identity())
            .unwrap();
        let vals: Vec<(f64, f64)> = pairs(&d3, 6, 7)
            .iter()
            .filter_map(|(a, b)| {
                Some((error_kernel(&d3, a, b).ok()?.value, error_kernel(&d3, b, a).ok()?.value))
            })
            .collect();
        assert!(pair_mismatch(&vals, 1.0) <= 1e-6);
    }

    #[test]
    fn kernel_equivariance() {
        let d = superellipse();
        let q = rotation_2d(0.7);
        let shift = point2(0.4, -0.3);
        let moved = d.moved(q, &[0.4, -0.3]).unwrap();
        let vals: Vec<(f64, f64)> = pairs(&d, 30, 8)
            .iter()
            .filter_map(|(a, b)| {
                let k = error_kernel(&d, a, b).ok()?.value;
                let k2 = error_kernel(&moved, &(q * a + shift), &(q * b + shift)).ok()?.value;
                Some((k, k2))
            })
            .collect();
        assert!(vals.len() > 20);
        assert!(pair_mismatch(&vals, -1.0) <= 1e-6);
    }

    #[test]
    fn table_matches_direct_kernel() {
        let d = superellipse();
        let op = ErrorOperator::new(&d, 129).unwrap();
        let mut worst = 0.0_f64;
        let mut scale = 0.0_f64;
        for (a, b) in pairs(&d, 100, 9) {
            let (Ok(k), Ok(Some(t))) = (error_kernel(&d, &a, &b), op.kernel(&a, &b)) else {
                continue;
            };
            worst = worst.max((k.value - t).abs() * (a - b).norm());
            scale = scale.max(k.value.abs() * (a - b).norm());
        }
        assert!(worst <= 1e-4 * scale, "{worst:e} vs {scale:e}");
    }

    fn sampled(domain: &ConvexDomain, f: &Phantom, res: usize) -> ScalarGrid {
        let mut g = ScalarGrid::covering(domain, res).unwrap();
        g.sample(domain, |p| f.eval(p));
        g
    }

    fn bump(x: f64, y: f64, rho: f64) -> Phantom {
        Phantom::new(
            2,
            vec![Bump {
                center: point2(x, y),
                radius: rho,
                amplitude: 1.0,
            }],
        )
        .unwrap()
    }

    #[test]
    fn operator_on_zero_and_ellipse() {
        let e = ConvexDomain::ellipse(2.0, 1.0).unwrap();
        let op = ErrorOperator::new(&e, 129).unwrap();
        let zero = ScalarGrid::covering(&e, 32).unwrap();
        assert_eq!(op.apply(&zero, &point2(0.1, 0.2)).unwrap().value, 0.0);
        let f = bump(0.3, 0.1, 0.7);
        let g = sampled(&e, &f, 64);
        for x0 in [point2(0.0, 0.0), point2(0.5, 0.3), point2(-1.2, -0.2)] {
            let v = op.apply(&g, &x0).unwrap().value;
            assert!(v.abs() <= 1e-6 * e.volume().unwrap(), "{v:e}");
        }
    }

    #[test]
    fn operator_matches_refined_grid() {
        let d = superellipse();
        let op = ErrorOperator::new(&d, 129).unwrap();
        let f = bump(0.1, 0.05, 0.7);
        let grid = sampled(&d, &f, 128);
        let (lo, hi) = d.bounding_box();
        let eval = |p: &Point| f.eval(p);
        let mut worst = 0.0_f64;
        let mut scale = 0.0_f64;
        for idx in [[64usize, 64usize], [40, 80], [90, 60], [20, 100], [64, 80]] {
            let x0 = grid.point(grid.index_of(&idx));
            let a = op.apply(&grid, &x0).unwrap().value;
            let b = op
                .apply_lattice(&eval, &x0, 0.5 * grid.spacing[0], &lo, &hi)
                .unwrap()
                .value;
            worst = worst.max((a - b).abs());
            scale = scale.max(b.abs());
        }
        assert!(worst <= 0.01 * scale, "{worst:e} vs {scale:e}");
    }

    fn dataset(domain: &ConvexDomain, f: &Phantom, b: usize, m: usize) -> MeansData {
        let mut d = means_dataset(f, domain, b, m).unwrap();
        d.apply_filter().unwrap();
        d
    }

    #[test]
    fn backprojection_basics() {
        let e = ConvexDomain::ellipse(2.0, 1.0).unwrap();
        let zero = dataset(&e, &Phantom::zero(2), 64, 256);
        assert_eq!(backproject(&zero, &e, &point2(0.2, 0.1)).unwrap(), 0.0);
        assert!(matches!(
            backproject(&zero, &e, &point2(2.5, 0.0)),
            Err(Error::OutOfDomain)
        ));
        let f1 = bump(0.3, 0.1, 0.8);
        let f2 = bump(-0.5, -0.1, 0.8);
        let both = Phantom::new(2, [f1.bumps.clone(), f2.bumps.clone()].concat()).unwrap();
        let x0 = point2(0.1, -0.2);
        let n1 = backproject(&dataset(&e, &f1, 128, 512), &e, &x0).unwrap();
        let n2 = backproject(&dataset(&e, &f2, 128, 512), &e, &x0).unwrap();
        let n12 = backproject(&dataset(&e, &both, 128, 512), &e, &x0).unwrap();
        assert!((n1 + n2 - n12).abs() < 1e-12);
        assert!((n12 - both.eval(&x0)).abs() < 1e-3);
    }

    #[test]
    fn disk_is_exact() {
        let disk = ConvexDomain::ball(2, 1.0).unwrap();
        let f = bump(0.1, -0.2, 0.5);
        let data = dataset(&disk, &f, 256, 512);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let x0 = point2(rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6));
            let v = backproject(&data, &disk, &x0).unwrap();
            assert!((v - f.eval(&x0)).abs() < 1e-4, "{v} vs {}", f.eval(&x0));
        }
    }

    #[test]
    fn calibration_errors_and_linearity() {
        let e = ConvexDomain::ellipse(2.0, 1.0).unwrap();
        let op = ErrorOperator::new(&e, 129).unwrap();
        let f = bump(0.3, 0.1, 0.7);
        let data = dataset(&e, &f, 64, 512);
        assert!(matches!(
            calibrate_constant(&e, &f, &data, &op, &CalibrationOptions::default()),
            Err(Error::UnidentifiableConstant(_))
        ));

        let d = superellipse();
        let op = ErrorOperator::new(&d, 129).unwrap();
        let opts = CalibrationOptions {
            probes: 16,
            ..Default::default()
        };
        let f = bump(0.1, 0.05, 0.7);
        let c1 = calibrate_constant(&d, &f, &dataset(&d, &f, 256, 512), &op, &opts).unwrap();
        let f2 = f.scaled(2.0);
        let c2 = calibrate_constant(&d, &f2, &dataset(&d, &f2, 256, 512), &op, &opts).unwrap();
        assert!(c1.residual <= 0.05);
        assert!((c1.c - c2.c).abs() <= 1e-6 * c1.c.abs());
        let g = bump(-0.2, 0.1, 0.6);
        let c3 = calibrate_constant(&d, &g, &dataset(&d, &g, 256, 1024), &op, &opts).unwrap();
        assert!(c3.residual <= 0.05);
        assert!((c1.c - c3.c).abs() <= (c1.residual + c3.residual) * c1.c.abs());
    }

    #[test]
    fn neumann_on_ellipse_and_zero() {
        let e = ConvexDomain::ellipse(2.0, 1.0).unwrap();
        let op = ErrorOperator::new(&e, 129).unwrap();
        let f = bump(0.3, 0.1, 0.7);
        let data = dataset(&e, &f, 256, 512);
        let r = neumann_solve(&e, &data, 0.04, 1, 32, &op, Some(&f)).unwrap();
        assert!(r.trace[1].update_norm <= 1e-5, "{}", r.trace[1].update_norm);

        let zero = dataset(&e, &Phantom::zero(2), 64, 128);
        let r = neumann_solve(&e, &zero, 0.04, 2, 16, &op, None).unwrap();
        assert!(r.grid.values.iter().all(|v| *v == 0.0));
        assert!(matches!(
            neumann_solve(&e, &zero, 0.04, 0, 16, &op, None),
            Err(Error::Resolution { name: "iterations", .. })
        ));
    }

    #[test]
    fn divergence_is_detected() {
        let d = superellipse();
        let op = ErrorOperator::new(&d, 129).unwrap();
        let f = bump(0.1, 0.05, 0.7);
        let data = dataset(&d, &f, 128, 512);
        // a constant far beyond the calibrated one makes the iteration blow up
        match neumann_solve(&d, &data, 40.0, 6, 16, &op, None) {
            Err(Error::Divergence { trace }) => assert!(trace.len() >= 3),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
