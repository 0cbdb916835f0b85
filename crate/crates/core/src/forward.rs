//! Smooth bump phantoms, their spherical means on the boundary and the radial filter
//! applied before backprojection.

use std::f64::consts::PI;

use rayon::prelude::*;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ConvexDomain, Point, SurfaceQuadrature};
use crate::quadrature::GaussLegendre;

/// Angles in the planar trapezoid rule.
const CIRCLE_NODES: usize = 512;
/// Gauss–Legendre panels and nodes per panel for the spherical cap in space.
const CAP_PANELS: usize = 8;
const CAP_NODES: usize = 32;
/// Largest admissible spectral tail of the radial data.
pub const FILTER_TAIL_LIMIT: f64 = 1e-8;

/// `A exp(1 + 1/(q^2 - 1))` for `q = |x - c| / rho < 1`, zero otherwise; peak value `A`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub center: Point,
    pub radius: f64,
    pub amplitude: f64,
}

impl Bump {
    pub fn profile(&self, distance: f64) -> f64 {
        let q = distance / self.radius;
        if q >= 1.0 {
            return 0.0;
        }
        self.amplitude * (1.0 + 1.0 / (q * q - 1.0)).exp()
    }

    pub fn eval(&self, x: &Point) -> f64 {
        self.profile((x - self.center).norm())
    }

    /// Mean over the sphere `|y - x| = r`, reduced to one dimension by the symmetry of the
    /// bump about its center.
    pub fn sphere_mean(&self, dim: usize, x: &Point, r: f64) -> f64 {
        let d = (x - self.center).norm();
        let rho = self.radius;
        if d >= r + rho || r >= d + rho {
            return 0.0;
        }
        if r == 0.0 || d == 0.0 {
            return self.profile(r.max(d));
        }
        // |y - c|^2 = r^2 + d^2 - 2 r d cos(alpha); inside the bump for cos(alpha) > kappa
        let kappa = (r * r + d * d - rho * rho) / (2.0 * r * d);
        let at = |z: f64| self.profile((r * r + d * d - 2.0 * r * d * z).max(0.0).sqrt());
        if dim == 2 {
            let (a0, span) = if kappa <= -1.0 {
                (PI, 2.0 * PI)
            } else {
                let a = kappa.min(1.0).acos();
                (a, 2.0 * a)
            };
            let h = span / CIRCLE_NODES as f64;
            let sum: f64 = (0..CIRCLE_NODES)
                .map(|k| at((-a0 + k as f64 * h).cos()))
                .sum();
            sum * h / (2.0 * PI)
        } else {
            let lo = kappa.max(-1.0);
            let rule = GaussLegendre::get(CAP_NODES);
            let w = (1.0 - lo) / CAP_PANELS as f64;
            let sum: f64 = (0..CAP_PANELS)
                .map(|p| {
                    let a = lo + p as f64 * w;
                    rule.integrate(a, a + w, at)
                })
                .sum();
            0.5 * sum
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phantom {
    pub dim: usize,
    pub bumps: Vec<Bump>,
}

impl Phantom {
    pub fn new(dim: usize, bumps: Vec<Bump>) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::UnsupportedDimension(dim));
        }
        for b in &bumps {
            if !(b.radius > 0.0 && b.radius.is_finite()) || !b.amplitude.is_finite() {
                return Err(Error::Contract("bump radius must be positive".into()));
            }
            if dim == 2 && b.center.z != 0.0 {
                return Err(Error::Contract("planar bump center has a z component".into()));
            }
        }
        Ok(Self { dim, bumps })
    }

    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            bumps: Vec::new(),
        }
    }

    pub fn eval(&self, x: &Point) -> f64 {
        self.bumps.iter().map(|b| b.eval(x)).sum()
    }

    /// Multiplies every amplitude by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for b in &mut out.bumps {
            b.amplitude *= factor;
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.bumps.iter().map(|b| b.amplitude.abs()).fold(0.0, f64::max)
    }

    /// `int f dx` in closed form up to a one-dimensional radial quadrature.
    pub fn integral(&self) -> f64 {
        let rule = GaussLegendre::get(200);
        self.bumps
            .iter()
            .map(|b| {
                let surface = if self.dim == 2 { 2.0 * PI } else { 4.0 * PI };
                surface
                    * rule.integrate(0.0, b.radius, |s| {
                        b.profile(s) * s.powi(self.dim as i32 - 1)
                    })
            })
            .sum()
    }

    /// Checks that every bump support stays inside the domain, using the support function
    /// along 64 directions.
    pub fn check_inside(&self, domain: &ConvexDomain) -> Result<()> {
        if domain.dim() != self.dim {
            return Err(Error::Contract("phantom and domain dimensions differ".into()));
        }
        for (i, b) in self.bumps.iter().enumerate() {
            if !domain.indicator(&b.center) || domain.inner_distance(&b.center, 64) <= b.radius {
                return Err(Error::Contract(format!(
                    "bump {i} is not supported strictly inside the domain"
                )));
            }
        }
        Ok(())
    }
}

/// Average of `f` over the sphere of radius `r` about `x`.
pub fn spherical_mean(f: &Phantom, x: &Point, r: f64) -> Result<f64> {
    if !(r >= 0.0) {
        return Err(Error::Contract(format!("radius must be non-negative, got {r}")));
    }
    if r == 0.0 {
        return Ok(f.eval(x));
    }
    Ok(f.bumps.iter().map(|b| b.sphere_mean(f.dim, x, r)).sum())
}

/// Spherical means on boundary nodes times a uniform radius grid.
#[derive(Debug, Clone)]
pub struct MeansData {
    pub dim: usize,
    pub quadrature: SurfaceQuadrature,
    pub r_max: f64,
    pub radial_count: usize,
    /// Row-major over (boundary node, radius).
    pub values: Vec<f64>,
    pub filtered: Option<FilteredMeans>,
}

/// Output of [`radial_filter`]; `derivative` holds `d g / d r` in the plane, where the
/// backprojection needs it.
#[derive(Debug, Clone)]
pub struct FilteredMeans {
    pub values: Vec<f64>,
    pub derivative: Option<Vec<f64>>,
    pub tail: f64,
}

impl MeansData {
    pub fn spacing(&self) -> f64 {
        self.r_max / (self.radial_count - 1) as f64
    }

    pub fn radius(&self, j: usize) -> f64 {
        j as f64 * self.spacing()
    }

    pub fn node_count(&self) -> usize {
        self.quadrature.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.radial_count..(i + 1) * self.radial_count]
    }

    /// Attaches the radial filter.
    pub fn apply_filter(&mut self) -> Result<()> {
        self.filtered = Some(radial_filter(self)?);
        Ok(())
    }
}

/// Samples `M f` on `boundary_resolution` boundary nodes and `radial_resolution` radii
/// uniform on `[0, 1.05 diam]`.
pub fn means_dataset(
    f: &Phantom,
    domain: &ConvexDomain,
    boundary_resolution: usize,
    radial_resolution: usize,
) -> Result<MeansData> {
    if radial_resolution < 16 {
        return Err(Error::Resolution {
            name: "radial_resolution",
            value: radial_resolution,
            min: 16,
        });
    }
    if f.dim != domain.dim() {
        return Err(Error::Contract("phantom and domain dimensions differ".into()));
    }
    let quadrature = domain.boundary_quadrature(boundary_resolution)?;
    let r_max = 1.05 * domain.diameter();
    let h = r_max / (radial_resolution - 1) as f64;
    let values: Vec<f64> = quadrature
        .nodes
        .par_iter()
        .flat_map_iter(|x| {
            (0..radial_resolution).map(move |j| {
                let r = j as f64 * h;
                if r == 0.0 {
                    f.eval(x)
                } else {
                    f.bumps.iter().map(|b| b.sphere_mean(f.dim, x, r)).sum()
                }
            })
        })
        .collect();
    Ok(MeansData {
        dim: domain.dim(),
        quadrature,
        r_max,
        radial_count: radial_resolution,
        values,
        filtered: None,
    })
}

/// `g` from `M`, `M'` and `M''` at radius `r`: `M'` in the plane and
/// `d/dr [(2r)^{-1} d/dr (r M)] = M''/2 + M'/(2r) - M/(2r^2)` in space.
pub fn compose_filter(dim: usize, r: f64, m: f64, m1: f64, m2: f64) -> f64 {
    if dim == 2 {
        m1
    } else if r == 0.0 {
        // limit for M(0) = 0 and M even in r
        0.75 * m2
    } else {
        0.5 * m2 + 0.5 * m1 / r - 0.5 * m / (r * r)
    }
}

/// Radial derivatives of every row by cosine-series differentiation of the even,
/// `2 R_max`-periodic extension (spherical means are even in `r` and vanish near `R_max`).
pub fn radial_filter(data: &MeansData) -> Result<FilteredMeans> {
    let m = data.radial_count;
    let len = 2 * (m - 1);
    let h = data.spacing();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(len);
    let inv = planner.plan_fft_inverse(len);
    let freq: Vec<f64> = (0..len)
        .map(|k| {
            let kk = if k <= len / 2 { k as f64 } else { k as f64 - len as f64 };
            2.0 * PI * kk / (len as f64 * h)
        })
        .collect();
    let rows: Vec<(Vec<[f64; 3]>, f64)> = (0..data.node_count())
        .into_par_iter()
        .map(|i| {
            let row = data.row(i);
            let mut buf: Vec<Complex<f64>> = (0..len)
                .map(|j| Complex::new(row[if j < m { j } else { len - j }], 0.0))
                .collect();
            fwd.process(&mut buf);
            let scale = buf.iter().map(|c| c.norm()).fold(0.0, f64::max);
            let start = len / 2 - len / 20;
            let tail = if scale > 0.0 {
                buf[start..=len / 2 + len / 20]
                    .iter()
                    .map(|c| c.norm())
                    .fold(0.0, f64::max)
                    / scale
            } else {
                0.0
            };
            let mut derivs = vec![[0.0; 3]; m];
            for (j, d) in derivs.iter_mut().enumerate() {
                d[0] = row[j];
            }
            for order in 1..3 {
                let mut spec: Vec<Complex<f64>> = buf
                    .iter()
                    .zip(&freq)
                    .enumerate()
                    .map(|(k, (c, &w))| {
                        if order % 2 == 1 && k == len / 2 {
                            return Complex::new(0.0, 0.0);
                        }
                        c * Complex::new(0.0, w).powu(order as u32)
                    })
                    .collect();
                inv.process(&mut spec);
                for (j, d) in derivs.iter_mut().enumerate() {
                    d[order] = spec[j].re / len as f64;
                }
            }
            (derivs, tail)
        })
        .collect();
    let tail = rows.iter().map(|(_, t)| *t).fold(0.0, f64::max);
    if tail > FILTER_TAIL_LIMIT {
        return Err(Error::NonConvergedFilter {
            tail,
            limit: FILTER_TAIL_LIMIT,
        });
    }
    let mut values = Vec::with_capacity(data.values.len());
    let mut derivative = Vec::with_capacity(data.values.len());
    for (derivs, _) in &rows {
        for (j, d) in derivs.iter().enumerate() {
            values.push(compose_filter(data.dim, j as f64 * h, d[0], d[1], d[2]));
            derivative.push(d[2]);
        }
    }
    Ok(FilteredMeans {
        values,
        derivative: (data.dim == 2).then_some(derivative),
        tail,
    })
}

/// Four-point Lagrange interpolation of samples `y_j = y(j h)`; zero beyond the grid.
pub fn interpolate_uniform(y: &[f64], h: f64, r: f64) -> f64 {
    let n = y.len();
    let s = r / h;
    if !(s >= 0.0) || s > (n - 1) as f64 {
        return 0.0;
    }
    let base = (s.floor() as usize).clamp(1, n - 3) - 1;
    let x = s - base as f64;
    let (a, b, c, d) = (y[base], y[base + 1], y[base + 2], y[base + 3]);
    // nodes 0, 1, 2, 3
    let l0 = -(x - 1.0) * (x - 2.0) * (x - 3.0) / 6.0;
    let l1 = x * (x - 2.0) * (x - 3.0) / 2.0;
    let l2 = -x * (x - 1.0) * (x - 3.0) / 2.0;
    let l3 = x * (x - 1.0) * (x - 2.0) / 6.0;
    a * l0 + b * l1 + c * l2 + d * l3
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{point2, rotation_2d};
    use nalgebra::Matrix3;

    fn bump2(x: f64, y: f64, rho: f64) -> Bump {
        Bump {
            center: point2(x, y),
            radius: rho,
            amplitude: 1.0,
        }
    }

    /// Adaptive Simpson on `[a, b]`.
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let lm = 0.5 * (a + m);
            let rm = 0.5 * (m + b);
            let (flm, frm) = (f(lm), f(rm));
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth > 40 || (left + right - whole).abs() <= 15.0 * tol {
                return left + right + (left + right - whole) / 15.0;
            }
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth + 1)
                + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth + 1)
        }
        let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        rec(f, a, b, fa, fm, fb, whole, tol, 0)
    }

    #[test]
    fn mean_at_zero_radius_and_disjoint() {
        let f = Phantom::new(2, vec![bump2(0.2, 0.1, 0.5)]).unwrap();
        let x = point2(0.3, 0.0);
        assert_eq!(spherical_mean(&f, &x, 0.0).unwrap(), f.eval(&x));
        assert_eq!(spherical_mean(&f, &point2(2.0, 0.0), 0.5).unwrap(), 0.0);
        assert!(spherical_mean(&f, &x, -1.0).is_err());
    }

    #[test]
    fn planar_mean_against_simpson_oracle() {
        let b = bump2(0.3, -0.2, 0.6);
        let f = Phantom::new(2, vec![b]).unwrap();
        let x = point2(2.0, 0.0);
        for r in [(x - b.center).norm(), 1.4, 2.1, 2.3] {
            let oracle = simpson(
                &|th: f64| f.eval(&(x + point2(th.cos(), th.sin()) * r)),
                0.0,
                2.0 * PI,
                1e-13,
            ) / (2.0 * PI);
            let v = spherical_mean(&f, &x, r).unwrap();
            assert!((v - oracle).abs() < 1e-9, "r={r} v={v} oracle={oracle}");
        }
    }

    #[test]
    fn spatial_mean_against_simpson_oracle() {
        let b = Bump {
            center: Point::new(0.1, 0.2, -0.1),
            radius: 0.5,
            amplitude: 2.0,
        };
        let f = Phantom::new(3, vec![b]).unwrap();
        let x = Point::new(1.0, 0.0, 0.0);
        let d = (x - b.center).norm();
        for r in [d, 0.7, 1.2] {
            // mean = 1/2 int_{-1}^{1} f(c + |x - c + r u|) dz with z the cosine to c - x
            let integrand = |z: f64| b.profile((r * r + d * d - 2.0 * r * d * z).max(0.0).sqrt());
            let lo = ((r * r + d * d - b.radius * b.radius) / (2.0 * r * d)).max(-1.0);
            let oracle = 0.5 * simpson(&integrand, lo, 1.0, 1e-15);
            let v = spherical_mean(&f, &x, r).unwrap();
            assert!((v - oracle).abs() < 1e-9, "r={r} v={v} oracle={oracle}");
        }
    }

    #[test]
    fn dataset_support_and_mass() {
        let domain = ConvexDomain::ellipse(2.0, 1.0).unwrap();
        let f = Phantom::new(2, vec![bump2(0.4, 0.1, 0.5)]).unwrap();
        f.check_inside(&domain).unwrap();
        let data = means_dataset(&f, &domain, 64, 512).unwrap();
        assert!((data.r_max - 1.05 * 4.0).abs() < 1e-9);
        let h = data.spacing();
        for i in 0..data.node_count() {
            let row = data.row(i);
            assert_eq!(row[0], 0.0);
            for (j, v) in row.iter().enumerate() {
                assert!(*v >= -1e-12);
                if j as f64 * h > domain.diameter() {
                    assert!(v.abs() <= 1e-14);
                }
            }
            let mass = 2.0 * PI * row.iter().enumerate().map(|(j, v)| v * j as f64 * h).sum::<f64>() * h;
            assert!((mass - f.integral()).abs() < 5e-3 * f.integral());
        }
        let zero = means_dataset(&Phantom::zero(2), &domain, 16, 16).unwrap();
        assert!(zero.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dataset_is_linear() {
        let domain = ConvexDomain::ball(2, 1.0).unwrap();
        let f1 = Phantom::new(2, vec![bump2(0.1, 0.1, 0.4)]).unwrap();
        let f2 = Phantom::new(2, vec![bump2(-0.3, 0.0, 0.3)]).unwrap();
        let mut both = f1.scaled(2.0);
        both.bumps.extend(f2.scaled(-0.5).bumps);
        let a = means_dataset(&f1, &domain, 32, 64).unwrap();
        let b = means_dataset(&f2, &domain, 32, 64).unwrap();
        let c = means_dataset(&both, &domain, 32, 64).unwrap();
        for k in 0..a.values.len() {
            assert!((c.values[k] - 2.0 * a.values[k] + 0.5 * b.values[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn rotation_equivariance_on_disk() {
        let f = Phantom::new(2, vec![bump2(0.2, 0.1, 0.4), bump2(-0.3, -0.2, 0.3)]).unwrap();
        let q = rotation_2d(0.7);
        let rotated = Phantom::new(
            2,
            f.bumps
                .iter()
                .map(|b| Bump {
                    center: q.transpose() * b.center,
                    ..*b
                })
                .collect(),
        )
        .unwrap();
        // f o Q has bumps at Q^T c
        for k in 0..20 {
            let x = point2((k as f64).cos(), (k as f64).sin());
            let r = 0.3 + 0.08 * k as f64;
            let lhs = spherical_mean(&f, &(q * x), r).unwrap();
            let rhs = spherical_mean(&rotated, &x, r).unwrap();
            assert!((lhs - rhs).abs() < 1e-9);
        }
    }

    #[test]
    fn filter_of_constant_and_synthetic_cube() {
        let domain = ConvexDomain::ball(2, 1.0).unwrap();
        let mut data = means_dataset(&Phantom::zero(2), &domain, 16, 64).unwrap();
        data.values.iter_mut().for_each(|v| *v = 3.0);
        let g = radial_filter(&data).unwrap();
        assert!(g.values.iter().all(|v| v.abs() < 1e-12));
        // M = r^3 in space: r M = r^4, D_r r^4 = 2 r^2, g = 4 r
        for r in [0.1, 0.5, 1.3] {
            let g = compose_filter(3, r, r.powi(3), 3.0 * r * r, 6.0 * r);
            assert!((g - 4.0 * r).abs() < 1e-14);
        }
    }

    #[test]
    fn filter_matches_analytic_derivatives() {
        // even band-limited data: cos(2 pi k r / (2R)) terms
        let domain = ConvexDomain::ball(3, 1.0).unwrap();
        let mut data = means_dataset(&Phantom::zero(3), &domain, 16, 128).unwrap();
        let w = PI / data.r_max;
        let h = data.spacing();
        for i in 0..data.node_count() {
            for j in 0..data.radial_count {
                let r = j as f64 * h;
                data.values[i * data.radial_count + j] = 1.0 - (3.0 * w * r).cos();
            }
        }
        let g = radial_filter(&data).unwrap();
        for j in 1..data.radial_count {
            let r = j as f64 * h;
            let m = 1.0 - (3.0 * w * r).cos();
            let m1 = 3.0 * w * (3.0 * w * r).sin();
            let m2 = 9.0 * w * w * (3.0 * w * r).cos();
            let expect = 0.5 * m2 + 0.5 * m1 / r - 0.5 * m / (r * r);
            assert!((g.values[j] - expect).abs() < 1e-9 * (1.0 + expect.abs()));
        }
        assert!((g.values[0] - 0.75 * 9.0 * w * w).abs() < 1e-9);
    }

    #[test]
    fn filter_rejects_unresolved_data() {
        let domain = ConvexDomain::ball(2, 1.0).unwrap();
        let f = Phantom::new(2, vec![bump2(0.0, 0.0, 0.05)]).unwrap();
        let mut data = means_dataset(&f, &domain, 16, 32).unwrap();
        assert!(matches!(data.apply_filter(), Err(Error::NonConvergedFilter { .. })));
    }

    #[test]
    fn filter_self_convergence_and_homogeneity() {
        let domain = ConvexDomain::ellipsoid(2, &[2.0, 1.0], &[0.0, 0.0], Matrix3::identity()).unwrap();
        let f = Phantom::new(2, vec![bump2(0.3, 0.1, 0.8)]).unwrap();
        let coarse = means_dataset(&f, &domain, 16, 512).unwrap();
        let fine = means_dataset(&f, &domain, 16, 1023).unwrap();
        let gc = radial_filter(&coarse).unwrap();
        let gf = radial_filter(&fine).unwrap();
        let scale = gf.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        for i in 0..16 {
            for j in 0..coarse.radial_count {
                let a = gc.values[i * coarse.radial_count + j];
                let b = gf.values[i * fine.radial_count + 2 * j];
                assert!((a - b).abs() < 1e-6 * scale, "i={i} j={j} {a} {b} scale={scale}");
            }
        }
        let doubled = means_dataset(&f.scaled(2.0), &domain, 16, 512).unwrap();
        let g2 = radial_filter(&doubled).unwrap();
        for (a, b) in gc.values.iter().zip(&g2.values) {
            assert!((2.0 * a - b).abs() < 1e-12 * scale);
        }
    }

    #[test]
    fn cubic_interpolation_is_exact_for_cubics() {
        let h = 0.1;
        let y: Vec<f64> = (0..20).map(|j| (j as f64 * h).powi(3) - j as f64 * h).collect();
        for r in [0.0, 0.05, 0.93, 1.84, 1.9] {
            assert!((interpolate_uniform(&y, h, r) - (r.powi(3) - r)).abs() < 1e-12);
        }
        assert_eq!(interpolate_uniform(&y, h, 2.5), 0.0);
    }
}
