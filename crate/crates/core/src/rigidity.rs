//! Ellipsoidality diagnostics: moment polynomiality under the vanishing-kernel profile
//! model, centre and support-form recovery, endpoint exponents, and an aggregate verdict.

use std::f64::consts::PI;
use std::fmt;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{uniform_directions, ConvexDomain, Point};
use crate::inversion::error_kernel;
use crate::quadrature::GaussLegendre;
use crate::transforms::{chord_profile_adaptive, default_mode_count, radon_chi, ChordProfile};

#[derive(Debug, Clone, Copy, Serialize)]
pub struct MomentValue {
    pub value: f64,
    pub converged: bool,
}

fn profile(domain: &ConvexDomain, omega: &Point) -> Result<ChordProfile> {
    let start = default_mode_count(domain.dim());
    let max = if domain.dim() == 2 { 2049 } else { 257 };
    chord_profile_adaptive(domain, omega, start, max)
}

/// `int R chi(omega, t) t^k dt`.
pub fn moment(domain: &ConvexDomain, k: u32, omega: &Point) -> Result<MomentValue> {
    if k > 3 {
        return Err(Error::OutOfRange {
            what: "k",
            value: k as f64,
            range: "{0, 1, 2, 3}".into(),
        });
    }
    let p = profile(domain, omega)?;
    Ok(MomentValue {
        value: p.integrate(|t| t.powi(k as i32)),
        converged: p.converged,
    })
}

/// `int_{-1}^{1} (1-u^2)^{(n-1)/2} (c u + b)^k du` through `u = cos(theta)`.
fn model_integral(dim: usize, k: u32, b: f64, c: f64) -> f64 {
    let rule = GaussLegendre::get(48);
    rule.integrate(0.0, PI, |th| th.sin().powi(dim as i32) * (c * th.cos() + b).powi(k as i32))
}

/// Moment of the profile model `A(omega) (t - h-)^{(n-1)/2} (h+ - t)^{(n-1)/2}` with `A`
/// fixed by the measured zeroth moment. For ellipsoids the model is the profile itself.
pub fn model_moment(domain: &ConvexDomain, k: u32, omega: &Point) -> Result<MomentValue> {
    let m0 = moment(domain, 0, omega)?;
    let s = domain.support_interval(omega)?;
    let (b, c) = (s.midpoint(), s.half_width());
    let dim = domain.dim();
    Ok(MomentValue {
        value: m0.value * model_integral(dim, k, b, c) / model_integral(dim, 0, b, c),
        converged: m0.converged,
    })
}

fn monomials(dim: usize, k: u32) -> Vec<[u32; 3]> {
    let mut out = Vec::new();
    for a in 0..=k {
        if dim == 2 {
            out.push([a, k - a, 0]);
        } else {
            for b in 0..=k - a {
                out.push([a, b, k - a - b]);
            }
        }
    }
    out
}

/// `|y - X c| / |y|` for the least-squares fit of a homogeneous degree-`k` polynomial.
fn polynomial_fit_residual(dirs: &[Point], y: &[f64], dim: usize, k: u32, scale: f64) -> Result<f64> {
    let mons = monomials(dim, k);
    let needed = mons.len();
    let x = DMatrix::from_fn(dirs.len(), needed, |i, j| {
        (0..dim).map(|a| dirs[i][a].powi(mons[j][a] as i32)).product()
    });
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let rank = svd.singular_values.iter().filter(|s| **s > 1e-10 * smax).count();
    if rank < needed {
        return Err(Error::InsufficientDirections { rank, needed });
    }
    let yv = DVector::from_column_slice(y);
    let coef = svd
        .solve(&yv, 1e-12 * smax)
        .map_err(|e| Error::Contract(e.to_string()))?;
    let norm = yv.norm();
    if norm <= 1e-13 * scale * (y.len() as f64).sqrt() {
        return Ok(0.0);
    }
    Ok((&x * coef - yv).norm() / norm)
}

fn check_direction_count(dim: usize, k: u32, count: usize) -> Result<()> {
    let needed = 4 * monomials(dim, k).len();
    if count < needed {
        return Err(Error::InsufficientDirections {
            rank: count,
            needed,
        });
    }
    Ok(())
}

/// Per-direction samples shared by the moment diagnostics.
#[derive(Debug, Clone)]
struct DirectionSample {
    omega: Point,
    b: f64,
    c: f64,
    raw: [f64; 4],
    converged: bool,
}

fn direction_samples(domain: &ConvexDomain, count: usize) -> Result<Vec<DirectionSample>> {
    uniform_directions(domain.dim(), count)
        .par_iter()
        .map(|w| {
            let p = profile(domain, w)?;
            let mut raw = [0.0; 4];
            for (k, r) in raw.iter_mut().enumerate() {
                *r = p.integrate(|t| t.powi(k as i32));
            }
            Ok(DirectionSample {
                omega: *w,
                b: p.interval.midpoint(),
                c: p.interval.half_width(),
                raw,
                converged: p.converged,
            })
        })
        .collect()
}

fn model_values(dim: usize, k: u32, samples: &[DirectionSample]) -> Vec<f64> {
    samples
        .iter()
        .map(|s| s.raw[0] * model_integral(dim, k, s.b, s.c) / model_integral(dim, 0, s.b, s.c))
        .collect()
}

fn moment_scale(domain: &ConvexDomain, samples: &[DirectionSample], k: u32) -> f64 {
    let m0 = samples.iter().map(|s| s.raw[0].abs()).fold(0.0, f64::max);
    m0 * domain.diameter().powi(k as i32)
}

/// Relative residual of fitting the model moment `M_k` over `direction_count` uniform
/// directions by a homogeneous polynomial of degree `k`.
pub fn moment_residual(domain: &ConvexDomain, k: u32, direction_count: usize) -> Result<f64> {
    check_direction_count(domain.dim(), k, direction_count)?;
    let samples = direction_samples(domain, direction_count)?;
    let dirs: Vec<Point> = samples.iter().map(|s| s.omega).collect();
    let y = model_values(domain.dim(), k, &samples);
    polynomial_fit_residual(&dirs, &y, domain.dim(), k, moment_scale(domain, &samples, k))
}

/// The same fit applied to the measured moments, which are polynomial for every domain.
pub fn raw_moment_residual(domain: &ConvexDomain, k: u32, direction_count: usize) -> Result<f64> {
    check_direction_count(domain.dim(), k, direction_count)?;
    let samples = direction_samples(domain, direction_count)?;
    let dirs: Vec<Point> = samples.iter().map(|s| s.omega).collect();
    let y: Vec<f64> = samples.iter().map(|s| s.raw[k as usize]).collect();
    polynomial_fit_residual(&dirs, &y, domain.dim(), k, moment_scale(domain, &samples, k))
}

fn default_direction_count(dim: usize) -> usize {
    if dim == 2 {
        64
    } else {
        128
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CenterEstimate {
    pub center: Point,
    /// `|B - b . omega| / |C|` over the sampled directions.
    pub residual: f64,
}

/// Fits `B(omega) = (h+ + h-)/2` by `b . omega`.
pub fn estimate_center(domain: &ConvexDomain) -> Result<CenterEstimate> {
    let dim = domain.dim();
    let dirs = uniform_directions(dim, default_direction_count(dim));
    let mut bs = Vec::with_capacity(dirs.len());
    let mut cs = Vec::with_capacity(dirs.len());
    for w in &dirs {
        let s = domain.support_interval(w)?;
        bs.push(s.midpoint());
        cs.push(s.half_width());
    }
    let x = DMatrix::from_fn(dirs.len(), dim, |i, j| dirs[i][j]);
    let y = DVector::from_vec(bs);
    let sol = x
        .clone()
        .svd(true, true)
        .solve(&y, 1e-14)
        .map_err(|e| Error::Contract(e.to_string()))?;
    let mut center = Point::zeros();
    for j in 0..dim {
        center[j] = sol[j];
    }
    let residual = (&x * &sol - &y).norm() / DVector::from_vec(cs).norm();
    Ok(CenterEstimate { center, residual })
}

#[derive(Debug, Clone, Serialize)]
pub struct FormEstimate {
    /// Symmetric `S` with `h^2(omega) ~ omega . S omega` about the estimated centre.
    pub matrix: Matrix3<f64>,
    pub residual: f64,
    /// Square roots of the eigenvalues of `S`, descending.
    pub semi_axes: Vec<f64>,
}

/// Fits the squared support function about `center` by a quadratic form.
pub fn estimate_quadratic_form(domain: &ConvexDomain, center: &Point) -> Result<FormEstimate> {
    let dim = domain.dim();
    let dirs = uniform_directions(dim, default_direction_count(dim));
    let pairs: Vec<(usize, usize)> = (0..dim).flat_map(|i| (i..dim).map(move |j| (i, j))).collect();
    let mut y = Vec::with_capacity(dirs.len());
    for w in &dirs {
        let h = domain.support_interval(w)?.h_plus - center.dot(w);
        y.push(h * h);
    }
    let x = DMatrix::from_fn(dirs.len(), pairs.len(), |r, c| {
        let (i, j) = pairs[c];
        let f = if i == j { 1.0 } else { 2.0 };
        f * dirs[r][i] * dirs[r][j]
    });
    let yv = DVector::from_vec(y);
    let sol = x
        .clone()
        .svd(true, true)
        .solve(&yv, 1e-14)
        .map_err(|e| Error::Contract(e.to_string()))?;
    let residual = (&x * &sol - &yv).norm() / yv.norm();
    let mut s = Matrix3::zeros();
    for (c, &(i, j)) in pairs.iter().enumerate() {
        s[(i, j)] = sol[c];
        s[(j, i)] = sol[c];
    }
    let sub = s.view((0, 0), (dim, dim)).into_owned();
    let eig = SymmetricEigen::new(sub).eigenvalues;
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min > 0.0) {
        return Err(Error::NonConvexFit(min));
    }
    let mut semi_axes: Vec<f64> = eig.iter().map(|e| e.sqrt()).collect();
    semi_axes.sort_by(|a, b| b.total_cmp(a));
    Ok(FormEstimate {
        matrix: s,
        residual,
        semi_axes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Plus,
    Minus,
}

/// Below this Gaussian curvature at the tangency point a direction counts as irregular.
pub const CURVATURE_FLOOR: f64 = 1e-6;

/// Log-log slope of `R chi(omega, t)` against the distance to the chosen endpoint, from
/// direct evaluations at 11 geometrically spaced distances in `[1e-5, 1e-2]` times the width.
pub fn endpoint_exponent(domain: &ConvexDomain, omega: &Point, side: Side) -> Result<f64> {
    let s = domain.support_interval(omega)?;
    let tangency = match side {
        Side::Plus => s.a_plus,
        Side::Minus => s.a_minus,
    };
    let curvature = domain.curvature_at(&tangency);
    if !(curvature.abs() > CURVATURE_FLOOR) {
        return Err(Error::IrregularDirection { curvature });
    }
    let w = s.width();
    let pts: Vec<(f64, f64)> = (0..11)
        .map(|j| {
            let delta = w * 10f64.powf(-5.0 + 0.3 * j as f64);
            let t = match side {
                Side::Plus => s.h_plus - delta,
                Side::Minus => s.h_minus + delta,
            };
            Ok((delta.ln(), radon_chi(domain, omega, t)?.ln()))
        })
        .collect::<Result<_>>()?;
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    Ok(sxy / sxx)
}

/// Per-diagnostic acceptance levels; the non-ellipsoid verdict needs `trip_factor` times more.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    pub kernel: f64,
    pub moment: f64,
    pub form: f64,
    pub exponent: f64,
    pub trip_factor: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            kernel: 1e-5,
            moment: 1e-5,
            form: 1e-4,
            exponent: 0.05,
            trip_factor: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    EllipsoidConsistent,
    NonEllipsoid,
    Inconclusive,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::EllipsoidConsistent => "ellipsoid-consistent",
            Verdict::NonEllipsoid => "non-ellipsoid",
            Verdict::Inconclusive => "inconclusive",
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExponentFit {
    pub direction: Point,
    pub side: Side,
    pub exponent: Option<f64>,
    pub target: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RigidityReport {
    pub dim: usize,
    pub kernel_pairs: usize,
    pub kernel_failures: usize,
    pub kernel_sup: f64,
    /// `kernel_sup diam^n` over the same quantity for the unit p = 4 superellipse.
    pub kernel_sup_relative: f64,
    /// Model-moment residuals for k = 0, 1, 2, 3; only k <= 2 enter the verdict.
    pub moment_residuals: Vec<f64>,
    /// Residuals of the measured moments, which should vanish for every domain.
    pub raw_moment_residuals: Vec<f64>,
    pub unconverged_directions: usize,
    pub exponent_fits: Vec<ExponentFit>,
    pub estimated_center: Point,
    pub center_residual: f64,
    pub estimated_form: Option<Matrix3<f64>>,
    pub semi_axes: Vec<f64>,
    pub form_residual: f64,
    pub failures: Vec<String>,
    pub checks: Vec<Check>,
    pub verdict: Verdict,
}

impl RigidityReport {
    /// Plain-text table of the checks and estimates.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("{:<22} {:>12} {:>12}  status\n", "diagnostic", "value", "threshold"));
        for c in &self.checks {
            s.push_str(&format!(
                "{:<22} {:>12.3e} {:>12.3e}  {}\n",
                c.name,
                c.value,
                c.threshold,
                if c.passed { "ok" } else { "FAIL" }
            ));
        }
        let center: Vec<String> = (0..self.dim)
            .map(|j| format!("{:.6}", self.estimated_center[j]))
            .collect();
        let axes: Vec<String> = self.semi_axes.iter().map(|a| format!("{a:.6}")).collect();
        s.push_str(&format!("center     ({})\n", center.join(", ")));
        s.push_str(&format!("semi-axes  ({})\n", axes.join(", ")));
        s.push_str(&format!("verdict    {}\n", self.verdict));
        s
    }
}

fn reference_scale(dim: usize) -> Result<f64> {
    static CACHE: [OnceLock<f64>; 2] = [OnceLock::new(), OnceLock::new()];
    let cell = &CACHE[if dim == 2 { 0 } else { 1 }];
    if let Some(v) = cell.get() {
        return Ok(*v);
    }
    let axes = vec![1.0; dim];
    let d = ConvexDomain::superellipse(dim, 4, &axes, &vec![0.0; dim], Matrix3::identity())?;
    let (sup, _, _) = kernel_statistics(&d, 64, 0x5eed)?;
    // the kernel scales like length^{-n}
    let v = sup * d.diameter().powi(dim as i32);
    Ok(*cell.get_or_init(|| v))
}

/// `(max |k|, evaluated pairs, failed pairs)` over seeded interior pairs.
fn kernel_statistics(domain: &ConvexDomain, pairs: usize, seed: u64) -> Result<(f64, usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts: Vec<(Point, Point)> = (0..pairs)
        .map(|_| (domain.sample_interior(&mut rng, 0.0), domain.sample_interior(&mut rng, 0.0)))
        .collect();
    let vals: Vec<Option<f64>> = pts
        .par_iter()
        .map(|(a, b)| error_kernel(domain, a, b).ok().map(|k| k.value.abs()))
        .collect();
    let ok: Vec<f64> = vals.iter().flatten().copied().collect();
    Ok((ok.iter().copied().fold(0.0, f64::max), ok.len(), pairs - ok.len()))
}

/// Options of [`rigidity_report`].
#[derive(Debug, Clone, Copy)]
pub struct RigidityOptions {
    pub thresholds: Thresholds,
    pub kernel_pairs: usize,
    pub exponent_directions: usize,
    pub seed: u64,
}

impl Default for RigidityOptions {
    fn default() -> Self {
        Self {
            thresholds: Thresholds::default(),
            kernel_pairs: 200,
            exponent_directions: 16,
            seed: 1,
        }
    }
}

/// Runs every diagnostic and combines them into a verdict.
pub fn rigidity_report(domain: &ConvexDomain, opts: &RigidityOptions) -> Result<RigidityReport> {
    let dim = domain.dim();
    let th = opts.thresholds;
    let mut failures = Vec::new();

    let (kernel_sup, kernel_pairs, kernel_failures) =
        kernel_statistics(domain, opts.kernel_pairs, opts.seed)?;
    let kernel_sup_relative =
        kernel_sup * domain.diameter().powi(dim as i32) / reference_scale(dim)?;

    let count = default_direction_count(dim);
    let samples = direction_samples(domain, count)?;
    let dirs: Vec<Point> = samples.iter().map(|s| s.omega).collect();
    let mut moment_residuals = Vec::new();
    let mut raw_moment_residuals = Vec::new();
    for k in 0..4u32 {
        let scale = moment_scale(domain, &samples, k);
        let model = model_values(dim, k, &samples);
        let raw: Vec<f64> = samples.iter().map(|s| s.raw[k as usize]).collect();
        moment_residuals.push(polynomial_fit_residual(&dirs, &model, dim, k, scale)?);
        raw_moment_residuals.push(polynomial_fit_residual(&dirs, &raw, dim, k, scale)?);
    }
    let unconverged_directions = samples.iter().filter(|s| !s.converged).count();

    let target = (dim as f64 - 1.0) / 2.0;
    let exponent_fits: Vec<ExponentFit> = uniform_directions(dim, opts.exponent_directions)
        .par_iter()
        .map(|w| match endpoint_exponent(domain, w, Side::Plus) {
            Ok(e) => ExponentFit {
                direction: *w,
                side: Side::Plus,
                exponent: Some(e),
                target,
                error: None,
            },
            Err(e) => ExponentFit {
                direction: *w,
                side: Side::Plus,
                exponent: None,
                target,
                error: Some(e.to_string()),
            },
        })
        .collect();
    let exponent_deviation = exponent_fits
        .iter()
        .filter_map(|f| f.exponent.map(|e| (e - target).abs()))
        .fold(0.0, f64::max);
    for f in &exponent_fits {
        if let Some(e) = &f.error {
            failures.push(format!("exponent at {:?}: {e}", f.direction.as_slice()));
        }
    }

    let center = estimate_center(domain)?;
    let (estimated_form, semi_axes, form_residual) = match estimate_quadratic_form(domain, &center.center) {
        Ok(f) => (Some(f.matrix), f.semi_axes, f.residual),
        Err(e) => {
            failures.push(format!("quadratic form: {e}"));
            (None, Vec::new(), f64::INFINITY)
        }
    };

    let mut checks = vec![Check {
        name: "kernel_sup_relative".into(),
        value: kernel_sup_relative,
        threshold: th.kernel,
        passed: kernel_sup_relative <= th.kernel,
    }];
    for (k, r) in moment_residuals.iter().take(3).enumerate() {
        checks.push(Check {
            name: format!("moment_residual_k{k}"),
            value: *r,
            threshold: th.moment,
            passed: *r <= th.moment,
        });
    }
    checks.push(Check {
        name: "form_residual".into(),
        value: form_residual,
        threshold: th.form,
        passed: form_residual <= th.form,
    });
    checks.push(Check {
        name: "exponent_deviation".into(),
        value: exponent_deviation,
        threshold: th.exponent,
        passed: exponent_deviation <= th.exponent,
    });
    let verdict = if checks.iter().all(|c| c.passed) {
        Verdict::EllipsoidConsistent
    } else if checks.iter().any(|c| !(c.value <= th.trip_factor * c.threshold)) {
        Verdict::NonEllipsoid
    } else {
        Verdict::Inconclusive
    };

    Ok(RigidityReport {
        dim,
        kernel_pairs,
        kernel_failures,
        kernel_sup,
        kernel_sup_relative,
        moment_residuals,
        raw_moment_residuals,
        unconverged_directions,
        exponent_fits,
        estimated_center: center.center,
        center_residual: center.residual,
        estimated_form,
        semi_axes,
        form_residual,
        failures,
        checks,
        verdict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{direction_2d, point2, rotation_2d};
    use proptest::prelude::*;

    fn superellipse(p: u32) -> ConvexDomain {
        ConvexDomain::superellipse(2, p, &[1.0, 1.0], &[0.0, 0.0], Matrix3::identity()).unwrap()
    }

    fn quick() -> RigidityOptions {
        RigidityOptions {
            kernel_pairs: 40,
            ..Default::default()
        }
    }

    /// Area of `|x|^4 + |y|^4 <= 1` by Simpson's rule after `x = 1 - v^4`.
    fn superellipse_area_oracle() -> f64 {
        let n = 4000;
        let h = 1.0 / n as f64;
        let g = |v: f64| {
            let x: f64 = 1.0 - v.powi(4);
            (1.0 - x.powi(4)).max(0.0).powf(0.25) * 4.0 * v.powi(3)
        };
        let mut s = g(0.0) + g(1.0);
        for i in 1..n {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * g(i as f64 * h);
        }
        4.0 * s * h / 3.0
    }

    #[test]
    fn moment_examples() {
        let disk = ConvexDomain::ball(2, 1.0).unwrap();
        let e = ConvexDomain::ellipse(2.0, 1.0).unwrap();
        for th in [0.0, 0.4, 2.0] {
            let w = direction_2d(th);
            assert!((moment(&disk, 0, &w).unwrap().value - PI).abs() < 1e-10);
            assert!(moment(&e, 1, &w).unwrap().value.abs() < 1e-8);
        }
        let area = superellipse_area_oracle();
        let m0 = moment(&superellipse(4), 0, &direction_2d(0.3)).unwrap().value;
        assert!((m0 - area).abs() < 1e-6 * area, "{m0} vs {area}");
        assert!(moment(&e, 4, &direction_2d(0.0)).is_err());
    }

    #[test]
    fn moment_residual_examples() {
        let e = ConvexDomain::ellipsoid(2, &[2.0, 1.0], &[0.2, -0.1], rotation_2d(0.3)).unwrap();
        for k in 0..3 {
            assert!(moment_residual(&e, k, 64).unwrap() <= 1e-6);
        }
        let s = superellipse(4);
        assert!(moment_residual(&s, 2, 64).unwrap() >= 1e-2);
        assert!(matches!(
            moment_residual(&s, 2, 8),
            Err(Error::InsufficientDirections { .. })
        ));
        // degree-0 fit is the mean
        let dirs = uniform_directions(2, 32);
        let m0: Vec<f64> = dirs.iter().map(|w| moment(&s, 0, w).unwrap().value).collect();
        let mean = m0.iter().sum::<f64>() / m0.len() as f64;
        let spread = m0.iter().map(|m| (m - mean).powi(2)).sum::<f64>().sqrt()
            / m0.iter().map(|m| m * m).sum::<f64>().sqrt();
        let r = moment_residual(&s, 0, 32).unwrap();
        assert!((r - spread).abs() < 1e-12);
    }

    #[test]
    fn measured_moments_are_always_polynomial() {
        let s = superellipse(4);
        for k in 0..4 {
            assert!(raw_moment_residual(&s, k, 64).unwrap() < 1e-9);
        }
    }

    #[test]
    fn zeroth_moment_is_the_volume() {
        for d in [superellipse(4), ConvexDomain::ellipse(2.0, 1.0).unwrap()] {
            let v = d.volume().unwrap();
            for w in uniform_directions(2, 8) {
                assert!((moment(&d, 0, &w).unwrap().value - v).abs() <= 1e-8 * v);
            }
        }
    }

    #[test]
    fn center_examples() {
        let e = ConvexDomain::ellipse(2.0, 1.0).unwrap();
        assert!(estimate_center(&e).unwrap().center.norm() < 1e-10);
        let moved = e.moved(Matrix3::identity(), &[0.3, -0.2]).unwrap();
        let c = estimate_center(&moved).unwrap();
        assert!((c.center - point2(0.3, -0.2)).norm() < 1e-8);
        let s = superellipse(4).moved(Matrix3::identity(), &[0.1, 0.0]).unwrap();
        let c = estimate_center(&s).unwrap();
        assert!((c.center - point2(0.1, 0.0)).norm() < 1e-8);
        assert!(c.residual < 1e-10);
    }

    #[test]
    fn form_examples() {
        let e = ConvexDomain::ellipse(2.0, 1.0).unwrap();
        let f = estimate_quadratic_form(&e, &Point::zeros()).unwrap();
        assert!((f.matrix - Matrix3::new(4.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0)).norm() < 1e-8);
        assert!(f.residual <= 1e-8);
        let b = ConvexDomain::ball(3, 1.0).unwrap();
        let f = estimate_quadratic_form(&b, &Point::zeros()).unwrap();
        assert!((f.matrix - Matrix3::identity()).norm() < 1e-8);
        let f = estimate_quadratic_form(&superellipse(4), &Point::zeros()).unwrap();
        assert!(f.residual >= 1e-2);
        let r = ConvexDomain::ellipsoid(3, &[1.5, 1.0, 0.5], &[0.0; 3], crate::geometry::rotation_zyz(0.3, 0.5, 0.7))
            .unwrap();
        let f = estimate_quadratic_form(&r, &Point::zeros()).unwrap();
        for (a, b) in f.semi_axes.iter().zip([1.5, 1.0, 0.5]) {
            assert!((a * a - b * b).abs() <= 1e-6 * b * b);
        }
    }

    #[test]
    fn exponent_examples() {
        let disk = ConvexDomain::ball(2, 1.0).unwrap();
        let ball = ConvexDomain::ball(3, 1.0).unwrap();
        for th in [0.0, 1.0, 4.0] {
            let e = endpoint_exponent(&disk, &direction_2d(th), Side::Plus).unwrap();
            assert!((e - 0.5).abs() < 0.01);
            let e = endpoint_exponent(&ball, &crate::geometry::direction_3d(th, 0.7), Side::Minus).unwrap();
            assert!((e - 1.0).abs() < 0.01);
        }
        let s = superellipse(4);
        for k in 0..4 {
            let w = direction_2d(k as f64 * PI / 2.0);
            assert!(matches!(
                endpoint_exponent(&s, &w, Side::Plus),
                Err(Error::IrregularDirection { .. })
            ));
        }
        let e = endpoint_exponent(&s, &direction_2d(PI / 6.0), Side::Plus).unwrap();
        assert!((e - 0.5).abs() < 0.05);
    }

    #[test]
    fn report_verdicts() {
        let e = ConvexDomain::ellipsoid(2, &[2.0, 1.0], &[0.3, 0.1], rotation_2d(25f64.to_radians()))
            .unwrap();
        let r = rigidity_report(&e, &quick()).unwrap();
        assert_eq!(r.verdict, Verdict::EllipsoidConsistent);
        assert!((r.estimated_center - point2(0.3, 0.1)).norm() < 1e-3);
        assert!((r.semi_axes[0] - 2.0).abs() < 2e-3 && (r.semi_axes[1] - 1.0).abs() < 1e-3);
        assert!(r.summary().contains("ellipsoid-consistent"));

        let r = rigidity_report(&superellipse(4), &quick()).unwrap();
        assert_eq!(r.verdict, Verdict::NonEllipsoid);
        let tripped = |name: &str| r.checks.iter().any(|c| c.name == name && c.value > 10.0 * c.threshold);
        assert!(tripped("kernel_sup_relative") && tripped("moment_residual_k2"));
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"verdict\":\"non-ellipsoid\""));
    }

    #[test]
    fn ball_is_ellipsoid_consistent() {
        let r = rigidity_report(
            &ConvexDomain::ball(3, 1.0).unwrap(),
            &RigidityOptions {
                kernel_pairs: 20,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(r.verdict, Verdict::EllipsoidConsistent);
    }

    #[test]
    fn scaling_invariance() {
        for d in [ConvexDomain::ellipse(2.0, 1.0).unwrap(), superellipse(4)] {
            let r1 = rigidity_report(&d, &quick()).unwrap();
            let r2 = rigidity_report(&d.scaled(1.7).unwrap(), &quick()).unwrap();
            for (a, b) in r1.semi_axes.iter().zip(&r2.semi_axes) {
                assert!((1.7 * a - b).abs() < 1e-8 * b);
            }
            for (a, b) in r1.moment_residuals.iter().zip(&r2.moment_residuals) {
                assert!((a - b).abs() < 1e-8);
            }
            assert!((r1.form_residual - r2.form_residual).abs() < 1e-8);
            assert_eq!(r1.verdict, r2.verdict);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(5))]
        #[test]
        fn verdict_is_motion_invariant(angle in 0.0..6.3f64, dx in -0.5..0.5f64, dy in -0.5..0.5f64) {
            for d in [ConvexDomain::ellipse(2.0, 1.0).unwrap(), superellipse(4)] {
                let before = rigidity_report(&d, &quick()).unwrap().verdict;
                let moved = d.moved(rotation_2d(angle), &[dx, dy]).unwrap();
                let after = rigidity_report(&moved, &quick()).unwrap().verdict;
                prop_assert_eq!(before, after);
            }
        }
    }
}
