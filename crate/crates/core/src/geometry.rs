//! Smooth strictly convex domains in the plane and in space.
//!
//! Points are stored as `Vector3<f64>` in both dimensions; planar domains live in the
//! `z = 0` plane and rotate about the `z` axis only.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::quadrature::GaussLegendre;

pub type Point = Vector3<f64>;

pub type RadialFn = Arc<dyn Fn(&Point) -> Point + Send + Sync>;
pub type IndicatorFn = Arc<dyn Fn(&Point) -> bool + Send + Sync>;

/// Planar point helper.
pub fn point2(x: f64, y: f64) -> Point {
    Point::new(x, y, 0.0)
}

/// Unit vector at angle `theta` in the plane.
pub fn direction_2d(theta: f64) -> Point {
    Point::new(theta.cos(), theta.sin(), 0.0)
}

/// Unit vector with polar angle `theta` and azimuth `phi`.
pub fn direction_3d(theta: f64, phi: f64) -> Point {
    Point::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos())
}

/// Rotation of the plane by `angle` radians.
pub fn rotation_2d(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Rotation `Rz(alpha) Ry(beta) Rz(gamma)`.
pub fn rotation_zyz(alpha: f64, beta: f64, gamma: f64) -> Matrix3<f64> {
    let (sb, cb) = beta.sin_cos();
    let ry = Matrix3::new(cb, 0.0, sb, 0.0, 1.0, 0.0, -sb, 0.0, cb);
    rotation_2d(alpha) * ry * rotation_2d(gamma)
}

/// Two unit vectors completing `w` to an orthonormal frame.
pub fn orthonormal_frame(w: &Point) -> (Point, Point) {
    let seed = if w.x.abs() < 0.6 {
        Point::x()
    } else if w.y.abs() < 0.6 {
        Point::y()
    } else {
        Point::z()
    };
    let e1 = (seed - w * w.dot(&seed)).normalize();
    let e2 = w.cross(&e1);
    (e1, e2)
}

/// Nearly uniform directions on the unit circle (`dim = 2`, offset by half a step) or the
/// unit sphere (`dim = 3`, Fibonacci lattice).
pub fn uniform_directions(dim: usize, count: usize) -> Vec<Point> {
    if dim == 2 {
        return (0..count)
            .map(|k| direction_2d(2.0 * PI * (k as f64 + 0.5) / count as f64))
            .collect();
    }
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|k| {
            let z = 1.0 - (2.0 * k as f64 + 1.0) / count as f64;
            let rho = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * k as f64;
            Point::new(rho * phi.cos(), rho * phi.sin(), z)
        })
        .collect()
}

/// Random unit vector in the given dimension.
pub fn random_direction<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Point {
    loop {
        let v = Point::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            if dim == 3 { rng.random_range(-1.0..1.0) } else { 0.0 },
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

/// The extent of the domain along `omega`: `h_minus < x.omega < h_plus` on the domain, with
/// the extremes attained at the tangency points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SupportInterval {
    pub h_minus: f64,
    pub h_plus: f64,
    pub a_minus: Point,
    pub a_plus: Point,
}

impl SupportInterval {
    pub fn width(&self) -> f64 {
        self.h_plus - self.h_minus
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.h_plus + self.h_minus)
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.h_plus - self.h_minus)
    }

    pub fn contains_open(&self, t: f64) -> bool {
        t > self.h_minus && t < self.h_plus
    }
}

/// Boundary nodes with outward unit normals and surface weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceQuadrature {
    pub nodes: Vec<Point>,
    pub normals: Vec<Point>,
    pub weights: Vec<f64>,
}

impl SurfaceQuadrature {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn area(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// A body described only through callbacks.
///
/// `radial` maps a unit direction `u` to the boundary point on the ray `center + s u`;
/// `indicator` reports membership in the open body.
#[derive(Clone)]
pub struct GenericBody {
    pub center: Point,
    pub radial: RadialFn,
    pub indicator: IndicatorFn,
}

impl fmt::Debug for GenericBody {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GenericBody")
            .field("center", &self.center)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone)]
pub enum DomainKind {
    /// `|diag(1/a) Q^T (x - center)| < 1`.
    Ellipsoid {
        semi_axes: Point,
        center: Point,
        rotation: Matrix3<f64>,
    },
    /// `sum_j ((Q^T (x - center))_j / a_j)^p < 1` with even `p >= 4`.
    Superellipse {
        exponent: u32,
        semi_axes: Point,
        center: Point,
        rotation: Matrix3<f64>,
    },
    Generic(GenericBody),
}

#[derive(Debug, Clone)]
pub struct ConvexDomain {
    dim: usize,
    kind: DomainKind,
    diameter: f64,
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 2 || dim == 3 {
        Ok(())
    } else {
        Err(Error::UnsupportedDimension(dim))
    }
}

fn lift(dim: usize, v: &[f64], what: &'static str, fill: f64) -> Result<Point> {
    if v.len() != dim {
        return Err(Error::Contract(format!(
            "{what} has {} components, expected {dim}",
            v.len()
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Contract(format!("{what} is not finite")));
    }
    Ok(Point::new(v[0], v[1], if dim == 3 { v[2] } else { fill }))
}

fn check_rotation(dim: usize, q: &Matrix3<f64>) -> Result<()> {
    let orth = (q.transpose() * q - Matrix3::identity()).amax();
    if orth > 1e-10 || q.determinant() < 0.0 {
        return Err(Error::Contract("rotation is not a proper orthogonal matrix".into()));
    }
    if dim == 2 && (q * Point::z() - Point::z()).amax() > 1e-12 {
        return Err(Error::Contract("planar rotations must fix the z axis".into()));
    }
    Ok(())
}

fn check_unit(dim: usize, omega: &Point) -> Result<()> {
    if (omega.norm() - 1.0).abs() > 1e-12 {
        return Err(Error::Contract(format!(
            "direction must be a unit vector (|omega| = {})",
            omega.norm()
        )));
    }
    if dim == 2 && omega.z.abs() > 1e-12 {
        return Err(Error::Contract("planar direction has a z component".into()));
    }
    Ok(())
}

/// Maximises a unimodal function on `[a, b]`.
fn golden_max(mut a: f64, mut b: f64, f: impl Fn(f64) -> f64) -> (f64, f64) {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..200 {
        if (b - a).abs() < 1e-15 * (1.0 + a.abs()) {
            break;
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    if fc > fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

impl ConvexDomain {
    /// Ellipse (`dim = 2`) or ellipsoid (`dim = 3`).
    pub fn ellipsoid(
        dim: usize,
        semi_axes: &[f64],
        center: &[f64],
        rotation: Matrix3<f64>,
    ) -> Result<Self> {
        check_dim(dim)?;
        let a = lift(dim, semi_axes, "semi_axes", 1.0)?;
        if a.iter().any(|&x| x <= 0.0) {
            return Err(Error::DegenerateDomain("semi-axes must be positive".into()));
        }
        let c = lift(dim, center, "center", 0.0)?;
        check_rotation(dim, &rotation)?;
        let diameter = 2.0 * a.iter().take(dim).fold(0.0_f64, |m, &x| m.max(x));
        Ok(Self {
            dim,
            kind: DomainKind::Ellipsoid {
                semi_axes: a,
                center: c,
                rotation,
            },
            diameter,
        })
    }

    /// Axis-aligned ellipse centred at the origin.
    pub fn ellipse(a1: f64, a2: f64) -> Result<Self> {
        Self::ellipsoid(2, &[a1, a2], &[0.0, 0.0], Matrix3::identity())
    }

    /// Ball of the given radius centred at the origin.
    pub fn ball(dim: usize, radius: f64) -> Result<Self> {
        check_dim(dim)?;
        Self::ellipsoid(dim, &vec![radius; dim], &vec![0.0; dim], Matrix3::identity())
    }

    /// Superellipse `sum_j (y_j / a_j)^p < 1` with even `p >= 4`.
    pub fn superellipse(
        dim: usize,
        exponent: u32,
        semi_axes: &[f64],
        center: &[f64],
        rotation: Matrix3<f64>,
    ) -> Result<Self> {
        check_dim(dim)?;
        if exponent < 4 || !exponent.is_multiple_of(2) {
            return Err(Error::OutOfRange {
                what: "exponent",
                value: exponent as f64,
                range: "even integers >= 4".into(),
            });
        }
        let a = lift(dim, semi_axes, "semi_axes", 1.0)?;
        if a.iter().any(|&x| x <= 0.0) {
            return Err(Error::DegenerateDomain("semi-axes must be positive".into()));
        }
        let c = lift(dim, center, "center", 0.0)?;
        check_rotation(dim, &rotation)?;
        let mut domain = Self {
            dim,
            kind: DomainKind::Superellipse {
                exponent,
                semi_axes: a,
                center: c,
                rotation,
            },
            diameter: 0.0,
        };
        domain.diameter = domain.max_width()?;
        Ok(domain)
    }

    /// Body given by callbacks; see [`GenericBody`]. The body is probed for convexity and
    /// for flat boundary pieces, and rejected if either probe fails.
    pub fn generic(dim: usize, body: GenericBody) -> Result<Self> {
        check_dim(dim)?;
        if dim == 2 && body.center.z != 0.0 {
            return Err(Error::Contract("planar center has a z component".into()));
        }
        if !(body.indicator)(&body.center) {
            return Err(Error::DegenerateDomain("center is not inside the body".into()));
        }
        let mut domain = Self {
            dim,
            kind: DomainKind::Generic(body),
            diameter: 0.0,
        };
        domain.probe_convexity()?;
        domain.diameter = domain.max_width()?;
        Ok(domain)
    }

    fn probe_convexity(&self) -> Result<()> {
        let count = if self.dim == 2 { 256 } else { 400 };
        let dirs = uniform_directions(self.dim, count);
        let pts: Vec<Point> = dirs.iter().map(|u| self.radial(u)).collect();
        let inner = |p: &Point| self.center() + (p - self.center()) * (1.0 - 1e-9);
        for (i, p) in pts.iter().enumerate() {
            for q in pts.iter().skip(i + 1).step_by(7) {
                let m = 0.5 * (inner(p) + inner(q));
                if (p - q).norm() > 1e-6 && !self.indicator(&m) {
                    return Err(Error::DegenerateDomain(
                        "midpoint probe failed: body is not strictly convex".into(),
                    ));
                }
            }
        }
        let scale = pts
            .iter()
            .fold(0.0_f64, |m, p| m.max((p - self.center()).norm()));
        let flat = pts
            .iter()
            .filter(|p| self.curvature_at(p) * scale.powi(self.dim as i32 - 1) < 1e-8)
            .count();
        if flat * 50 > count {
            return Err(Error::DegenerateDomain(
                "boundary has flat pieces; strict convexity is required".into(),
            ));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &DomainKind {
        &self.kind
    }

    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    pub fn is_ellipsoid(&self) -> bool {
        matches!(self.kind, DomainKind::Ellipsoid { .. })
    }

    /// Reference interior point: the centre of symmetry for the built-in families.
    pub fn center(&self) -> Point {
        match &self.kind {
            DomainKind::Ellipsoid { center, .. } | DomainKind::Superellipse { center, .. } => {
                *center
            }
            DomainKind::Generic(g) => g.center,
        }
    }

    /// The rigidly moved domain `x -> rotation x + shift`.
    pub fn moved(&self, rotation: Matrix3<f64>, shift: &[f64]) -> Result<Self> {
        check_rotation(self.dim, &rotation)?;
        let b = lift(self.dim, shift, "shift", 0.0)?;
        let kind = match &self.kind {
            DomainKind::Ellipsoid {
                semi_axes,
                center,
                rotation: q,
            } => DomainKind::Ellipsoid {
                semi_axes: *semi_axes,
                center: rotation * center + b,
                rotation: rotation * q,
            },
            DomainKind::Superellipse {
                exponent,
                semi_axes,
                center,
                rotation: q,
            } => DomainKind::Superellipse {
                exponent: *exponent,
                semi_axes: *semi_axes,
                center: rotation * center + b,
                rotation: rotation * q,
            },
            DomainKind::Generic(g) => {
                let radial = g.radial.clone();
                let indicator = g.indicator.clone();
                let rt = rotation.transpose();
                DomainKind::Generic(GenericBody {
                    center: rotation * g.center + b,
                    radial: Arc::new(move |u| rotation * radial(&(rt * u)) + b),
                    indicator: Arc::new(move |x| indicator(&(rt * (x - b)))),
                })
            }
        };
        Ok(Self {
            dim: self.dim,
            kind,
            diameter: self.diameter,
        })
    }

    /// The dilated domain `x -> factor x`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(Error::Contract("scale factor must be positive".into()));
        }
        let kind = match &self.kind {
            DomainKind::Ellipsoid {
                semi_axes,
                center,
                rotation,
            } => {
                let mut a = semi_axes * factor;
                if self.dim == 2 {
                    a.z = 1.0;
                }
                DomainKind::Ellipsoid {
                    semi_axes: a,
                    center: center * factor,
                    rotation: *rotation,
                }
            }
            DomainKind::Superellipse {
                exponent,
                semi_axes,
                center,
                rotation,
            } => {
                let mut a = semi_axes * factor;
                if self.dim == 2 {
                    a.z = 1.0;
                }
                DomainKind::Superellipse {
                    exponent: *exponent,
                    semi_axes: a,
                    center: center * factor,
                    rotation: *rotation,
                }
            }
            DomainKind::Generic(g) => {
                let radial = g.radial.clone();
                let indicator = g.indicator.clone();
                DomainKind::Generic(GenericBody {
                    center: g.center * factor,
                    radial: Arc::new(move |u| radial(u) * factor),
                    indicator: Arc::new(move |x| indicator(&(x / factor))),
                })
            }
        };
        Ok(Self {
            dim: self.dim,
            kind,
            diameter: self.diameter * factor,
        })
    }

    /// Membership in the open domain.
    pub fn indicator(&self, x: &Point) -> bool {
        match &self.kind {
            DomainKind::Generic(g) => (g.indicator)(x),
            _ => self.gauge(x) < 1.0,
        }
    }

    /// Body coordinates `Q^T (x - center)` for the built-in families.
    fn local(&self, x: &Point) -> Point {
        match &self.kind {
            DomainKind::Ellipsoid {
                center, rotation, ..
            }
            | DomainKind::Superellipse {
                center, rotation, ..
            } => rotation.tr_mul(&(x - center)),
            DomainKind::Generic(g) => x - g.center,
        }
    }

    /// Level function that equals 1 on the boundary (built-in families only).
    fn gauge(&self, x: &Point) -> f64 {
        let y = self.local(x);
        match &self.kind {
            DomainKind::Ellipsoid { semi_axes, .. } => (0..self.dim)
                .map(|j| (y[j] / semi_axes[j]).powi(2))
                .sum(),
            DomainKind::Superellipse {
                exponent,
                semi_axes,
                ..
            } => (0..self.dim)
                .map(|j| (y[j] / semi_axes[j]).powi(*exponent as i32))
                .sum(),
            DomainKind::Generic(_) => f64::NAN,
        }
    }

    /// Gradient and diagonal Hessian of the gauge in body coordinates.
    fn gauge_derivatives(&self, y: &Point) -> (Point, Point) {
        let mut g = Point::zeros();
        let mut h = Point::zeros();
        match &self.kind {
            DomainKind::Ellipsoid { semi_axes, .. } => {
                for j in 0..self.dim {
                    let a2 = semi_axes[j] * semi_axes[j];
                    g[j] = 2.0 * y[j] / a2;
                    h[j] = 2.0 / a2;
                }
            }
            DomainKind::Superellipse {
                exponent,
                semi_axes,
                ..
            } => {
                let p = *exponent as i32;
                let pf = p as f64;
                for j in 0..self.dim {
                    let ap = semi_axes[j].powi(p);
                    g[j] = pf * y[j].powi(p - 1) / ap;
                    h[j] = pf * (pf - 1.0) * y[j].powi(p - 2) / ap;
                }
            }
            DomainKind::Generic(_) => {}
        }
        (g, h)
    }

    /// Boundary point on the ray from the reference center in direction `u`.
    pub fn radial(&self, u: &Point) -> Point {
        match &self.kind {
            DomainKind::Generic(g) => (g.radial)(u),
            DomainKind::Ellipsoid {
                semi_axes,
                center,
                rotation,
            } => {
                let v = rotation.tr_mul(u);
                let s: f64 = (0..self.dim).map(|j| (v[j] / semi_axes[j]).powi(2)).sum();
                center + u / s.sqrt()
            }
            DomainKind::Superellipse {
                exponent,
                semi_axes,
                center,
                rotation,
            } => {
                let v = rotation.tr_mul(u);
                let p = *exponent as i32;
                let s: f64 = (0..self.dim).map(|j| (v[j] / semi_axes[j]).powi(p)).sum();
                center + u * s.powf(-1.0 / p as f64)
            }
        }
    }

    /// Boundary point for a parameter: `[theta]` in the plane, `[theta, phi]` (polar,
    /// azimuth) in space.
    pub fn boundary_point(&self, param: &[f64]) -> Result<Point> {
        Ok(self.radial(&self.param_direction(param)?))
    }

    fn param_direction(&self, param: &[f64]) -> Result<Point> {
        let in_range = |v: f64, hi: f64, what: &'static str| {
            if (0.0..=hi).contains(&v) {
                Ok(())
            } else {
                Err(Error::OutOfRange {
                    what,
                    value: v,
                    range: format!("[0, {hi}]"),
                })
            }
        };
        match (self.dim, param) {
            (2, [theta]) => {
                in_range(*theta, 2.0 * PI, "theta")?;
                Ok(direction_2d(*theta))
            }
            (3, [theta, phi]) => {
                in_range(*theta, PI, "theta")?;
                in_range(*phi, 2.0 * PI, "phi")?;
                Ok(direction_3d(*theta, *phi))
            }
            _ => Err(Error::Contract(format!(
                "boundary parameter needs {} components",
                self.dim - 1
            ))),
        }
    }

    /// Local chart `(alpha, beta) -> boundary` around the boundary point `x`.
    fn chart(&self, x: &Point) -> impl Fn(f64, f64) -> Point + '_ {
        let c = self.center();
        let u0 = (x - c).normalize();
        let (e1, e2) = if self.dim == 2 {
            (Point::new(-u0.y, u0.x, 0.0), Point::zeros())
        } else {
            orthonormal_frame(&u0)
        };
        move |a, b| self.radial(&(u0 + a * e1 + b * e2).normalize())
    }

    /// Outward unit normal at a boundary point.
    pub fn normal_at(&self, x: &Point) -> Point {
        match &self.kind {
            DomainKind::Generic(_) => {
                let chart = self.chart(x);
                let h = 1e-5;
                let t1 = (chart(h, 0.0) - chart(-h, 0.0)) / (2.0 * h);
                let n = if self.dim == 2 {
                    Point::new(t1.y, -t1.x, 0.0)
                } else {
                    let t2 = (chart(0.0, h) - chart(0.0, -h)) / (2.0 * h);
                    t1.cross(&t2)
                };
                let n = n.normalize();
                if n.dot(&(x - self.center())) < 0.0 {
                    -n
                } else {
                    n
                }
            }
            DomainKind::Ellipsoid { rotation, .. } | DomainKind::Superellipse { rotation, .. } => {
                let (g, _) = self.gauge_derivatives(&self.local(x));
                (rotation * g).normalize()
            }
        }
    }

    /// Gaussian curvature (the curvature in the plane) at a boundary point.
    pub fn curvature_at(&self, x: &Point) -> f64 {
        match &self.kind {
            DomainKind::Generic(_) => self.curvature_by_differences(x),
            _ => {
                // For a diagonal Hessian D, -det([[D, g], [g^T, 0]]) = sum_j g_j^2 prod_{i!=j} D_i.
                let (g, d) = self.gauge_derivatives(&self.local(x));
                let n = self.dim;
                let num: f64 = (0..n)
                    .map(|j| {
                        g[j] * g[j] * (0..n).filter(|&i| i != j).map(|i| d[i]).product::<f64>()
                    })
                    .sum();
                num / g.norm().powi(n as i32 + 1)
            }
        }
    }

    fn curvature_by_differences(&self, x: &Point) -> f64 {
        let chart = self.chart(x);
        let h = 1e-4;
        let p0 = chart(0.0, 0.0);
        if self.dim == 2 {
            let pp = chart(h, 0.0);
            let pm = chart(-h, 0.0);
            let d1 = (pp - pm) / (2.0 * h);
            let d2 = (pp - 2.0 * p0 + pm) / (h * h);
            return d1.cross(&d2).norm() / d1.norm().powi(3);
        }
        let xa = (chart(h, 0.0) - chart(-h, 0.0)) / (2.0 * h);
        let xb = (chart(0.0, h) - chart(0.0, -h)) / (2.0 * h);
        let xaa = (chart(h, 0.0) - 2.0 * p0 + chart(-h, 0.0)) / (h * h);
        let xbb = (chart(0.0, h) - 2.0 * p0 + chart(0.0, -h)) / (h * h);
        let xab = (chart(h, h) - chart(h, -h) - chart(-h, h) + chart(-h, -h)) / (4.0 * h * h);
        let n = xa.cross(&xb).normalize();
        let (e, f, g) = (xa.dot(&xa), xa.dot(&xb), xb.dot(&xb));
        let (l, m, nn) = (xaa.dot(&n), xab.dot(&n), xbb.dot(&n));
        (l * nn - m * m) / (e * g - f * f)
    }

    /// Gaussian curvature at the boundary point with the given parameter.
    pub fn gaussian_curvature(&self, param: &[f64]) -> Result<f64> {
        let x = self.boundary_point(param)?;
        Ok(self.curvature_at(&x))
    }

    /// Support interval and tangency points for the unit direction `omega`.
    pub fn support_interval(&self, omega: &Point) -> Result<SupportInterval> {
        check_unit(self.dim, omega)?;
        let s = self.support_unchecked(omega);
        if s.width() < 1e-9 {
            return Err(Error::DegenerateDomain(format!(
                "support width {:e} along {:?}",
                s.width(),
                omega.as_slice()
            )));
        }
        Ok(s)
    }

    fn support_unchecked(&self, omega: &Point) -> SupportInterval {
        match &self.kind {
            DomainKind::Ellipsoid {
                semi_axes,
                center,
                rotation,
            } => {
                let v = rotation.tr_mul(omega);
                let mut w = Point::zeros();
                for j in 0..self.dim {
                    w[j] = semi_axes[j] * semi_axes[j] * v[j];
                }
                let hc = w.dot(&v).sqrt();
                let y = rotation * w / hc;
                let cw = center.dot(omega);
                SupportInterval {
                    h_minus: cw - hc,
                    h_plus: cw + hc,
                    a_minus: center - y,
                    a_plus: center + y,
                }
            }
            DomainKind::Superellipse {
                exponent,
                semi_axes,
                center,
                rotation,
            } => {
                let p = *exponent as f64;
                let q = p / (p - 1.0);
                let v0 = rotation.tr_mul(omega);
                let mut v = Point::zeros();
                for j in 0..self.dim {
                    v[j] = semi_axes[j] * v0[j];
                }
                let norm = (0..self.dim)
                    .map(|j| v[j].abs().powf(q))
                    .sum::<f64>()
                    .powf(1.0 / q);
                let mut y = Point::zeros();
                for j in 0..self.dim {
                    y[j] = semi_axes[j] * v[j].signum() * (v[j].abs() / norm).powf(q - 1.0);
                }
                let y = rotation * y;
                let cw = center.dot(omega);
                SupportInterval {
                    h_minus: cw - norm,
                    h_plus: cw + norm,
                    a_minus: center - y,
                    a_plus: center + y,
                }
            }
            DomainKind::Generic(_) => {
                let (hp, ap) = self.generic_support(omega);
                let (hm, am) = self.generic_support(&-omega);
                SupportInterval {
                    h_minus: -hm,
                    h_plus: hp,
                    a_minus: am,
                    a_plus: ap,
                }
            }
        }
    }

    /// `max x.omega` over the boundary by a coarse scan and local refinement.
    fn generic_support(&self, omega: &Point) -> (f64, Point) {
        let value = |u: &Point| self.radial(u).dot(omega);
        if self.dim == 2 {
            let n = 720;
            let step = 2.0 * PI / n as f64;
            let (best, _) = (0..n)
                .map(|k| {
                    let th = k as f64 * step;
                    (th, value(&direction_2d(th)))
                })
                .fold((0.0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
            let (th, _) = golden_max(best - step, best + step, |t| value(&direction_2d(t)));
            let x = self.radial(&direction_2d(th));
            return (x.dot(omega), x);
        }
        let dirs = uniform_directions(3, 2000);
        let mut u0 = dirs
            .iter()
            .copied()
            .fold((Point::z(), f64::NEG_INFINITY), |acc, u| {
                let v = value(&u);
                if v > acc.1 {
                    (u, v)
                } else {
                    acc
                }
            })
            .0;
        let mut span = 0.1;
        for _ in 0..40 {
            let (e1, e2) = orthonormal_frame(&u0);
            for e in [e1, e2, (e1 + e2) / 2f64.sqrt(), (e1 - e2) / 2f64.sqrt()] {
                let (a, _) = golden_max(-span, span, |a| value(&(u0 + a * e).normalize()));
                u0 = (u0 + a * e).normalize();
            }
            span = (span * 0.5).max(1e-7);
        }
        let x = self.radial(&u0);
        (x.dot(omega), x)
    }

    /// Largest width over directions, which equals the diameter of a convex body.
    fn max_width(&self) -> Result<f64> {
        let width = |u: &Point| self.support_unchecked(u).width();
        let best = if self.dim == 2 {
            let n = if matches!(self.kind, DomainKind::Generic(_)) { 180 } else { 720 };
            let step = PI / n as f64;
            let (th, _) = (0..n)
                .map(|k| {
                    let th = k as f64 * step;
                    (th, width(&direction_2d(th)))
                })
                .fold((0.0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
            golden_max(th - step, th + step, |t| width(&direction_2d(t))).1
        } else {
            let n = if matches!(self.kind, DomainKind::Generic(_)) { 200 } else { 4000 };
            let mut u0 = uniform_directions(3, n)
                .into_iter()
                .fold((Point::z(), f64::NEG_INFINITY), |acc, u| {
                    let v = width(&u);
                    if v > acc.1 {
                        (u, v)
                    } else {
                        acc
                    }
                })
                .0;
            let mut span = 0.2;
            for _ in 0..12 {
                let (e1, e2) = orthonormal_frame(&u0);
                for e in [e1, e2] {
                    let (a, _) = golden_max(-span, span, |a| width(&(u0 + a * e).normalize()));
                    u0 = (u0 + a * e).normalize();
                }
                span *= 0.5;
            }
            width(&u0)
        };
        if !(best > 1e-9) {
            return Err(Error::DegenerateDomain("body has no interior".into()));
        }
        Ok(best)
    }

    /// Interior point of the slice `{x.omega = t}` on the segment between tangency points,
    /// projected onto the hyperplane.
    pub fn chord_seed(&self, omega: &Point, t: f64) -> Result<Point> {
        let s = self.support_interval(omega)?;
        self.seed_in(&s, omega, t)
    }

    pub(crate) fn seed_in(&self, s: &SupportInterval, omega: &Point, t: f64) -> Result<Point> {
        if !s.contains_open(t) {
            return Err(Error::OutOfRange {
                what: "t",
                value: t,
                range: format!("({}, {})", s.h_minus, s.h_plus),
            });
        }
        let frac = (t - s.h_minus) / s.width();
        let p = s.a_minus + (s.a_plus - s.a_minus) * frac;
        Ok(p + omega * (t - p.dot(omega)))
    }

    /// Boundary quadrature: `resolution` equispaced angles in the plane; in space,
    /// `resolution` Gauss–Legendre latitudes times `2 resolution` longitudes.
    pub fn boundary_quadrature(&self, resolution: usize) -> Result<SurfaceQuadrature> {
        if resolution < 16 {
            return Err(Error::Resolution {
                name: "boundary_resolution",
                value: resolution,
                min: 16,
            });
        }
        let c = self.center();
        let mut dirs = Vec::new();
        let mut dsigma = Vec::new();
        if self.dim == 2 {
            let h = 2.0 * PI / resolution as f64;
            for k in 0..resolution {
                dirs.push(direction_2d(k as f64 * h));
                dsigma.push(h);
            }
        } else {
            let rule = GaussLegendre::get(resolution);
            let nphi = 2 * resolution;
            let hphi = 2.0 * PI / nphi as f64;
            for (z, wz) in rule.nodes.iter().zip(&rule.weights) {
                let rho = (1.0 - z * z).sqrt();
                for k in 0..nphi {
                    let phi = (k as f64 + 0.5) * hphi;
                    dirs.push(Point::new(rho * phi.cos(), rho * phi.sin(), *z));
                    dsigma.push(wz * hphi);
                }
            }
        }
        let mut nodes = Vec::with_capacity(dirs.len());
        let mut normals = Vec::with_capacity(dirs.len());
        let mut weights = Vec::with_capacity(dirs.len());
        for (u, ds) in dirs.iter().zip(dsigma) {
            let x = self.radial(u);
            let nu = self.normal_at(&x);
            let r = (x - c).norm();
            let cosine = u.dot(&nu);
            if cosine <= 0.0 {
                return Err(Error::DegenerateDomain(
                    "boundary is not star-shaped about its center".into(),
                ));
            }
            nodes.push(x);
            normals.push(nu);
            weights.push(ds * r.powi(self.dim as i32 - 1) / cosine);
        }
        Ok(SurfaceQuadrature {
            nodes,
            normals,
            weights,
        })
    }

    /// Closed-form volume (area in the plane) for the built-in families.
    pub fn volume(&self) -> Option<f64> {
        match &self.kind {
            DomainKind::Ellipsoid { semi_axes: a, .. } => Some(if self.dim == 2 {
                PI * a.x * a.y
            } else {
                4.0 / 3.0 * PI * a.x * a.y * a.z
            }),
            DomainKind::Superellipse {
                exponent,
                semi_axes: a,
                ..
            } => {
                let p = *exponent as f64;
                let g = gamma(1.0 + 1.0 / p);
                Some(if self.dim == 2 {
                    4.0 * a.x * a.y * g * g / gamma(1.0 + 2.0 / p)
                } else {
                    8.0 * a.x * a.y * a.z * g * g * g / gamma(1.0 + 3.0 / p)
                })
            }
            DomainKind::Generic(_) => None,
        }
    }

    /// Axis-aligned bounding box `(lo, hi)`.
    pub fn bounding_box(&self) -> (Point, Point) {
        let mut lo = Point::zeros();
        let mut hi = Point::zeros();
        for j in 0..self.dim {
            let mut e = Point::zeros();
            e[j] = 1.0;
            let s = self.support_unchecked(&e);
            lo[j] = s.h_minus;
            hi[j] = s.h_plus;
        }
        (lo, hi)
    }

    /// Lower bound on the distance from an interior point to the boundary, from the
    /// support function along `count` directions.
    pub fn inner_distance(&self, x: &Point, count: usize) -> f64 {
        uniform_directions(self.dim, count)
            .iter()
            .map(|u| self.support_unchecked(u).h_plus - x.dot(u))
            .fold(f64::INFINITY, f64::min)
    }

    /// Uniform random interior point (rejection sampling in the bounding box) whose
    /// support-distance to the boundary is at least `margin`.
    pub fn sample_interior<R: Rng + ?Sized>(&self, rng: &mut R, margin: f64) -> Point {
        let (lo, hi) = self.bounding_box();
        loop {
            let mut x = Point::zeros();
            for j in 0..self.dim {
                x[j] = rng.random_range(lo[j]..hi[j]);
            }
            if self.indicator(&x) && (margin <= 0.0 || self.inner_distance(&x, 64) > margin) {
                return x;
            }
        }
    }
}
