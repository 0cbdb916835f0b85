//! Radon transform of a domain indicator, its factored Chebyshev representation along one
//! direction, the finite Hilbert transform and its inverse.
//!
//! Along a direction `omega` with support interval `[h-, h+]` write `t = B + C u`. The
//! chord (or slice) function is stored as `(1 - u^2)^m psi(u)` with `m = (n - 1)/2`, so
//! the square-root or linear endpoint behaviour is exact and `psi` is smooth at regular
//! directions.

use std::f64::consts::PI;

use crate::chebyshev;
use crate::error::{Error, Result};
use crate::geometry::{orthonormal_frame, ConvexDomain, Point, SupportInterval};
use crate::quadrature::{chebyshev_u_principal_value, GaussLegendre, PrincipalValue};

/// Relative tail size above which a profile is flagged as not converged.
pub const TAIL_WARNING: f64 = 1e-4;
/// Coefficients below this fraction of the largest one are treated as sampling noise.
const CHOP_TOL: f64 = 1e-13;
/// Endpoint margin for derivatives, as a fraction of the support width.
pub const ENDPOINT_MARGIN: f64 = 0.02;
/// In-plane rays used for slice areas in space.
const SLICE_RAYS: usize = 256;

pub fn default_mode_count(dim: usize) -> usize {
    if dim == 2 {
        129
    } else {
        65
    }
}

/// Distance from `p` (inside) to the boundary along the unit vector `e`, by bisection on
/// the indicator down to adjacent floating-point numbers.
fn crossing(domain: &ConvexDomain, p: &Point, e: &Point, smax: f64) -> f64 {
    let mut lo = 0.0;
    let mut hi = smax;
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if domain.indicator(&(p + e * mid)) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn slice_measure(domain: &ConvexDomain, s: &SupportInterval, omega: &Point, t: f64) -> f64 {
    let Ok(p) = domain.seed_in(s, omega, t) else {
        return 0.0;
    };
    if !domain.indicator(&p) {
        return 0.0;
    }
    let smax = 1.001 * domain.diameter() + 1e-12;
    if domain.dim() == 2 {
        let e = Point::new(-omega.y, omega.x, 0.0);
        return crossing(domain, &p, &e, smax) + crossing(domain, &p, &-e, smax);
    }
    let (e1, e2) = orthonormal_frame(omega);
    let da = 2.0 * PI / SLICE_RAYS as f64;
    let sum: f64 = (0..SLICE_RAYS)
        .map(|k| {
            let (sa, ca) = (k as f64 * da).sin_cos();
            let rho = crossing(domain, &p, &(e1 * ca + e2 * sa), smax);
            rho * rho
        })
        .sum();
    0.5 * sum * da
}

/// `(n-1)`-volume of the slice `{x in domain : x.omega = t}`; zero off the support.
pub fn radon_chi(domain: &ConvexDomain, omega: &Point, t: f64) -> Result<f64> {
    let s = domain.support_interval(omega)?;
    if !s.contains_open(t) {
        return Ok(0.0);
    }
    Ok(slice_measure(domain, &s, omega, t))
}

/// Chord function of one direction in factored form.
#[derive(Debug, Clone)]
pub struct ChordProfile {
    pub dim: usize,
    pub direction: Point,
    pub interval: SupportInterval,
    pub midpoint: f64,
    pub half_width: f64,
    /// First-kind Chebyshev coefficients of `psi`, noise tail removed.
    pub coefficients: Vec<f64>,
    pub mode_count: usize,
    /// Relative size of the last tenth of the raw coefficients.
    pub tail: f64,
    pub converged: bool,
    derivs: Vec<Vec<f64>>,
}

fn exponent_of(dim: usize) -> f64 {
    0.5 * (dim as f64 - 1.0)
}

impl ChordProfile {
    /// Factored fit of an arbitrary function `f` supported on `[a, b]` that vanishes at the
    /// ends like `((b-t)(t-a))^m`, `m = (dim-1)/2`.
    pub fn from_function(
        dim: usize,
        a: f64,
        b: f64,
        mode_count: usize,
        f: impl Fn(f64) -> f64,
    ) -> Result<Self> {
        let interval = SupportInterval {
            h_minus: a,
            h_plus: b,
            a_minus: Point::zeros(),
            a_plus: Point::zeros(),
        };
        Self::build(dim, Point::zeros(), interval, mode_count, f)
    }

    fn build(
        dim: usize,
        direction: Point,
        interval: SupportInterval,
        mode_count: usize,
        f: impl Fn(f64) -> f64,
    ) -> Result<Self> {
        if mode_count < 16 {
            return Err(Error::Resolution {
                name: "mode_count",
                value: mode_count,
                min: 16,
            });
        }
        if !(interval.width() > 0.0) {
            return Err(Error::DegenerateDomain("empty support interval".into()));
        }
        let m = exponent_of(dim);
        let b = interval.midpoint();
        let c = interval.half_width();
        let values: Vec<f64> = chebyshev::gauss_nodes(mode_count)
            .iter()
            .map(|&u| f(b + c * u) / (1.0 - u * u).powf(m))
            .collect();
        let mut coefficients = chebyshev::fit_gauss(&values);
        let tail = chebyshev::tail_ratio(&coefficients);
        chebyshev::chop(&mut coefficients, CHOP_TOL);
        let mut derivs = vec![coefficients.clone()];
        for k in 0..dim {
            let next = chebyshev::derivative(&derivs[k]);
            derivs.push(next);
        }
        Ok(Self {
            dim,
            direction,
            interval,
            midpoint: b,
            half_width: c,
            coefficients,
            mode_count,
            tail,
            converged: tail <= TAIL_WARNING,
            derivs,
        })
    }

    pub fn exponent(&self) -> f64 {
        exponent_of(self.dim)
    }

    pub fn psi(&self, u: f64) -> f64 {
        chebyshev::eval(&self.coefficients, u)
    }

    /// Profile value at the normalised coordinate `u`.
    pub fn eval_u(&self, u: f64) -> f64 {
        if u.abs() >= 1.0 {
            return 0.0;
        }
        (1.0 - u * u).powf(self.exponent()) * self.psi(u)
    }

    /// Profile value at `t`; zero off the support.
    pub fn eval(&self, t: f64) -> f64 {
        self.eval_u((t - self.midpoint) / self.half_width)
    }

    /// `int R(t) g(t) dt` with a rule matched to the endpoint weight: second-kind
    /// Chebyshev–Gauss in the plane, Clenshaw–Curtis in space.
    pub fn integrate(&self, g: impl Fn(f64) -> f64) -> f64 {
        let n = self.coefficients.len() + 64;
        let (b, c) = (self.midpoint, self.half_width);
        if self.dim == 2 {
            let np1 = (n + 1) as f64;
            let sum: f64 = (1..=n)
                .map(|j| {
                    let th = PI * j as f64 / np1;
                    let u = th.cos();
                    th.sin().powi(2) * self.psi(u) * g(b + c * u)
                })
                .sum();
            c * PI / np1 * sum
        } else {
            let (nodes, weights) = crate::quadrature::clenshaw_curtis(n);
            let sum: f64 = nodes
                .iter()
                .zip(&weights)
                .map(|(&u, w)| w * (1.0 - u * u) * self.psi(u) * g(b + c * u))
                .sum();
            c * sum
        }
    }

    /// `int R(t) dt`, the volume of the domain.
    pub fn mass(&self) -> f64 {
        self.integrate(|_| 1.0)
    }
}

/// Derivative access shared by chord and Hilbert profiles.
pub trait ChordFunction {
    fn interval(&self) -> &SupportInterval;
    fn dim(&self) -> usize;
    fn highest_order(&self) -> usize;
    /// `d^k/du^k` of the function in the normalised coordinate, `|u| < 1`.
    fn derivative_u(&self, order: usize, u: f64) -> f64;
}

impl ChordFunction for ChordProfile {
    fn interval(&self) -> &SupportInterval {
        &self.interval
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn highest_order(&self) -> usize {
        self.derivs.len() - 1
    }

    fn derivative_u(&self, order: usize, u: f64) -> f64 {
        let m = self.exponent();
        (0..=order)
            .map(|j| {
                binomial(order, j)
                    * chebyshev::weight_derivative(m, j, u)
                    * chebyshev::eval(&self.derivs[order - j], u)
            })
            .sum()
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Finite Hilbert transform of a planar chord function, as a polynomial in `u` on the
/// support and through its analytic continuation outside.
#[derive(Debug, Clone)]
pub struct HilbertProfile {
    pub direction: Point,
    pub interval: SupportInterval,
    pub midpoint: f64,
    pub half_width: f64,
    /// First-kind coefficients in `u` on `[-1, 1]`.
    pub coefficients: Vec<f64>,
    pub converged: bool,
    second_kind: Vec<f64>,
    derivs: Vec<Vec<f64>>,
}

impl HilbertProfile {
    pub fn eval_u(&self, u: f64) -> f64 {
        if u.abs() <= 1.0 {
            return chebyshev::eval(&self.coefficients, u);
        }
        // (1/pi) int sqrt(1-v^2) U_k(v) / (u - v) dv = z^{k+1} off the interval
        let z = u - u.signum() * (u * u - 1.0).sqrt();
        self.second_kind.iter().rev().fold(0.0, |acc, b| (acc + b) * z)
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.eval_u((t - self.midpoint) / self.half_width)
    }
}

impl ChordFunction for HilbertProfile {
    fn interval(&self) -> &SupportInterval {
        &self.interval
    }

    fn dim(&self) -> usize {
        2
    }

    fn highest_order(&self) -> usize {
        self.derivs.len() - 1
    }

    fn derivative_u(&self, order: usize, u: f64) -> f64 {
        chebyshev::eval(&self.derivs[order], u)
    }
}

/// Chord profile of `domain` along `omega`.
pub fn chord_profile(domain: &ConvexDomain, omega: &Point, mode_count: usize) -> Result<ChordProfile> {
    let s = domain.support_interval(omega)?;
    ChordProfile::build(domain.dim(), *omega, s, mode_count, |t| {
        slice_measure(domain, &s, omega, t)
    })
}

/// Tail level at which [`chord_profile_adaptive`] stops refining.
pub const ADAPTIVE_TAIL: f64 = 1e-10;

/// Chord profile with the mode count doubled (`n -> 2n - 1`) from `start` until the
/// coefficient tail drops below [`ADAPTIVE_TAIL`] or `max` is reached. Directions close to a
/// flat tangency need several doublings.
pub fn chord_profile_adaptive(
    domain: &ConvexDomain,
    omega: &Point,
    start: usize,
    max: usize,
) -> Result<ChordProfile> {
    let mut n = start;
    loop {
        let p = chord_profile(domain, omega, n)?;
        if p.tail <= ADAPTIVE_TAIL || 2 * n - 1 > max {
            return Ok(p);
        }
        n = 2 * n - 1;
    }
}

/// `H R` for a planar profile: `sqrt(1-u^2) U_k(u)` maps to `T_{k+1}(u)`.
pub fn hilbert_finite(profile: &ChordProfile) -> Result<HilbertProfile> {
    if profile.dim != 2 {
        return Err(Error::UnsupportedDimension(profile.dim));
    }
    let second_kind = chebyshev::t_to_u(&profile.coefficients);
    let mut coefficients = vec![0.0; second_kind.len() + 1];
    coefficients[1..].copy_from_slice(&second_kind);
    let mut derivs = vec![coefficients.clone()];
    for k in 0..2 {
        let next = chebyshev::derivative(&derivs[k]);
        derivs.push(next);
    }
    Ok(HilbertProfile {
        direction: profile.direction,
        interval: profile.interval,
        midpoint: profile.midpoint,
        half_width: profile.half_width,
        coefficients,
        converged: profile.converged,
        second_kind,
        derivs,
    })
}

/// `order`-th derivative in `t` at `s`, which must keep a distance of
/// [`ENDPOINT_MARGIN`] times the support width from both ends.
pub fn chord_derivative<P: ChordFunction + ?Sized>(profile: &P, order: usize, s: f64) -> Result<f64> {
    if order > profile.highest_order() {
        return Err(Error::Contract(format!(
            "derivative order {order} exceeds {}",
            profile.highest_order()
        )));
    }
    let iv = profile.interval();
    let delta = ENDPOINT_MARGIN * iv.width();
    if !(s >= iv.h_minus + delta && s <= iv.h_plus - delta) {
        return Err(Error::EndpointProximity {
            s,
            h_minus: iv.h_minus,
            h_plus: iv.h_plus,
        });
    }
    let c = iv.half_width();
    let u = (s - iv.midpoint()) / c;
    Ok(profile.derivative_u(order, u) / c.powi(order as i32))
}

/// `max |H(s phi)(t) - t H phi(t) + (1/pi) int phi|` over 64 interior and 8 exterior points,
/// using the 4096-node principal-value rule on the support `[a, b]` of `phi`.
pub fn intertwine_check(phi: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let pv = PrincipalValue::new(a, b, 4096);
    let mass = pv.integral(&phi);
    let w = b - a;
    let inner = (0..64).map(|k| a + w * (0.02 + 0.96 * k as f64 / 63.0));
    let outer = (1..=4).flat_map(|k| [a - 0.1 * w * k as f64, b + 0.1 * w * k as f64]);
    inner
        .chain(outer)
        .map(|t| {
            let lhs = pv.hilbert(|s| s * phi(s), t);
            let rhs = t * pv.hilbert(&phi, t);
            (lhs - rhs + mass / PI).abs()
        })
        .fold(0.0, f64::max)
}

/// Recovers `F(t)` on `(a, b)` from `G = H F` and `mean = int F`:
/// `F(t) = (int G(s) sqrt((b-s)(s-a)) / (s - t) ds + mean) / (pi sqrt((b-t)(t-a)))`.
pub fn hilbert_inverse_finite(
    g: impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    mean: f64,
    t: f64,
) -> Result<f64> {
    if !(t > a && t < b) {
        return Err(Error::OutOfRange {
            what: "t",
            value: t,
            range: format!("({a}, {b})"),
        });
    }
    let mid = 0.5 * (a + b);
    let c = 0.5 * (b - a);
    let u = (t - mid) / c;
    let inner = c * chebyshev_u_principal_value(|v| g(mid + c * v), u, 256);
    Ok((inner + mean) / (PI * ((b - t) * (t - a)).sqrt()))
}

/// `int_a^b R(t) t^k dt` directly from Gauss–Legendre on the raw slice function, used as a
/// cross-check of [`ChordProfile::integrate`].
pub fn raw_moment(domain: &ConvexDomain, omega: &Point, k: i32, nodes: usize) -> Result<f64> {
    let s = domain.support_interval(omega)?;
    let rule = GaussLegendre::get(nodes);
    // t = B + C cos(theta) absorbs the endpoint behaviour
    let (b, c) = (s.midpoint(), s.half_width());
    Ok(rule.integrate(0.0, PI, |th| {
        let t = b + c * th.cos();
        slice_measure(domain, &s, omega, t) * t.powi(k) * c * th.sin()
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{direction_2d, direction_3d, point2, rotation_2d};
    use nalgebra::Matrix3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn superellipse() -> ConvexDomain {
        ConvexDomain::superellipse(2, 4, &[1.0, 1.0], &[0.0, 0.0], Matrix3::identity()).unwrap()
    }

    #[test]
    fn closed_form_slices() {
        let disk = ConvexDomain::ball(2, 1.0).unwrap();
        let v = radon_chi(&disk, &direction_2d(0.4), 0.6).unwrap();
        assert!((v - 1.6).abs() < 1e-12);
        let ball = ConvexDomain::ball(3, 1.0).unwrap();
        let v = radon_chi(&ball, &direction_3d(1.0, 2.0), 0.5).unwrap();
        assert!((v - PI * 0.75).abs() < 1e-12);
        assert_eq!(radon_chi(&disk, &Point::x(), 1.5).unwrap(), 0.0);
    }

    #[test]
    fn ellipse_slice_against_monte_carlo() {
        let e = ConvexDomain::ellipse(2.0, 1.0).unwrap();
        let v = radon_chi(&e, &Point::x(), 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 200_000;
        let hits = (0..n)
            .filter(|_| e.indicator(&point2(1.0, rng.random_range(-1.0..1.0))))
            .count();
        let p = hits as f64 / n as f64;
        let sigma = 2.0 * (p * (1.0 - p) / n as f64).sqrt();
        assert!((v - 2.0 * p).abs() < 3.0 * sigma);
    }

    #[test]
    fn disk_and_ellipse_profiles_are_constant() {
        let disk = ConvexDomain::ball(2, 1.0).unwrap();
        let p = chord_profile(&disk, &direction_2d(0.3), 129).unwrap();
        assert!((p.coefficients[0] - 2.0).abs() < 1e-13);
        assert_eq!(p.coefficients.len(), 1);
        let e = ConvexDomain::ellipsoid(2, &[2.0, 1.0], &[0.3, 0.1], rotation_2d(0.4)).unwrap();
        for k in 0..6 {
            let w = direction_2d(0.2 + k as f64);
            let p = chord_profile(&e, &w, 129).unwrap();
            let h = p.half_width;
            // chord = 2 a1 a2 / h * sqrt(1 - u^2) along a direction with half-width h
            assert!((p.coefficients[0] - 4.0 / h).abs() < 1e-12);
            assert!(p.coefficients.len() == 1 && p.converged);
        }
    }

    #[test]
    fn ball_profile_is_quadratic() {
        let ball = ConvexDomain::ball(3, 1.0).unwrap();
        let p = chord_profile(&ball, &direction_3d(0.5, 0.5), 65).unwrap();
        assert!((p.coefficients[0] - PI).abs() < 1e-12);
        assert!(p.coefficients.iter().skip(1).all(|c| c.abs() < 1e-13));
        let d3 = chord_derivative(&p, 3, 0.2).unwrap();
        assert!(d3.abs() < 1e-9);
    }

    #[test]
    fn superellipse_profile_matches_direct_values() {
        let d = superellipse();
        let p = chord_profile(&d, &direction_2d(0.5), 129).unwrap();
        assert!(p.coefficients.len() > 5);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let t = rng.random_range(p.interval.h_minus..p.interval.h_plus);
            let direct = radon_chi(&d, &p.direction, t).unwrap();
            assert!((p.eval(t) - direct).abs() < 1e-8);
        }
        let axis = chord_profile(&d, &Point::x(), 129).unwrap();
        assert!(!axis.converged);
    }

    #[test]
    fn mass_is_the_volume() {
        let d = superellipse();
        let vol = d.volume().unwrap();
        for k in 0..10 {
            let p = chord_profile(&d, &direction_2d(0.3 + 0.6 * k as f64), 129).unwrap();
            if p.converged {
                assert!((p.mass() - vol).abs() / vol < 1e-6);
            }
        }
        let raw = raw_moment(&d, &direction_2d(0.9), 0, 400).unwrap();
        assert!((raw - vol).abs() / vol < 1e-6);
    }

    #[test]
    fn arch_maps_to_linear_function() {
        let (a, b) = (-0.7, 2.1);
        let p = ChordProfile::from_function(2, a, b, 129, |s| ((b - s) * (s - a)).max(0.0).sqrt())
            .unwrap();
        let h = hilbert_finite(&p).unwrap();
        for k in 1..20 {
            let t = a + (b - a) * k as f64 / 20.0;
            assert!((h.eval(t) - (t - 0.5 * (a + b))).abs() < 1e-12);
        }
        // exterior: (t - mid) - sqrt((t-a)(t-b))
        let t = 3.0;
        assert!((h.eval(t) - (t - 0.7 - ((t - a) * (t - b)).sqrt())).abs() < 1e-12);
        let ball = ConvexDomain::ball(3, 1.0).unwrap();
        let p3 = chord_profile(&ball, &Point::z(), 65).unwrap();
        assert!(matches!(hilbert_finite(&p3), Err(Error::UnsupportedDimension(3))));
    }

    #[test]
    fn airfoil_map_against_principal_value() {
        let pv = PrincipalValue::new(-1.0, 1.0, 4096);
        for k in 0..8 {
            let f = move |s: f64| (1.0 - s * s).max(0.0).sqrt() * chebyshev::eval_u(&unit(k), s);
            let p = ChordProfile::from_function(2, -1.0, 1.0, 129, f).unwrap();
            let h = hilbert_finite(&p).unwrap();
            for t in [-0.9, -0.4, 0.05, 0.6, 0.93] {
                assert!((h.eval(t) - pv.hilbert(f, t)).abs() < 1e-6, "k={k} t={t}");
            }
        }
        // U_1 -> T_2
        let p = ChordProfile::from_function(2, -1.0, 1.0, 33, |s| 2.0 * s * (1.0 - s * s).sqrt())
            .unwrap();
        let h = hilbert_finite(&p).unwrap();
        assert!((h.eval(0.3) - (2.0 * 0.09 - 1.0)).abs() < 1e-13);
    }

    fn unit(k: usize) -> Vec<f64> {
        let mut v = vec![0.0; k + 1];
        v[k] = 1.0;
        v
    }

    #[test]
    fn hilbert_twice_is_minus_identity() {
        let e = ConvexDomain::ellipsoid(2, &[2.0, 1.0], &[0.2, 0.0], rotation_2d(0.5)).unwrap();
        let p = chord_profile(&e, &direction_2d(1.1), 129).unwrap();
        let h = hilbert_finite(&p).unwrap();
        let iv = p.interval;
        for k in 1..10 {
            let t = iv.h_minus + iv.width() * (0.05 + 0.9 * k as f64 / 10.0);
            let hh = hilbert_of_hilbert(&h, t);
            assert!((hh + p.eval(t)).abs() < 1e-6, "t={t} hh={hh} r={}", p.eval(t));
        }
    }

    /// H applied to the whole-line function `h`, by splitting into the support and the two
    /// exterior tails (where `h` decays like `1/t`, handled by `t = 1/x`).
    fn hilbert_of_hilbert(h: &HilbertProfile, t: f64) -> f64 {
        let iv = h.interval;
        let inner = PrincipalValue::new(iv.h_minus, iv.h_plus, 4096).hilbert(|s| h.eval(s), t);
        let gl = GaussLegendre::get(400);
        // tails: s = mid +- C / x, x in (0, 1)
        let (b, c) = (iv.midpoint(), iv.half_width());
        let tail = |sign: f64| {
            gl.integrate(0.0, 1.0, |x| {
                if x <= 0.0 {
                    return 0.0;
                }
                let s = b + sign * c / x;
                h.eval(s) / (t - s) * c / (x * x)
            })
        };
        inner + (tail(1.0) + tail(-1.0)) / PI
    }

    #[test]
    fn inverse_examples() {
        for t in [-0.8, 0.0, 0.5] {
            let f = hilbert_inverse_finite(|s| s, -1.0, 1.0, PI / 2.0, t).unwrap();
            assert!((f - (1.0 - t * t).sqrt()).abs() < 1e-12);
            let f0 = hilbert_inverse_finite(|_| 0.0, -1.0, 1.0, 2.0, t).unwrap();
            assert!((f0 - 2.0 / (PI * (1.0 - t * t).sqrt())).abs() < 1e-13);
        }
        assert!(hilbert_inverse_finite(|s| s, -1.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn inverse_round_trip_on_superellipse() {
        let d = superellipse();
        let p = chord_profile(&d, &direction_2d(0.6), 129).unwrap();
        let h = hilbert_finite(&p).unwrap();
        let iv = p.interval;
        for u in chebyshev::gauss_nodes(40) {
            if u.abs() > 0.96 {
                continue;
            }
            let t = p.midpoint + p.half_width * u;
            let f = hilbert_inverse_finite(|s| h.eval(s), iv.h_minus, iv.h_plus, p.mass(), t)
                .unwrap();
            assert!((f - p.eval(t)).abs() < 1e-5);
        }
    }

    #[test]
    fn intertwining_residuals() {
        assert!(intertwine_check(|s| (1.0 - s * s).max(0.0).sqrt(), -1.0, 1.0) < 1e-6);
        assert_eq!(intertwine_check(|_| 0.0, -1.0, 1.0), 0.0);
        assert!(intertwine_check(|s| (1.0 - s * s).max(0.0).powf(1.5), -1.0, 1.0) < 1e-6);
    }

    #[test]
    fn derivative_examples() {
        let disk = ConvexDomain::ball(2, 1.0).unwrap();
        let h = hilbert_finite(&chord_profile(&disk, &Point::x(), 129).unwrap()).unwrap();
        for s in [-0.9, 0.0, 0.5] {
            assert!(chord_derivative(&h, 2, s).unwrap().abs() < 1e-12);
            assert!((chord_derivative(&h, 1, s).unwrap() - 2.0).abs() < 1e-12);
        }
        assert!(matches!(
            chord_derivative(&h, 2, 0.99),
            Err(Error::EndpointProximity { .. })
        ));
        // a centred symmetric body has even profiles, so the Hilbert image is odd and its
        // second derivative vanishes at the centre
        let d = superellipse();
        let axis = hilbert_finite(&chord_profile(&d, &Point::x(), 129).unwrap()).unwrap();
        assert!(chord_derivative(&axis, 2, 0.0).unwrap().abs() < 1e-8);
        let w = direction_2d(0.5);
        let h129 = hilbert_finite(&chord_profile(&d, &w, 129).unwrap()).unwrap();
        let h257 = hilbert_finite(&chord_profile(&d, &w, 257).unwrap()).unwrap();
        assert!(chord_derivative(&h129, 2, 0.0).unwrap().abs() < 1e-8);
        for s in [0.3, -0.5] {
            let v1 = chord_derivative(&h129, 2, s).unwrap();
            let v2 = chord_derivative(&h257, 2, s).unwrap();
            assert!(v1.abs() > 1e-3);
            assert!((v1 - v2).abs() < 1e-4 * v2.abs(), "{v1} {v2}");
        }
    }

    #[test]
    fn adaptive_refinement_near_flat_tangency() {
        let d = superellipse();
        let w = direction_2d(0.5f64.to_radians());
        let p = chord_profile_adaptive(&d, &w, 129, 2049).unwrap();
        assert!(p.mode_count > 257 && p.tail <= ADAPTIVE_TAIL);
        let q = chord_profile_adaptive(&d, &Point::x(), 129, 1025).unwrap();
        assert_eq!(q.mode_count, 1025);
        assert!(!q.converged);
    }

    #[test]
    fn chord_derivative_against_differences() {
        let d = superellipse();
        let p = chord_profile(&d, &direction_2d(0.4), 129).unwrap();
        let s = 0.3;
        let h = 1e-3;
        let fd = (p.eval(s + h) - 2.0 * p.eval(s) + p.eval(s - h)) / (h * h);
        assert!((chord_derivative(&p, 2, s).unwrap() - fd).abs() < 1e-5);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn evenness(theta in 0.0..std::f64::consts::TAU, frac in 0.01..0.99f64) {
                let d = ConvexDomain::superellipse(2, 4, &[1.0, 0.7], &[0.1, -0.2], rotation_2d(0.3)).unwrap();
                let w = direction_2d(theta);
                let s = d.support_interval(&w).unwrap();
                let t = s.h_minus + frac * s.width();
                let a = radon_chi(&d, &w, t).unwrap();
                let b = radon_chi(&d, &-w, -t).unwrap();
                prop_assert!((a - b).abs() < 1e-8);
            }

            #[test]
            fn flipped_profile(theta in 0.0..std::f64::consts::TAU, u in -0.99..0.99f64) {
                let d = ConvexDomain::superellipse(2, 6, &[1.0, 0.7], &[0.0, 0.0], Matrix3::identity()).unwrap();
                let w = direction_2d(theta);
                let p = chord_profile(&d, &w, 129).unwrap();
                let q = chord_profile(&d, &-w, 129).unwrap();
                prop_assert!((p.eval_u(u) - q.eval_u(-u)).abs() < 1e-8);
                prop_assert!(p.eval_u(u) >= 0.0);
            }

            #[test]
            fn lemma_polynomial_image(q0 in -1.0..1.0f64, q1 in -1.0..1.0f64, q2 in -1.0..1.0f64,
                                      q3 in -1.0..1.0f64, a in -2.0..0.0f64, w in 0.5..3.0f64) {
                // F = Q / sqrt((b-t)(t-a)) has a polynomial Hilbert image of degree <= 2
                let b = a + w;
                let qpoly = |t: f64| q0 + t * (q1 + t * (q2 + t * q3));
                let f = |t: f64| qpoly(t) / ((b - t) * (t - a)).max(1e-300).sqrt();
                let pv = PrincipalValue::new(a, b, 2048);
                let ts: Vec<f64> = (0..40).map(|k| a + w * (0.05 + 0.9 * k as f64 / 39.0)).collect();
                let hs: Vec<f64> = ts.iter().map(|&t| pv.hilbert(f, t)).collect();
                let x = nalgebra::DMatrix::from_fn(ts.len(), 3, |i, j| ts[i].powi(j as i32));
                let y = nalgebra::DVector::from_vec(hs.clone());
                let coef = x.clone().svd(true, true).solve(&y, 1e-14).unwrap();
                let res = (x * coef - &y).norm();
                let scale = y.norm().max(1e-12);
                prop_assert!(res / scale < 1e-6, "relative residual {}", res / scale);
            }

            #[test]
            fn volume_identity(theta in 0.0..std::f64::consts::TAU) {
                let d = ConvexDomain::superellipse(2, 4, &[1.0, 0.7], &[0.0, 0.0], Matrix3::identity()).unwrap();
                let p = chord_profile(&d, &direction_2d(theta), 129).unwrap();
                let vol = d.volume().unwrap();
                if p.converged {
                    prop_assert!((p.mass() - vol).abs() / vol < 1e-6);
                }
            }
        }
    }
}
