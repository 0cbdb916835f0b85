//! Fixed quadrature rules and principal-value integrals.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

/// Gauss–Legendre nodes and weights on [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    fn compute(n: usize) -> Self {
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            let mut x = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 1.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = x;
            nodes[n - 1 - i] = -x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    /// Shared rule with `n` points; rules are memoised.
    pub fn get(n: usize) -> Arc<Self> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<GaussLegendre>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().unwrap_or_else(|e| e.into_inner());
        guard
            .entry(n)
            .or_insert_with(|| Arc::new(Self::compute(n)))
            .clone()
    }

    /// Integrates `f` over `[a, b]`.
    pub fn integrate(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (b + a);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * f(mid + half * x))
            .sum::<f64>()
            * half
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Clenshaw–Curtis weights for the Chebyshev–Lobatto points `cos(j pi / n)`, `j = 0..=n`.
pub fn clenshaw_curtis(n: usize) -> (Vec<f64>, Vec<f64>) {
    let nf = n as f64;
    let nodes: Vec<f64> = (0..=n).map(|j| (PI * j as f64 / nf).cos()).collect();
    let mut weights = vec![0.0; n + 1];
    for (j, w) in weights.iter_mut().enumerate() {
        let theta = PI * j as f64 / nf;
        let mut v = 1.0;
        for k in 1..=n / 2 {
            let b = if 2 * k == n { 1.0 } else { 2.0 };
            v -= b * (2.0 * k as f64 * theta).cos() / (4.0 * (k * k) as f64 - 1.0);
        }
        let c = if j == 0 || j == n { 1.0 } else { 2.0 };
        *w = c * v / nf;
    }
    (nodes, weights)
}

/// Weights of the fourth-order end-corrected trapezoid rule on `n` equispaced samples
/// (requires `n >= 8`), spacing `h`.
pub fn corrected_trapezoid_weights(n: usize, h: f64) -> Vec<f64> {
    let mut w = vec![h; n];
    let ends = [17.0 / 48.0, 59.0 / 48.0, 43.0 / 48.0, 49.0 / 48.0];
    for (i, e) in ends.iter().enumerate() {
        w[i] = e * h;
        w[n - 1 - i] = e * h;
    }
    w
}

/// Finite Hilbert transform `(1/pi) p.v. int_a^b f(s) / (t - s) ds` by singularity
/// subtraction. The cosine substitution `s = (a+b)/2 + (b-a)/2 cos(theta)` absorbs
/// square-root endpoint behaviour, so Gauss–Legendre in `theta` stays spectrally accurate.
#[derive(Debug, Clone)]
pub struct PrincipalValue {
    a: f64,
    b: f64,
    points: Vec<(f64, f64)>,
}

impl PrincipalValue {
    pub fn new(a: f64, b: f64, n: usize) -> Self {
        let rule = GaussLegendre::get(n);
        let mid = 0.5 * (a + b);
        let half = 0.5 * (b - a);
        let points = rule
            .nodes
            .iter()
            .zip(&rule.weights)
            .map(|(x, w)| {
                let theta = 0.5 * PI * (x + 1.0);
                let s = mid + half * theta.cos();
                (s, w * 0.5 * PI * half * theta.sin())
            })
            .collect();
        Self { a, b, points }
    }

    /// `int_a^b f(s) ds`.
    pub fn integral(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.points.iter().map(|&(s, w)| w * f(s)).sum()
    }

    pub fn hilbert(&self, f: impl Fn(f64) -> f64, t: f64) -> f64 {
        let (a, b) = (self.a, self.b);
        if t <= a || t >= b {
            let direct: f64 = self.points.iter().map(|&(s, w)| w * f(s) / (t - s)).sum();
            return direct / PI;
        }
        let ft = f(t);
        let eps = 1e-7 * (b - a);
        let mut acc = 0.0;
        for &(s, w) in &self.points {
            let d = t - s;
            let q = if d.abs() < 1e-12 * (b - a) {
                -(f(t + eps) - f(t - eps)) / (2.0 * eps)
            } else {
                (f(s) - ft) / d
            };
            acc += w * q;
        }
        (acc + ft * ((t - a) / (b - t)).ln()) / PI
    }
}

/// `p.v. int_{-1}^{1} sqrt(1-v^2) g(v) / (v - u) dv` with the `n`-point second-kind
/// Chebyshev–Gauss rule and singularity subtraction; exact for polynomial `g` of degree
/// below `2n`.
pub fn chebyshev_u_principal_value(g: impl Fn(f64) -> f64, u: f64, n: usize) -> f64 {
    let gu = g(u);
    let np1 = (n + 1) as f64;
    let mut acc = 0.0;
    for j in 1..=n {
        let theta = PI * j as f64 / np1;
        let v = theta.cos();
        let w = PI / np1 * theta.sin().powi(2);
        let d = v - u;
        let q = if d.abs() < 1e-12 {
            let eps = 1e-7;
            (g(u + eps) - g(u - eps)) / (2.0 * eps)
        } else {
            (g(v) - gu) / d
        };
        acc += w * q;
    }
    // p.v. int sqrt(1-v^2)/(v-u) dv = -pi u on (-1, 1)
    acc - PI * u * gu
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let rule = GaussLegendre::get(12);
        let v = rule.integrate(0.0, 2.0, |x| x.powi(7) - 3.0 * x * x);
        assert!((v - (256.0 / 8.0 - 8.0)).abs() < 1e-12);
        let sum: f64 = GaussLegendre::get(4096).weights.iter().sum();
        assert!((sum - 2.0).abs() < 1e-12);
    }

    #[test]
    fn clenshaw_curtis_exact_for_polynomials() {
        let (x, w) = clenshaw_curtis(16);
        let v: f64 = x.iter().zip(&w).map(|(x, w)| w * (x.powi(10) + x)).sum();
        assert!((v - 2.0 / 11.0).abs() < 1e-14);
    }

    #[test]
    fn corrected_trapezoid_order() {
        let n = 201;
        let h = 1.0 / (n - 1) as f64;
        let w = corrected_trapezoid_weights(n, h);
        let v: f64 = (0..n).map(|i| w[i] * (i as f64 * h).exp()).sum();
        assert!((v - (1f64.exp() - 1.0)).abs() < 1e-10);
    }

    #[test]
    fn arch_principal_value() {
        let pv = PrincipalValue::new(-1.0, 1.0, 256);
        for t in [-0.9, -0.3, 0.0, 0.55, 0.99] {
            let h = pv.hilbert(|s| (1.0 - s * s).max(0.0).sqrt(), t);
            assert!((h - t).abs() < 1e-12, "t={t} h={h}");
        }
        // outside the support: t - sqrt(t^2 - 1)
        let h = pv.hilbert(|s| (1.0 - s * s).max(0.0).sqrt(), 2.0);
        assert!((h - (2.0 - 3f64.sqrt())).abs() < 1e-12);
    }

    #[test]
    fn second_kind_principal_value() {
        // p.v. int sqrt(1-v^2) U_1(v)/(v-u) dv = -pi T_2(u)
        for u in [-0.7, 0.0, 0.4] {
            let v = chebyshev_u_principal_value(|v| 2.0 * v, u, 8);
            assert!((v + PI * (2.0 * u * u - 1.0)).abs() < 1e-13);
        }
    }
}
