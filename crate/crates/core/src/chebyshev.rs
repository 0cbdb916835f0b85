//! Chebyshev series on [-1, 1]: fitting at Gauss nodes, Clenshaw evaluation,
//! term-by-term differentiation and basis conversion.

use std::f64::consts::PI;

/// Chebyshev–Gauss nodes `cos(pi (j + 1/2) / n)`, `j = 0..n`. They exclude the endpoints.
pub fn gauss_nodes(n: usize) -> Vec<f64> {
    (0..n)
        .map(|j| (PI * (j as f64 + 0.5) / n as f64).cos())
        .collect()
}

/// First-kind coefficients of the degree `n-1` interpolant through values sampled at
/// [`gauss_nodes`]`(n)`.
pub fn fit_gauss(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let nf = n as f64;
    let mut coeffs = vec![0.0; n];
    for (k, c) in coeffs.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (j, v) in values.iter().enumerate() {
            acc += v * (PI * k as f64 * (j as f64 + 0.5) / nf).cos();
        }
        *c = 2.0 * acc / nf;
    }
    if let Some(c0) = coeffs.first_mut() {
        *c0 *= 0.5;
    }
    coeffs
}

/// Clenshaw evaluation of `sum c_k T_k(x)`.
pub fn eval(coeffs: &[f64], x: f64) -> f64 {
    let mut b1 = 0.0;
    let mut b2 = 0.0;
    for &c in coeffs.iter().skip(1).rev() {
        let b0 = 2.0 * x * b1 - b2 + c;
        b2 = b1;
        b1 = b0;
    }
    match coeffs.first() {
        Some(&c0) => x * b1 - b2 + c0,
        None => 0.0,
    }
}

/// Coefficients of the derivative series.
pub fn derivative(coeffs: &[f64]) -> Vec<f64> {
    let n = coeffs.len();
    if n <= 1 {
        return vec![0.0];
    }
    let mut d = vec![0.0; n - 1];
    for k in (1..n).rev() {
        let upper = if k + 1 < n - 1 { d[k + 1] } else { 0.0 };
        d[k - 1] = upper + 2.0 * k as f64 * coeffs[k];
    }
    d[0] *= 0.5;
    d
}

/// Coefficients of the `order`-th derivative series.
pub fn derivative_n(coeffs: &[f64], order: usize) -> Vec<f64> {
    let mut c = coeffs.to_vec();
    for _ in 0..order {
        c = derivative(&c);
    }
    c
}

/// Converts first-kind coefficients to second-kind ones: `sum c_k T_k = sum b_k U_k`.
pub fn t_to_u(coeffs: &[f64]) -> Vec<f64> {
    let n = coeffs.len();
    let get = |k: usize| coeffs.get(k).copied().unwrap_or(0.0);
    (0..n)
        .map(|k| {
            let own = if k == 0 { get(0) } else { 0.5 * get(k) };
            own - 0.5 * get(k + 2)
        })
        .collect()
}

/// Clenshaw evaluation of `sum b_k U_k(x)`.
pub fn eval_u(coeffs: &[f64], x: f64) -> f64 {
    let mut b1 = 0.0;
    let mut b2 = 0.0;
    for &c in coeffs.iter().rev() {
        let b0 = 2.0 * x * b1 - b2 + c;
        b2 = b1;
        b1 = b0;
    }
    b1
}

/// Largest coefficient magnitude in the last tenth of the series relative to the largest
/// overall. Used as a resolution indicator.
pub fn tail_ratio(coeffs: &[f64]) -> f64 {
    let n = coeffs.len();
    let scale = coeffs.iter().fold(0.0_f64, |m, c| m.max(c.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    let start = n - (n / 10).max(1);
    coeffs[start..].iter().fold(0.0_f64, |m, c| m.max(c.abs())) / scale
}

/// Drops trailing coefficients below `tol * max|c|`; they carry sampling noise only.
pub fn chop(coeffs: &mut Vec<f64>, tol: f64) {
    let scale = coeffs.iter().fold(0.0_f64, |m, c| m.max(c.abs()));
    let keep = coeffs
        .iter()
        .rposition(|c| c.abs() > tol * scale)
        .map_or(1, |i| i + 1);
    coeffs.truncate(keep);
}

/// Falling factorial `m (m-1) ... (m-k+1)`.
fn falling(m: f64, k: usize) -> f64 {
    (0..k).map(|i| m - i as f64).product()
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `d^k/du^k (1-u^2)^m` for `|u| < 1`.
pub fn weight_derivative(m: f64, k: usize, u: f64) -> f64 {
    (0..=k)
        .map(|i| {
            let left = falling(m, i);
            let right = falling(m, k - i);
            if left == 0.0 || right == 0.0 {
                return 0.0;
            }
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            binomial(k, i)
                * sign
                * left
                * (1.0 - u).powf(m - i as f64)
                * right
                * (1.0 + u).powf(m - (k - i) as f64)
        })
        .sum()
}

/// `d^k/du^k [(1-u^2)^m psi(u)]` where `psi` is given by its first-kind coefficients.
pub fn weighted_series_derivative(psi: &[f64], m: f64, k: usize, u: f64) -> f64 {
    let mut series = psi.to_vec();
    let mut psi_derivs = Vec::with_capacity(k + 1);
    for _ in 0..=k {
        psi_derivs.push(eval(&series, u));
        series = derivative(&series);
    }
    (0..=k)
        .map(|j| binomial(k, j) * weight_derivative(m, j, u) * psi_derivs[k - j])
        .sum()
}
