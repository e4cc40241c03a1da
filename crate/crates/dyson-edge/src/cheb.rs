//! Chebyshev series on [-1, 1]: interpolation at first-kind nodes,
//! Clenshaw evaluation (real and complex) and differentiation.

use num_complex::Complex64;
use std::f64::consts::PI;

/// Angles θ_k = (k + ½)π/n of the first-kind nodes ξ_k = cos θ_k.
pub fn node_angles(n: usize) -> Vec<f64> {
    (0..n).map(|k| (k as f64 + 0.5) * PI / n as f64).collect()
}

/// Coefficients a_j with f(ξ) = Σ a_j T_j(ξ), from values at the
/// first-kind nodes (a DCT-II).
pub fn coeffs_from_values(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let theta = node_angles(n);
    let mut out = vec![0.0; n];
    for (j, slot) in out.iter_mut().enumerate() {
        let mut s = 0.0;
        for (k, v) in values.iter().enumerate() {
            s += v * (j as f64 * theta[k]).cos();
        }
        *slot = 2.0 * s / n as f64;
    }
    out[0] *= 0.5;
    out
}

/// Drops trailing coefficients below `rel` times the largest one.
pub fn trim(mut a: Vec<f64>, rel: f64) -> Vec<f64> {
    let scale = a.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    while a.len() > 1 && a.last().is_some_and(|c| c.abs() <= rel * scale) {
        a.pop();
    }
    a
}

pub fn eval(a: &[f64], x: f64) -> f64 {
    let (mut b1, mut b2) = (0.0, 0.0);
    for &c in a.iter().skip(1).rev() {
        let b0 = c + 2.0 * x * b1 - b2;
        b2 = b1;
        b1 = b0;
    }
    a.first().copied().unwrap_or(0.0) + x * b1 - b2
}

pub fn eval_c(a: &[f64], x: Complex64) -> Complex64 {
    let (mut b1, mut b2) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
    for &c in a.iter().skip(1).rev() {
        let b0 = c + 2.0 * x * b1 - b2;
        b2 = b1;
        b1 = b0;
    }
    a.first().copied().unwrap_or(0.0) + x * b1 - b2
}

/// Coefficients of the derivative series.
pub fn derivative(a: &[f64]) -> Vec<f64> {
    let n = a.len();
    if n <= 1 {
        return vec![0.0];
    }
    let mut d = vec![0.0; n + 1];
    for k in (1..n).rev() {
        d[k - 1] = d[k + 1] + 2.0 * k as f64 * a[k];
    }
    d[0] *= 0.5;
    d.truncate(n - 1);
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolates_polynomial_exactly() {
        let f = |x: f64| 3.0 * x * x * x - x + 0.5;
        let vals: Vec<f64> = node_angles(16).iter().map(|t| f(t.cos())).collect();
        let a = trim(coeffs_from_values(&vals), 1e-14);
        assert_eq!(a.len(), 4);
        for x in [-0.9, -0.2, 0.3, 0.99] {
            assert!((eval(&a, x) - f(x)).abs() < 1e-13);
        }
        let z = Complex64::new(0.4, 0.3);
        let fz = 3.0 * z * z * z - z + 0.5;
        assert!((eval_c(&a, z) - fz).norm() < 1e-13);
    }

    #[test]
    fn derivative_of_cubic() {
        let vals: Vec<f64> = node_angles(8).iter().map(|t| t.cos().powi(3)).collect();
        let d = derivative(&coeffs_from_values(&vals));
        for x in [-0.7, 0.1, 0.8] {
            assert!((eval(&d, x) - 3.0 * x * x).abs() < 1e-12);
        }
    }
}
