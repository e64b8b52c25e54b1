//! Closed-form transition densities: the Gaussian heat kernel on R^d, the
//! absorbing-barrier kernel on (0, inf) and its boundary flux density.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Heat kernel `g_d(s, x) = (2 pi s)^{-d/2} exp(-|x|^2 / 2s)`.
pub fn kernel_g(d: usize, s: f64, x: &[f64]) -> Result<f64> {
    check_dim(d, x)?;
    if !(s > 0.0) {
        return Err(Error::domain(format!("heat kernel needs s > 0, got {s}")));
    }
    Ok(g_r2(d, s, norm2(x)))
}

/// Absorbing-barrier kernel `p_s(x, y) = g_1(s, y - x) - g_1(s, y + x)`.
pub fn kernel_p(s: f64, x: f64, y: f64) -> Result<f64> {
    if !(s > 0.0 && x > 0.0 && y > 0.0) {
        return Err(Error::domain(format!("absorbing kernel needs s, x, y > 0, got ({s}, {x}, {y})")));
    }
    Ok(p_raw(s, x, y))
}

/// Boundary flux density `k_s(y) = y g_1(s, y) / s`.
pub fn kernel_k(s: f64, y: f64) -> Result<f64> {
    if !(s > 0.0 && y > 0.0) {
        return Err(Error::domain(format!("flux density needs s, y > 0, got ({s}, {y})")));
    }
    Ok(k_raw(s, y))
}

/// `d^m/ds^m g_d(s, x)`.
pub fn heat_kernel_time_derivative(d: usize, m: u32, s: f64, x: &[f64]) -> Result<f64> {
    check_dim(d, x)?;
    if !(s > 0.0) {
        return Err(Error::domain(format!("heat kernel needs s > 0, got {s}")));
    }
    Ok(dg_r2(d, m, s, norm2(x)))
}

fn check_dim(d: usize, x: &[f64]) -> Result<()> {
    if !(d == 1 || d == 2) {
        return Err(Error::domain(format!("heat kernels are provided for d = 1, 2 only, got {d}")));
    }
    if x.len() != d {
        return Err(Error::shape(format!("point of length {} for dimension {d}", x.len())));
    }
    Ok(())
}

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

pub(crate) fn g_r2(d: usize, s: f64, r2: f64) -> f64 {
    (2.0 * PI * s).powf(-(d as f64) / 2.0) * (-r2 / (2.0 * s)).exp()
}

pub(crate) fn p_raw(s: f64, x: f64, y: f64) -> f64 {
    g_r2(1, s, (y - x) * (y - x)) - g_r2(1, s, (y + x) * (y + x))
}

pub(crate) fn k_raw(s: f64, y: f64) -> f64 {
    y * g_r2(1, s, y * y) / s
}

/// Coefficients of `P_m` with
/// `d^m/ds^m [s^{-a} e^{-q/s}] = s^{-a-m} e^{-q/s} P_m(q/s)`,
/// from `P_{m+1}(x) = (x - a - m) P_m(x) - x P_m'(x)`.
fn derivative_poly(a: f64, m: u32) -> Vec<f64> {
    let mut p = vec![1.0];
    for j in 0..m {
        let mut next = vec![0.0; p.len() + 1];
        for (k, &c) in p.iter().enumerate() {
            // x * c x^k
            next[k + 1] += c;
            // -(a + j) c x^k
            next[k] -= (a + j as f64) * c;
            // -x * k c x^{k-1}
            next[k] -= k as f64 * c;
        }
        p = next;
    }
    p
}

fn horner(p: &[f64], x: f64) -> f64 {
    p.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

fn poly_derivative(p: &[f64]) -> Vec<f64> {
    p.iter().enumerate().skip(1).map(|(k, c)| k as f64 * c).collect()
}

/// `d^m/ds^m g_d(s, r)` given `r^2`.
pub(crate) fn dg_r2(d: usize, m: u32, s: f64, r2: f64) -> f64 {
    if m == 0 {
        return g_r2(d, s, r2);
    }
    let a = d as f64 / 2.0;
    let x = r2 / (2.0 * s);
    let c = (2.0 * PI).powf(-a);
    c * s.powf(-a - m as f64) * (-x).exp() * horner(&derivative_poly(a, m), x)
}

/// `d^m/ds^m p_s(z, y)`.
pub(crate) fn dp_raw(m: u32, s: f64, z: f64, y: f64) -> f64 {
    dg_r2(1, m, s, (y - z) * (y - z)) - dg_r2(1, m, s, (y + z) * (y + z))
}

/// `d^m/ds^m k_s(y)`, using `k_s(y) = -d/dy g_1(s, y)`.
pub(crate) fn dk_raw(m: u32, s: f64, y: f64) -> f64 {
    if m == 0 {
        return k_raw(s, y);
    }
    let p = derivative_poly(0.5, m);
    let dp = poly_derivative(&p);
    let x = y * y / (2.0 * s);
    let c = (2.0 * PI).powf(-0.5);
    c * s.powf(-0.5 - m as f64) * (-x).exp() * (horner(&p, x) - horner(&dp, x)) * y / s
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn closed_form_values() {
        assert_relative_eq!(kernel_g(1, 1.0, &[0.0]).unwrap(), 0.398_942_280_401_432_7, max_relative = 1e-14);
        assert_relative_eq!(kernel_g(1, 2.0, &[0.0]).unwrap(), 0.282_094_791_773_878_1, max_relative = 1e-14);
        assert_relative_eq!(
            kernel_g(2, 1.0, &[1.0, 1.0]).unwrap(),
            (-1.0f64).exp() / (2.0 * PI),
            max_relative = 1e-14
        );
        assert!((kernel_p(1.0, 1.0, 1.0).unwrap() - 0.344_951_3).abs() < 1e-7);
        assert!((kernel_k(1.0, 1.0).unwrap() - 0.241_970_7).abs() < 1e-7);
    }

    #[test]
    fn domain_errors() {
        assert!(kernel_g(1, 0.0, &[0.0]).is_err());
        assert!(kernel_g(3, 1.0, &[0.0, 0.0, 0.0]).is_err());
        assert!(kernel_p(1.0, 0.0, 1.0).is_err());
        assert!(kernel_k(-1.0, 1.0).is_err());
    }

    #[test]
    fn p_is_symmetric_and_absorbing() {
        assert_relative_eq!(kernel_p(0.7, 0.3, 1.9).unwrap(), kernel_p(0.7, 1.9, 0.3).unwrap(), max_relative = 1e-14);
        assert!(kernel_p(1.0, 1e-8, 1.0).unwrap().abs() < 1e-8);
    }

    #[test]
    fn flux_is_half_boundary_derivative_of_p() {
        for &(s, y) in &[(1.0, 1.0), (0.3, 0.5), (2.0, 3.0)] {
            let dx = 1e-6;
            let fd = (p_raw(s, 2.0 * dx, y) - p_raw(s, dx, y)) / dx;
            let half = 0.5 * fd;
            assert_relative_eq!(half, kernel_k(s, y).unwrap(), max_relative = 1e-4);
        }
    }

    #[test]
    fn time_derivatives_match_finite_differences() {
        let ds = 1e-5;
        for m in 0..3u32 {
            for &(s, r) in &[(1.0, 0.0), (0.4, 0.7), (2.5, 1.3)] {
                for d in 1..=2usize {
                    let r2 = r * r;
                    let fd = (dg_r2(d, m, s + ds, r2) - dg_r2(d, m, s - ds, r2)) / (2.0 * ds);
                    assert_relative_eq!(dg_r2(d, m + 1, s, r2), fd, max_relative = 1e-6, epsilon = 1e-9);
                }
                let fd = (dk_raw(m, s + ds, r + 0.2) - dk_raw(m, s - ds, r + 0.2)) / (2.0 * ds);
                assert_relative_eq!(dk_raw(m + 1, s, r + 0.2), fd, max_relative = 1e-6, epsilon = 1e-9);
            }
        }
        // d/ds g_1(s, y) at s = 1, y = 0 is -g_1(1, 0) / 2.
        assert!((heat_kernel_time_derivative(1, 1, 1.0, &[0.0]).unwrap() + 0.199_471_1).abs() < 1e-7);
    }
}
