//! Special functions and fixed quadrature rules shared by the field backbones.

use std::f64::consts::{PI, SQRT_2};

/// Complementary error function, accurate to full relative precision deep into the tail.
#[inline]
pub fn erfc(x: f64) -> f64 {
    libm::erfc(x)
}

/// `P(X > a)` for `X ~ N(mean, var)`.
pub fn normal_upper(a: f64, mean: f64, var: f64) -> f64 {
    0.5 * erfc((a - mean) / (var.sqrt() * SQRT_2))
}

/// `P(X outside [lo, hi])` for `X ~ N(mean, var)`.
pub fn normal_outside(lo: f64, hi: f64, mean: f64, var: f64) -> f64 {
    let s = var.sqrt() * SQRT_2;
    (0.5 * erfc((hi - mean) / s) + 0.5 * erfc((mean - lo) / s)).min(1.0)
}

/// `P(X in [lo, hi])` for `X ~ N(mean, var)`, computed without cancellation when the
/// interval sits in one tail.
pub fn normal_inside(lo: f64, hi: f64, mean: f64, var: f64) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    let s = var.sqrt() * SQRT_2;
    let (a, b) = ((lo - mean) / s, (hi - mean) / s);
    if a >= 0.0 {
        0.5 * (erfc(a) - erfc(b))
    } else if b <= 0.0 {
        0.5 * (erfc(-b) - erfc(-a))
    } else {
        1.0 - 0.5 * erfc(b) - 0.5 * erfc(-a)
    }
}

/// Probability that an isotropic normal vector leaves an axis-aligned box, given the
/// per-axis escape probabilities. Uses `1 - prod(1 - q)` in a cancellation-free form.
pub fn union_escape(per_axis: &[f64]) -> f64 {
    if per_axis.iter().any(|&q| q >= 1.0) {
        return 1.0;
    }
    let log_stay: f64 = per_axis.iter().map(|&q| (-q).ln_1p()).sum();
    (-log_stay.exp_m1()).clamp(0.0, 1.0)
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(order >= 1, "Gauss-Legendre order must be positive");
    let n = order;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
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
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
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

/// Physicists' Hermite polynomial `H_m(x)`.
pub fn hermite(m: usize, x: f64) -> f64 {
    let mut h0 = 1.0;
    if m == 0 {
        return h0;
    }
    let mut h1 = 2.0 * x;
    for k in 1..m {
        let h2 = 2.0 * x * h1 - 2.0 * k as f64 * h0;
        h0 = h1;
        h1 = h2;
    }
    h1
}

pub fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Surface measure of the unit sphere in `R^d`.
pub fn sphere_area(d: usize) -> f64 {
    match d {
        1 => 2.0,
        2 => 2.0 * PI,
        3 => 4.0 * PI,
        _ => {
            let half = d as f64 / 2.0;
            2.0 * PI.powf(half) / libm::tgamma(half)
        }
    }
}

/// `E|Z|^{2m}` for `Z ~ N(0, var I_d)`.
pub fn gaussian_even_moment(m: usize, var: f64, d: usize) -> f64 {
    let half = d as f64 / 2.0;
    (2.0 * var).powi(m as i32) * libm::tgamma(m as f64 + half) / libm::tgamma(half)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        for order in [1, 2, 5, 12, 24] {
            let (x, w) = gauss_legendre(order);
            for p in 0..(2 * order) {
                let q: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(p as i32)).sum();
                let exact = if p % 2 == 1 { 0.0 } else { 2.0 / (p as f64 + 1.0) };
                assert!((q - exact).abs() < 1e-13, "order {order} degree {p}: {q} vs {exact}");
            }
        }
    }

    #[test]
    fn erfc_tail_matches_reference() {
        // mpmath reference values
        assert_relative_eq!(erfc(10.0), 2.0884875837625449e-45, max_relative = 1e-14);
        assert_relative_eq!(erfc(26.0), 5.6631924088561432e-296, max_relative = 1e-13);
    }

    #[test]
    fn normal_pieces_partition_unity() {
        let (lo, hi, m, v) = (-0.3, 2.1, 0.4, 1.7);
        let total = normal_inside(lo, hi, m, v) + normal_outside(lo, hi, m, v);
        assert_relative_eq!(total, 1.0, max_relative = 1e-15);
        // far tail interval keeps relative precision
        let tiny = normal_inside(20.0, 21.0, 0.0, 1.0);
        assert!(tiny > 0.0 && tiny < 1e-80);
    }

    #[test]
    fn hermite_low_orders() {
        assert_eq!(hermite(0, 0.7), 1.0);
        assert_relative_eq!(hermite(3, 0.7), 8.0 * 0.343 - 12.0 * 0.7);
        assert_relative_eq!(hermite(4, 1.1), 16.0 * 1.1f64.powi(4) - 48.0 * 1.21 + 12.0, max_relative = 1e-13);
    }

    #[test]
    fn union_escape_small_probabilities() {
        let q = [1e-20, 2e-20, 3e-20];
        assert_relative_eq!(union_escape(&q), 6e-20, max_relative = 1e-12);
        assert_eq!(union_escape(&[0.2, 1.0]), 1.0);
    }
}
