//! Smooth plateau cutoffs with exact derivatives.
//!
//! The 1-D profile is `φ(x) = S(2 - |x|)` with the smooth step
//! `S(t) = ψ(t) / (ψ(t) + ψ(1-t))`, `ψ(t) = e^{-1/t}` for `t > 0` and `0` otherwise,
//! so `φ = 1` on `[-1, 1]` and `φ = 0` off `(-2, 2)`. Derivatives come from truncated
//! Taylor arithmetic, which is exact up to rounding at every order.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Highest derivative order carried by [`Jet`].
pub const JET_ORDER: usize = 10;

/// Truncated Taylor expansion `Σ c_k h^k` about a point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet {
    pub c: [f64; JET_ORDER + 1],
}

impl Jet {
    pub fn constant(v: f64) -> Self {
        let mut c = [0.0; JET_ORDER + 1];
        c[0] = v;
        Self { c }
    }

    /// The identity function at `x`.
    pub fn variable(x: f64) -> Self {
        let mut j = Self::constant(x);
        j.c[1] = 1.0;
        j
    }

    pub fn value(&self) -> f64 {
        self.c[0]
    }

    /// `k`-th derivative at the expansion point.
    pub fn derivative(&self, k: usize) -> f64 {
        self.c[k] * crate::special::factorial(k)
    }

    pub fn recip(self) -> Self {
        let mut out = [0.0; JET_ORDER + 1];
        out[0] = 1.0 / self.c[0];
        for k in 1..=JET_ORDER {
            let s: f64 = (1..=k).map(|j| self.c[j] * out[k - j]).sum();
            out[k] = -s / self.c[0];
        }
        Self { c: out }
    }

    pub fn exp(self) -> Self {
        // f' = f a'  gives  k f_k = Σ_{j=1}^{k} j a_j f_{k-j}
        let mut out = [0.0; JET_ORDER + 1];
        out[0] = self.c[0].exp();
        for k in 1..=JET_ORDER {
            let s: f64 = (1..=k).map(|j| j as f64 * self.c[j] * out[k - j]).sum();
            out[k] = s / k as f64;
        }
        Self { c: out }
    }
}

impl Add for Jet {
    type Output = Jet;
    fn add(self, o: Jet) -> Jet {
        let mut c = self.c;
        for (a, b) in c.iter_mut().zip(o.c) {
            *a += b;
        }
        Jet { c }
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(self, o: Jet) -> Jet {
        self + (-o)
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        Jet { c: self.c.map(|v| -v) }
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, o: Jet) -> Jet {
        let mut c = [0.0; JET_ORDER + 1];
        for (k, slot) in c.iter_mut().enumerate() {
            *slot = (0..=k).map(|j| self.c[j] * o.c[k - j]).sum();
        }
        Jet { c }
    }
}

impl Div for Jet {
    type Output = Jet;
    fn div(self, o: Jet) -> Jet {
        self * o.recip()
    }
}

/// `e^{-1/t}` as a jet; identically zero for `t ≤ 0`.
fn psi(t: Jet) -> Jet {
    if t.value() <= 0.0 {
        return Jet::constant(0.0);
    }
    (-(t.recip())).exp()
}

fn smooth_step(t: Jet) -> Jet {
    if t.value() <= 0.0 {
        return Jet::constant(0.0);
    }
    if t.value() >= 1.0 {
        return Jet::constant(1.0);
    }
    let a = psi(t);
    let b = psi(Jet::constant(1.0) - t);
    a / (a + b)
}

/// Jet of the 1-D plateau bump at `x`.
pub fn bump_jet(x: f64) -> Jet {
    let t = if x >= 0.0 { Jet::constant(2.0) - Jet::variable(x) } else { Jet::constant(2.0) + Jet::variable(x) };
    smooth_step(t)
}

/// `φ^{(k)}(x)` of the 1-D bump, `k ≤ JET_ORDER`.
pub fn bump_derivative(k: usize, x: f64) -> f64 {
    assert!(k <= JET_ORDER, "bump derivatives are carried to order {JET_ORDER}");
    bump_jet(x).derivative(k)
}

/// Tensor bump `Π_j φ(x_j)`: equal to one on `Q_1(0)` and zero off `Q_2(0)`.
pub fn tensor_bump(x: &[f64]) -> f64 {
    x.iter().map(|&v| bump_jet(v).value()).product()
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `((1-Δ)^m φ)(x)` for the tensor bump, expanded as
/// `Σ_k C(m,k)(-1)^k Σ_{|β|=k} (k!/β!) Π_j φ^{(2β_j)}(x_j)`. Needs `2m ≤ JET_ORDER`.
pub fn bessel_power_of_bump(m: usize, x: &[f64]) -> f64 {
    let jets: Vec<Jet> = x.iter().map(|&v| bump_jet(v)).collect();
    bessel_power_from_jets(m, &jets)
}

/// As [`bessel_power_of_bump`], from precomputed per-axis jets of the 1-D bump.
pub fn bessel_power_from_jets(m: usize, jets: &[Jet]) -> f64 {
    assert!(2 * m <= JET_ORDER, "(1-Δ)^m of the bump needs 2m ≤ {JET_ORDER}");
    let d = jets.len();
    let mut total = 0.0;
    for k in 0..=m {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        let mut inner = 0.0;
        for_each_composition(k, d, &mut |beta| {
            let multinom = crate::special::factorial(k) / beta.iter().map(|&b| crate::special::factorial(b)).product::<f64>();
            let prod: f64 = beta.iter().zip(jets).map(|(&b, j)| j.derivative(2 * b)).product();
            inner += multinom * prod;
        });
        total += binomial(m, k) * sign * inner;
    }
    total
}

/// Calls `f` with every `β ∈ ℕ^d` with `|β| = k`.
fn for_each_composition(k: usize, d: usize, f: &mut dyn FnMut(&[usize])) {
    fn rec(rem: usize, pos: usize, beta: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
        if pos + 1 == beta.len() {
            beta[pos] = rem;
            f(beta);
            return;
        }
        for b in 0..=rem {
            beta[pos] = b;
            rec(rem - b, pos + 1, beta, f);
        }
    }
    let mut beta = vec![0; d];
    rec(k, 0, &mut beta, f);
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn plateau_and_support() {
        for x in [-1.0, -0.3, 0.0, 0.9, 1.0] {
            assert_eq!(bump_jet(x).value(), 1.0);
        }
        for x in [-3.0, -2.0, 2.0, 2.5] {
            assert_eq!(bump_jet(x).value(), 0.0);
        }
        let mid = bump_jet(1.5).value();
        assert_relative_eq!(mid, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn jet_derivatives_match_finite_differences() {
        let h = 1e-4;
        for x in [1.2, 1.5, 1.83, -1.4] {
            for k in 0..6 {
                let fd = (bump_derivative(k, x + h) - bump_derivative(k, x - h)) / (2.0 * h);
                let exact = bump_derivative(k + 1, x);
                assert!((fd - exact).abs() <= 1e-5 * (1.0 + exact.abs()), "k={k} x={x}: {fd} vs {exact}");
            }
        }
    }

    #[test]
    fn jet_arithmetic_on_known_functions() {
        // 1/(1-x) at 0 has all Taylor coefficients one; exp(x) has 1/k!
        let j = (Jet::constant(1.0) - Jet::variable(0.0)).recip();
        assert!(j.c.iter().all(|&c| (c - 1.0).abs() < 1e-15));
        let e = Jet::variable(0.0).exp();
        for k in 0..=JET_ORDER {
            assert_relative_eq!(e.derivative(k), 1.0, max_relative = 1e-14);
        }
    }

    #[test]
    fn bessel_power_reduces_on_the_plateau() {
        // all derivatives vanish where φ ≡ 1
        assert_relative_eq!(bessel_power_of_bump(3, &[0.2, -0.5]), 1.0, epsilon = 1e-15);
        let x = 1.4;
        let expect = bump_derivative(0, x) - 2.0 * bump_derivative(2, x) + bump_derivative(4, x);
        assert_relative_eq!(bessel_power_of_bump(2, &[x]), expect, max_relative = 1e-13);
    }
}
