//! Finite-window reconstruction, weighted moments of heat solutions, and the explicit
//! family showing that a window `|n| ≤ G(N)` cannot recover every unit-norm state.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian_field::{GaussianMixtureField, GaussianTerm};
use crate::observability::{certify_against, out_of_band_norm, ResidualContext};
use crate::quadrature::Certified;
use crate::report::BoundReport;
use crate::sinc_basis::LatticeIndexSet;
use crate::special::factorial;

/// A windowed reconstruction `Σ_{|n/N|<r} u(T,n/N) f_{N,n}` of `u(T) = e^{TΔ}u0`.
#[derive(Clone, Debug)]
pub struct WindowedExperiment {
    pub u0: GaussianMixtureField,
    pub t: f64,
    pub n: f64,
    pub r: f64,
    /// Order of the spatial weight `(1+|x|)^k` carried by the initial datum.
    pub k: u32,
}

/// Residual of a windowed reconstruction, split against the full-lattice residual.
#[derive(Clone, Copy, Debug)]
pub struct WindowMeasurement {
    pub residual: Certified,
    pub full: Certified,
    /// `(N^{-d} Σ_{n∉W} (u_n² + 2 u_n A(n/N)))^{1/2}`, the part caused by the window.
    pub excess: Certified,
    pub window_len: usize,
}

fn check_tn(t: f64, n: f64) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::input(format!("time T must be positive, got {t}")));
    }
    if !(n > 0.0 && n.is_finite()) {
        return Err(Error::input(format!("density N must be positive, got {n}")));
    }
    Ok(())
}

/// Residual of `u - Σ_W u_n f_{N,n}` computed as `‖u‖² - N^{-d} Σ_W (2 u_n p_n - u_n²)`,
/// with `p_n` the low-band projection at `n/N`. No frequency grid is needed, so this
/// handles windows far from the field's mass cheaply.
fn small_window_residual(u: &GaussianMixtureField, window: &LatticeIndexSet, samples: &[f64]) -> Certified {
    let n = window.density();
    let scale = n.powi(-(u.dim() as i32));
    let mut captured = 0.0;
    let mut cert = 0.0;
    for (k, &un) in samples.iter().enumerate() {
        let p = u.band_limited_value(n, &window.point(k));
        captured += 2.0 * un * p.value - un * un;
        cert += 2.0 * un.abs() * p.certificate + 4.0 * f64::EPSILON * (un * un + (un * p.value).abs());
    }
    let total = u.l2_norm().powi(2);
    Certified::new(total - scale * captured, 4.0 * f64::EPSILON * total + scale * cert).sqrt()
}

/// Measures the windowed residual without any bound attached; valid for every `r > 0`.
pub fn window_measurement(exp: &WindowedExperiment, tol: f64) -> Result<WindowMeasurement> {
    check_tn(exp.t, exp.n)?;
    if !(exp.r > 0.0 && exp.r.is_finite()) {
        return Err(Error::input(format!("window radius r must be positive, got {}", exp.r)));
    }
    let n = exp.n;
    let d = exp.u0.dim();
    let ut = exp.u0.heat_evolve(exp.t)?;
    let window = LatticeIndexSet::ball(d, n, exp.r)?;
    let w_samples: Vec<f64> = (0..window.len()).map(|k| ut.value(&window.point(k))).collect();
    let scale = n.powi(-(d as i32));
    let captured: f64 = scale * w_samples.iter().map(|v| v * v).sum::<f64>();
    let total = ut.l2_norm().powi(2);
    let rel = tol.min(1e-3);

    if captured < 0.5 * total {
        let ctx = ResidualContext::from_gaussian(&ut, n)?;
        let full = ctx.full_residual();
        let residual = small_window_residual(&ut, &window, &w_samples);
        let ex_sq = residual.value.powi(2) - full.value.powi(2);
        let ex_cert = 2.0 * residual.value * residual.certificate + 2.0 * full.value * full.certificate;
        return Ok(WindowMeasurement {
            residual,
            full,
            excess: Certified::new(ex_sq, ex_cert).sqrt(),
            window_len: window.len(),
        });
    }

    // Most of the mass is inside the window: work with sample errors on a box.
    let half = n.powf(d as f64 / 2.0);
    let target = (1e-2 * rel * half * out_of_band_norm(&ut, n)).max(1e-30 * half * total.sqrt());
    let (m_adaptive, _) = ut.adaptive_lattice_radius(n, target);
    let m = m_adaptive.max(window.bounding_index());
    let error_tail = ut.lattice_tail_bound(n, m);
    let ctx = ResidualContext::from_gaussian(&ut, n)?;
    let full = ctx.full_residual();
    let bx = LatticeIndexSet::cube(d, n, m)?;
    let (alias, point_cert) = ctx.alias_samples(&bx)?;
    let errors: Vec<f64> = bx
        .iter()
        .enumerate()
        .map(|(k, idx)| if window.contains(idx) { 0.0 } else { ut.value(&bx.point(k)) })
        .collect();
    let residual = ctx.reconstruction_error_with(&alias, point_cert, &errors, error_tail);
    let ex_sq: f64 = scale * errors.iter().zip(&alias).map(|(e, a)| e * e + 2.0 * e * a).sum::<f64>();
    let ex_cert = residual.certificate * (2.0 * residual.value + residual.certificate)
        + full.certificate * (2.0 * full.value + full.certificate)
        + scale * (error_tail * error_tail + 2.0 * error_tail * half * (ctx.alias_sq().value.sqrt() + 1e-300))
        + scale * 2.0 * point_cert * errors.iter().map(|e| e.abs()).sum::<f64>();
    Ok(WindowMeasurement { residual, full, excess: Certified::new(ex_sq, ex_cert).sqrt(), window_len: window.len() })
}

/// Window bound factor for weight order `k`, without the constant and without the norm.
///
/// For `k = 1` this is `(1+(TN²)^{-d/4})(e^{-TN²} + (1+T^{d/2})(1+T^{-1/2}) r^{-1})`; other
/// orders use the general form with the factorial constant
/// `d^{k/2} 12^k (d+k)! (1+r^{-d}T^{d/2})(1+T^{-k/2})(1+r)^{-k}`.
pub fn window_form(d: usize, t: f64, n: f64, r: f64, k: u32) -> f64 {
    let a = t * n * n;
    let df = d as f64;
    let lead = 1.0 + a.powf(-df / 4.0);
    let window = if k == 1 {
        (1.0 + t.powf(df / 2.0)) * (1.0 + t.powf(-0.5)) / r
    } else {
        let kf = f64::from(k);
        df.powf(kf / 2.0)
            * 12f64.powf(kf)
            * factorial(d + k as usize)
            * (1.0 + r.powf(-df) * t.powf(df / 2.0))
            * (1.0 + t.powf(-kf / 2.0))
            * (1.0 + r).powf(-kf)
    };
    lead * ((-a).exp() + window)
}

/// Windowed residual against `C · window_form · ‖(1+|x|)^k u0‖`.
pub fn windowed_residual(exp: &WindowedExperiment, tol: f64) -> Result<BoundReport> {
    if exp.r < 1.0 {
        return Err(Error::precondition(format!(
            "the window bound needs r ≥ 1, got r = {}; use window_measurement for the residual alone",
            exp.r
        )));
    }
    let m = window_measurement(exp, tol)?;
    let d = exp.u0.dim();
    let weighted = exp.u0.weighted_l2_norm(exp.k, 1e-8)?;
    let form = window_form(d, exp.t, exp.n, exp.r, exp.k) * (weighted.value + weighted.certificate);
    // the residual can sit many orders below the bound; the ratio is what needs accuracy
    let residual = certify_against("windowed residual", m.residual, tol, form)?;
    Ok(BoundReport::with_form("window", residual.value, residual.certificate, form, "gaussian")
        .param("d", d as f64)
        .param("T", exp.t)
        .param("N", exp.n)
        .param("r", exp.r)
        .param("k", f64::from(exp.k))
        .extra("full_residual", m.full.value)
        .extra("excess", m.excess.value)
        .extra("excess_certificate", m.excess.certificate)
        .extra("window_size", m.window_len as f64)
        .extra("weighted_norm", weighted.value))
}

/// Largest derivative order and weight order accepted by [`moment_growth_check`].
pub const MAX_MOMENT_ORDER: usize = 4;
pub const MAX_WEIGHT_ORDER: u32 = 3;

/// `(2d)^{k+1} (6^k (|α|+k)!)² (1+T)^k T^{-|α|}`.
pub fn moment_factor(d: usize, t: f64, order: usize, k: u32) -> f64 {
    let kf = f64::from(k);
    (2.0 * d as f64).powf(kf + 1.0) * (6f64.powf(kf) * factorial(order + k as usize)).powi(2) * (1.0 + t).powf(kf) * t.powi(-(order as i32))
}

/// Checks `∫(1+|x|)^{2k}|D^α u(T)|² ≤ moment_factor · ∫(1+|x|)^{2k}|u0|²`.
pub fn moment_growth_check(u0: &GaussianMixtureField, t: f64, alpha: &[usize], k: u32, tol: f64) -> Result<BoundReport> {
    Error::check_dim(u0.dim(), alpha.len())?;
    let order: usize = alpha.iter().sum();
    if order > MAX_MOMENT_ORDER || k > MAX_WEIGHT_ORDER {
        return Err(Error::input(format!(
            "moment check supports |α| ≤ {MAX_MOMENT_ORDER} and k ≤ {MAX_WEIGHT_ORDER}, got |α| = {order}, k = {k}"
        )));
    }
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::input(format!("time T must be positive, got {t}")));
    }
    let ut = u0.heat_evolve(t)?;
    let lhs = ut.weighted_derivative_integral(alpha, k, tol)?;
    let w0 = u0.weighted_l2_norm(k, tol)?;
    let w0_sq = (w0.value + w0.certificate).powi(2);
    let rhs = moment_factor(u0.dim(), t, order, k) * w0_sq;
    let alpha_label = alpha.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(",");
    Ok(BoundReport::explicit("moment", lhs.value, lhs.certificate, rhs, "gaussian")
        .param("d", u0.dim() as f64)
        .param("T", t)
        .param("k", f64::from(k))
        .param("order", order as f64)
        .label("alpha", alpha_label)
        .extra("initial_weighted_sq", w0.value * w0.value))
}

/// Growth of the window radius with the density in the counterexample family.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum GrowthFunction {
    Constant(f64),
    Linear(f64),
    Square(f64),
    Exp(f64),
}

impl GrowthFunction {
    pub fn eval(&self, n: f64) -> f64 {
        match *self {
            Self::Constant(c) => c,
            Self::Linear(c) => c * n,
            Self::Square(c) => c * n * n,
            Self::Exp(c) => c * n.exp(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Constant(_) => "constant",
            Self::Linear(_) => "linear",
            Self::Square(_) => "square",
            Self::Exp(_) => "exp",
        }
    }

    pub fn coefficient(&self) -> f64 {
        match *self {
            Self::Constant(c) | Self::Linear(c) | Self::Square(c) | Self::Exp(c) => c,
        }
    }
}

impl fmt::Display for GrowthFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.name(), self.coefficient())
    }
}

impl FromStr for GrowthFunction {
    type Err = Error;

    /// Accepts `name` or `name:coefficient`, e.g. `linear:2`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, coef) = match s.split_once(':') {
            Some((a, b)) => (a, b.trim().parse::<f64>().map_err(|_| Error::input(format!("bad growth coefficient in '{s}'")))?),
            None => (s, 1.0),
        };
        if !(coef > 0.0 && coef.is_finite()) {
            return Err(Error::input(format!("growth coefficient must be positive, got {coef}")));
        }
        match name.trim() {
            "constant" => Ok(Self::Constant(coef)),
            "linear" => Ok(Self::Linear(coef)),
            "square" | "n2" => Ok(Self::Square(coef)),
            "exp" => Ok(Self::Exp(coef)),
            other => Err(Error::input(format!("unknown growth function '{other}' (expected constant, linear, square, exp)"))),
        }
    }
}

/// Distance of the counterexample's center from the origin:
/// `G/N + (2(T+1)[(2(G+1))^d + 2N^{-d/2} + ln 4^{1+d/4}])^{1/2}` with `G = G(N)`.
pub fn counterexample_shift(d: usize, t: f64, n: f64, g: f64) -> f64 {
    let df = d as f64;
    let bracket = (2.0 * (g + 1.0)).powf(df) + 2.0 * n.powf(-df / 2.0) + (1.0 + df / 4.0) * 4f64.ln();
    g / n + (2.0 * (t + 1.0) * bracket).sqrt()
}

/// Initial datum `term(1, (L_N, 0, …, 0), 1)` of the counterexample family.
pub fn counterexample_field(d: usize, t: f64, n: f64, growth: GrowthFunction) -> Result<GaussianMixtureField> {
    check_tn(t, n)?;
    let g = growth.eval(n);
    if !(g > 0.0 && g.is_finite()) {
        return Err(Error::input(format!("growth function must be positive and finite at N = {n}, got {g}")));
    }
    let mut center = vec![0.0; d];
    center[0] = counterexample_shift(d, t, n, g);
    GaussianMixtureField::new(d, vec![GaussianTerm::new(1.0, center, 1.0)?])
}

/// `½ (8π)^{-d/4} (T+1)^{-d/4}`.
pub fn counterexample_floor(d: usize, t: f64) -> f64 {
    0.5 * (8.0 * PI).powf(-(d as f64) / 4.0) * (t + 1.0).powf(-(d as f64) / 4.0)
}

/// Residual of the window `|n| ≤ G(N)` on the counterexample state, asserted to stay
/// above `½ (8π)^{-d/4} (T+1)^{-d/4}`.
pub fn counterexample_gap(d: usize, t: f64, n: f64, growth: GrowthFunction) -> Result<BoundReport> {
    let u0 = counterexample_field(d, t, n, growth)?;
    let ut = u0.heat_evolve(t)?;
    let g = growth.eval(n);
    let window = LatticeIndexSet::integer_ball(d, n, g)?;
    let samples: Vec<f64> = (0..window.len()).map(|k| ut.value(&window.point(k))).collect();
    let gap = small_window_residual(&ut, &window, &samples);
    let window_sum = (n.powi(-(d as i32)) * samples.iter().map(|v| v * v).sum::<f64>()).sqrt();
    let floor = counterexample_floor(d, t);
    Ok(BoundReport::lower_bound("counterexample", gap.value, gap.certificate, floor, "gaussian")
        .param("d", d as f64)
        .param("T", t)
        .param("N", n)
        .param("G", g)
        .label("growth", growth.to_string())
        .extra("shift", u0.terms()[0].center[0])
        .extra("initial_norm", u0.l2_norm())
        .extra("state_norm", ut.l2_norm())
        .extra("window_sum_norm", window_sum)
        .extra("window_sum_bound", floor)
        .extra("window_size", window.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn counterexample_regression_value() {
        // d=1, T=1, G≡1, N=1: L = 1 + (4·(4 + 2 + ln 4^{5/4}))^{1/2}
        let l = counterexample_shift(1, 1.0, 1.0, 1.0);
        let expect = 1.0 + (4.0 * (4.0 + 2.0 + 1.25 * 4f64.ln())).sqrt();
        assert_relative_eq!(l, expect, max_relative = 1e-15);
        assert_relative_eq!(l, 6.561_606_944_543_946, max_relative = 1e-14);
        assert!(counterexample_shift(2, 1.0, 1.0, 2.0) > counterexample_shift(2, 1.0, 1.0, 1.0));
    }

    #[test]
    fn counterexample_gap_holds_and_norms_are_exact() {
        for d in 1..=2 {
            let r = counterexample_gap(d, 1.0, 2.0, GrowthFunction::Linear(1.0)).unwrap();
            assert!(r.holds(), "{r:?}");
            assert_relative_eq!(r.extras["initial_norm"], (8.0 * PI).powf(-(d as f64) / 4.0), max_relative = 1e-12);
            assert!(r.extras["window_sum_norm"] <= r.extras["window_sum_bound"]);
        }
    }

    #[test]
    fn small_window_formula_matches_box_formula() {
        let u0 = GaussianMixtureField::single(1.0, vec![0.7], 0.5).unwrap();
        // r = 0.6 captures little at N = 2, so the complement route is taken...
        let a = window_measurement(&WindowedExperiment { u0: u0.clone(), t: 0.5, n: 2.0, r: 0.6, k: 1 }, 1e-6).unwrap();
        // ...and the box route gives the same number when forced via a direct computation
        let ut = u0.heat_evolve(0.5).unwrap();
        let window = LatticeIndexSet::ball(1, 2.0, 0.6).unwrap();
        let m = 40;
        let ctx = ResidualContext::from_gaussian(&ut, 2.0).unwrap();
        let bx = LatticeIndexSet::cube(1, 2.0, m).unwrap();
        let errors: Vec<f64> = bx.iter().enumerate().map(|(k, n)| if window.contains(n) { 0.0 } else { ut.value(&bx.point(k)) }).collect();
        let b = ctx.reconstruction_error(&bx, &errors, ut.lattice_tail_bound(2.0, m)).unwrap();
        assert_relative_eq!(a.residual.value, b.value, max_relative = 1e-9);
    }

    #[test]
    fn window_bound_requires_r_at_least_one() {
        let u0 = GaussianMixtureField::single(1.0, vec![0.0], 1.0).unwrap();
        let exp = WindowedExperiment { u0, t: 1.0, n: 1.0, r: 0.5, k: 1 };
        assert!(matches!(windowed_residual(&exp, 1e-6), Err(Error::Precondition(_))));
        assert!(window_measurement(&exp, 1e-6).is_ok());
    }

    #[test]
    fn moment_check_examples() {
        let u0 = GaussianMixtureField::single(1.0, vec![0.0], 1.0).unwrap();
        for t in [0.25, 1.0, 4.0] {
            // closed form: ∫|∂u(T)|² = ‖u(T)‖² / (4(1+T))
            let r = moment_growth_check(&u0, t, &[1], 0, 1e-9).unwrap();
            let s = 1.0 + t;
            let exact = (8.0 * PI * s).powf(-0.5) / (4.0 * s);
            assert_relative_eq!(r.measured, exact, max_relative = 1e-8);
            let envelope = (1.0 / (2.0 * t)) * (-1f64).exp() * u0.l2_norm().powi(2);
            assert!(r.measured <= envelope);
            assert!(r.holds());
            let r1 = moment_growth_check(&u0, t, &[1], 1, 1e-9).unwrap();
            assert!(r1.measured >= r.measured);
        }
        let r = moment_growth_check(&u0, 1.0, &[0], 0, 1e-9).unwrap();
        assert_relative_eq!(r.measured, u0.heat_evolve(1.0).unwrap().l2_norm().powi(2), max_relative = 1e-9);
        assert!(moment_growth_check(&u0, 1.0, &[5], 0, 1e-9).is_err());
    }

    #[test]
    fn growth_parsing() {
        assert_eq!("linear:2".parse::<GrowthFunction>().unwrap(), GrowthFunction::Linear(2.0));
        assert_eq!("exp".parse::<GrowthFunction>().unwrap().eval(0.0), 1.0);
        assert!("cubic".parse::<GrowthFunction>().is_err());
    }
}
