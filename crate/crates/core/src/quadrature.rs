//! Certified values, the refinement driver, and composite Gauss–Legendre rules on boxes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::gauss_legendre;

/// Maximum number of resolution doublings attempted by [`refine_until`].
pub const MAX_DOUBLINGS: u32 = 6;

/// Neumaier-compensated sum; the error stays near one rounding of the result even
/// for millions of terms.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let (mut sum, mut carry) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        carry += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
    }
    sum + carry
}

/// A computed value together with an upper bound on its total error.
///
/// An infinite certificate marks the value as uncertified.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certified {
    pub value: f64,
    pub certificate: f64,
}

impl Certified {
    pub fn new(value: f64, certificate: f64) -> Self {
        Self { value, certificate }
    }

    pub fn exact(value: f64) -> Self {
        Self { value, certificate: 0.0 }
    }

    pub fn is_certified(&self) -> bool {
        self.certificate.is_finite()
    }

    /// Square root of a certified nonnegative quantity, with the error propagated.
    pub fn sqrt(self) -> Self {
        let v = self.value.max(0.0);
        let root = v.sqrt();
        let e = self.certificate;
        let cert = if !e.is_finite() {
            f64::INFINITY
        } else if root > 0.0 {
            e.sqrt().min(e / root)
        } else {
            e.sqrt()
        };
        Self::new(root, cert)
    }
}

/// Runs `task` at increasing resolution levels until two successive values differ by
/// less than `tol` (with the task's own extra certificate, e.g. a tail bound, added on).
///
/// `task(level)` returns `(value, extra_certificate)`. At most [`MAX_DOUBLINGS`]
/// refinements are attempted after the base level.
pub fn refine_until<F>(what: &str, tol: f64, mut task: F) -> Result<Certified>
where
    F: FnMut(u32) -> Result<(f64, f64)>,
{
    if !(tol > 0.0) {
        return Err(Error::input(format!("{what}: tolerance must be positive, got {tol}")));
    }
    let (mut prev, _) = task(0)?;
    let mut best = Certified::new(prev, f64::INFINITY);
    for level in 1..=MAX_DOUBLINGS {
        let (cur, extra) = task(level)?;
        let diff = (cur - prev).abs();
        let cert = diff + extra;
        best = Certified::new(cur, cert);
        if cert <= tol {
            return Ok(best);
        }
        // refining further cannot shrink a tail-dominated certificate
        if diff <= 0.5 * tol && extra > 0.5 * tol {
            break;
        }
        prev = cur;
    }
    Err(Error::Certification {
        what: what.to_string(),
        value: best.value,
        certificate: best.certificate,
        tolerance: tol,
    })
}

/// One-dimensional composite Gauss–Legendre rule whose panels never straddle the given
/// breakpoints.
#[derive(Clone, Debug)]
pub struct PanelRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl PanelRule {
    /// Splits every interval between consecutive `breakpoints` into panels of width at
    /// most `max_panel`, each carrying an `order`-point Gauss–Legendre rule.
    pub fn new(breakpoints: &[f64], max_panel: f64, order: usize) -> Self {
        let (gx, gw) = gauss_legendre(order);
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        for pair in breakpoints.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            if b <= a {
                continue;
            }
            let m = ((b - a) / max_panel).ceil().max(1.0) as usize;
            let h = (b - a) / m as f64;
            for p in 0..m {
                let lo = a + p as f64 * h;
                let mid = lo + 0.5 * h;
                for (x, w) in gx.iter().zip(&gw) {
                    nodes.push(mid + 0.5 * h * x);
                    weights.push(0.5 * h * w);
                }
            }
        }
        Self { nodes, weights }
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

/// Sorted, deduplicated breakpoints of `[lo, hi]` including every interior point of `extra`.
pub fn breakpoints(lo: f64, hi: f64, extra: &[f64]) -> Vec<f64> {
    let mut b = vec![lo, hi];
    b.extend(extra.iter().copied().filter(|&x| x > lo && x < hi));
    b.sort_by(|a, c| a.partial_cmp(c).unwrap());
    b.dedup_by(|a, c| (*a - *c).abs() < 1e-12);
    b
}

/// Tensor-product quadrature of `f` over a box described by per-axis breakpoint lists.
pub fn integrate_tensor<F>(axes: &[Vec<f64>], max_panel: f64, order: usize, f: &F) -> f64
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let rules: Vec<PanelRule> = axes.iter().map(|b| PanelRule::new(b, max_panel, order)).collect();
    integrate_rules(&rules, f)
}

/// Tensor-product quadrature over precomputed per-axis rules.
pub fn integrate_rules<F>(rules: &[PanelRule], f: &F) -> f64
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let d = rules.len();
    let sizes: Vec<usize> = rules.iter().map(|r| r.nodes.len()).collect();
    let total: usize = sizes.iter().product();
    let values: Vec<f64> = (0..total)
        .into_par_iter()
        .map(|flat| {
            let mut x = [0.0; 3];
            let mut w = 1.0;
            let mut rem = flat;
            for axis in (0..d).rev() {
                let i = rem % sizes[axis];
                rem /= sizes[axis];
                x[axis] = rules[axis].nodes[i];
                w *= rules[axis].weights[i];
            }
            w * f(&x[..d])
        })
        .collect();
    values.iter().sum()
}

/// Adaptive tensor quadrature: halves the panel width until successive results agree.
pub fn integrate_box_adaptive<F>(
    what: &str,
    axes: &[Vec<f64>],
    initial_panel: f64,
    order: usize,
    tol: f64,
    tail: f64,
    f: &F,
) -> Result<Certified>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    refine_until(what, tol, |level| {
        let h = initial_panel / f64::from(1u32 << level);
        Ok((integrate_tensor(axes, h, order, f), tail))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn refine_returns_after_first_comparison_for_loose_tolerance() {
        let mut calls = 0;
        let out = refine_until("loose", 1.0, |level| {
            calls += 1;
            Ok((1.0 + 1e-3 / f64::from(level + 1), 0.0))
        })
        .unwrap();
        assert_eq!(calls, 2);
        assert!(out.certificate < 1.0);
    }

    #[test]
    fn refine_fails_when_tail_dominates() {
        let err = refine_until("under-covered", 1e-8, |_| Ok((0.5, 1e-3))).unwrap_err();
        match err {
            Error::Certification { certificate, value, .. } => {
                assert!(certificate >= 1e-3);
                assert_eq!(value, 0.5);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn refine_gives_up_after_max_doublings() {
        let err = refine_until("divergent", 1e-8, |level| Ok((f64::from(level), 0.0))).unwrap_err();
        assert!(matches!(err, Error::Certification { .. }));
    }

    #[test]
    fn tensor_rule_integrates_gaussian_in_2d() {
        let axes = vec![vec![-12.0, 0.0, 12.0]; 2];
        let v = integrate_tensor(&axes, 1.0, 10, &|x: &[f64]| (-(x[0] * x[0] + x[1] * x[1])).exp());
        assert_relative_eq!(v, std::f64::consts::PI, max_relative = 1e-13);
    }

    #[test]
    fn sqrt_propagation_is_an_upper_bound() {
        let c = Certified::new(4.0, 0.01).sqrt();
        assert_eq!(c.value, 2.0);
        assert!(c.certificate >= (4.01f64).sqrt() - 2.0);
    }
}
