//! Out-of-band and aliasing energies of Gaussian mixtures from per-axis integrals.
//!
//! Each term has a separable spectrum `C Π_j g(ξ_j)` with `g(ξ) = e^{-sξ² - icξ}`. Writing
//! the periodised tail as `q(ξ) = Σ_{k≠0} g(ξ + 2πNk)`, the aliasing defect of one term is
//! `-C Σ_{S≠∅} Π_{j∈S} q_j Π_{j∉S} g_j` on the band, and its complement energy splits the
//! same way into inside/outside factors. Every product is formed from small pieces
//! directly, so nothing cancels when the energies are tiny.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::gaussian_field::{GaussianMixtureField, GaussianTerm};
use crate::quadrature::{Certified, PanelRule};

const ORDER: usize = 16;
/// Largest exponent kept before a Gaussian factor is treated as zero.
const UNDERFLOW: f64 = 745.0;

fn spectrum_constant(t: &GaussianTerm) -> f64 {
    t.amplitude * (2.0 * PI).powf(-(t.center.len() as f64) / 2.0)
}

/// `Σ_{k≠0} e^{-s(ξ+2Bk)² - ic(ξ+2Bk)}` for `|ξ| ≤ B`.
fn periodised_tail(s: f64, c: f64, b: f64, xi: f64) -> Complex64 {
    let kmax = (((UNDERFLOW / s).sqrt() + b) / (2.0 * b)).ceil() as i64 + 1;
    let mut sum = Complex64::new(0.0, 0.0);
    for k in (-kmax..=kmax).filter(|&k| k != 0) {
        let y = xi + 2.0 * b * k as f64;
        sum += Complex64::from_polar((-s * y * y).exp(), -c * y);
    }
    sum
}

fn gauss(s: f64, c: f64, xi: f64) -> Complex64 {
    Complex64::from_polar((-s * xi * xi).exp(), -c * xi)
}

fn integrate_complex(rule: &PanelRule, f: impl Fn(f64) -> Complex64) -> Complex64 {
    rule.nodes.iter().zip(&rule.weights).map(|(&x, &w)| w * f(x)).sum()
}

/// Panel width that resolves decay with rate up to `slope` and phase rate `freq`.
fn panel_width(slope: f64, freq: f64, span: f64) -> f64 {
    (2.0 / slope.max(1e-300)).min(2.0 / freq.max(1e-300)).min(span / 4.0)
}

/// Per-axis `[[⟨g_a,g_b⟩, ⟨g_a,q_b⟩], [⟨q_a,g_b⟩, ⟨q_a,q_b⟩]]` over `[-B, B]` at panel level
/// `level`.
fn band_products(a: (f64, f64), b: (f64, f64), half: f64, level: u32) -> [[Complex64; 2]; 2] {
    let sigma = a.0 + b.0;
    let h = panel_width(6.0 * sigma * half + 1.0, (a.1 - b.1).abs() + 1.0, 2.0 * half) / f64::from(1u32 << level);
    let rule = PanelRule::new(&[-half, half], h, ORDER);
    let pick = |which: usize, (s, c): (f64, f64), x: f64| if which == 0 { gauss(s, c, x) } else { periodised_tail(s, c, half, x) };
    let mut out = [[Complex64::new(0.0, 0.0); 2]; 2];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, slot) in row.iter_mut().enumerate() {
            *slot = integrate_complex(&rule, |x| pick(i, a, x) * pick(j, b, x).conj());
        }
    }
    out
}

/// `(∫_{-B}^{B}, ∫_{|ξ|>B})` of `ξ^{2p} e^{-σξ²} cos(δξ)`, with an absolute bound on the
/// error of the truncated outer integral.
fn inside_outside(sigma: f64, delta: f64, half: f64, level: u32, p: u32) -> (f64, f64, f64) {
    let f = |x: f64| x.powi(2 * p as i32) * (-sigma * x * x).exp() * (delta * x).cos();
    let h_in = panel_width(2.0 * sigma * half + 1.0, delta.abs() + 1.0, 2.0 * half) / f64::from(1u32 << level);
    let inside = PanelRule::new(&[-half, half], h_in, ORDER).integrate(f);
    // outer integral on [B, E], doubled by symmetry; past E ≥ (p/σ)^{1/2} the factor
    // ξ^{2p} e^{-σξ²/2} is decreasing, so the rest is at most E^{2p} e^{-σE²} / (σE)
    let end = (half * half + (40.0 + 2.0 * f64::from(p) * (1.0 + half).ln().max(1.0)) / sigma)
        .sqrt()
        .max(2.0 * (f64::from(p) / sigma).sqrt());
    let len = end - half;
    let h_out = panel_width(2.0 * sigma * end, delta.abs() + 1.0, len) / f64::from(1u32 << level);
    let outside = 2.0 * PanelRule::new(&[half, end], h_out, ORDER).integrate(f);
    let tail = 2.0 * end.powi(2 * p as i32) * (-sigma * end * end).exp() / (sigma * end);
    (inside, outside, tail)
}

fn mask_product<T: Copy>(d: usize, s: usize, t: usize, f: impl Fn(usize, usize, usize) -> T) -> impl Iterator<Item = T> {
    (0..d).map(move |j| f(j, (s >> j) & 1, (t >> j) & 1))
}

/// `‖Â‖²` at one panel level, with the sum of absolute contributions for rounding.
fn alias_sq_at(u: &GaussianMixtureField, n_density: f64, level: u32) -> (f64, f64) {
    let d = u.dim();
    let half = PI * n_density;
    let terms = u.terms();
    let mut total = 0.0;
    let mut magnitude = 0.0;
    for ta in terms {
        for tb in terms {
            let axes: Vec<[[Complex64; 2]; 2]> =
                (0..d).map(|j| band_products((ta.width, ta.center[j]), (tb.width, tb.center[j]), half, level)).collect();
            let c = spectrum_constant(ta) * spectrum_constant(tb);
            for s in 1..1usize << d {
                for t in 1..1usize << d {
                    let p: Complex64 = mask_product(d, s, t, |j, x, y| axes[j][x][y]).product();
                    total += c * p.re;
                    magnitude += (c * p.norm()).abs();
                }
            }
        }
    }
    (total, magnitude)
}

/// Multi-indices `β ∈ ℕ^d` with `|β| ≤ s` and their coefficients in
/// `(1+|ξ|²)^s = Σ_β s!/((s-|β|)! β!) Π_j ξ_j^{2β_j}`.
fn weight_expansion(d: usize, s: u32) -> Vec<(Vec<u32>, f64)> {
    let fact = |k: u32| (1..=k).map(f64::from).product::<f64>();
    let mut out = Vec::new();
    let mut beta = vec![0u32; d];
    loop {
        let total: u32 = beta.iter().sum();
        if total <= s {
            let c = fact(s) / (fact(s - total) * beta.iter().map(|&b| fact(b)).product::<f64>());
            out.push((beta.clone(), c));
        }
        // odometer over [0, s]^d
        let mut j = 0;
        loop {
            if j == d {
                return out;
            }
            beta[j] += 1;
            if beta[j] <= s {
                break;
            }
            beta[j] = 0;
            j += 1;
        }
    }
}

/// `∫_{Q^c}(1+|ξ|²)^s |û|²` at one panel level, with an error bound for the truncated
/// outer integrals and the sum of absolute contributions.
fn out_sq_at(u: &GaussianMixtureField, n_density: f64, level: u32, s: u32) -> (f64, f64, f64) {
    let d = u.dim();
    let half = PI * n_density;
    let terms = u.terms();
    let expansion = weight_expansion(d, s);
    let mut total = 0.0;
    let mut trunc = 0.0;
    let mut magnitude = 0.0;
    for ta in terms {
        for tb in terms {
            let sigma = ta.width + tb.width;
            // axes[j][p] for p = 0..=s
            let axes: Vec<Vec<(f64, f64, f64)>> = (0..d)
                .map(|j| (0..=s).map(|p| inside_outside(sigma, ta.center[j] - tb.center[j], half, level, p)).collect())
                .collect();
            let c = spectrum_constant(ta) * spectrum_constant(tb);
            for (beta, coef) in &expansion {
                for mask in 1..1usize << d {
                    let mut p = c * coef;
                    let (mut hi, mut lo) = (p.abs(), p.abs());
                    for (j, axis) in axes.iter().enumerate() {
                        let (inside, outside, tail) = axis[beta[j] as usize];
                        let (v, e) = if (mask >> j) & 1 == 1 { (outside, tail) } else { (inside, 0.0) };
                        p *= v;
                        hi *= v.abs() + e;
                        lo *= v.abs();
                    }
                    total += p;
                    trunc += hi - lo;
                    magnitude += p.abs();
                }
            }
        }
    }
    (total, trunc, magnitude)
}

/// Certified `∫_{Q^c}(1+|ξ|²)^s |û|²` for integer `s` and `Q = Q_{πN}`.
pub(crate) fn weighted_out_of_band_sq(u: &GaussianMixtureField, n_density: f64, s: u32) -> Certified {
    let (o0, _, _) = out_sq_at(u, n_density, 0, s);
    let (o1, trunc, om) = out_sq_at(u, n_density, 1, s);
    Certified::new(o1.max(0.0), (o1 - o0).abs() + trunc + 64.0 * f64::EPSILON * om)
}

/// Certified `(∫_{Q^c}|û|², ‖Â‖²)` for the band `Q = Q_{πN}`. Certificates combine the
/// disagreement between two panel levels, truncation of the outer integrals and rounding.
/// Closed-form majorants of the out-of-band and alias energies from the slowest
/// decaying term: `|û(ξ)| ≤ A e^{-s|ξ|²}` with `A = Σ|a_j|(2π)^{-d/2}`, `s = min s_j`.
fn energy_majorants(u: &GaussianMixtureField, n_density: f64) -> (f64, f64) {
    let d = u.dim() as f64;
    let a: f64 = u.terms().iter().map(|t| spectrum_constant(t).abs()).sum();
    let s = u.min_width();
    let b = PI * n_density;
    let out = a * a * d * (PI / (2.0 * s)).powf(d / 2.0) * libm::erfc(b * (2.0 * s).sqrt());
    // Σ_{k≠0} e^{-s|ξ+2Bk|²} ≤ (1 + 2q/(1-q))^d - 1 on the cube, q = e^{-sB²}
    let q = (-s * b * b).exp();
    let e = (d * (2.0 * q / (1.0 - q)).ln_1p()).exp_m1();
    let alias = (2.0 * b).powf(d) * a * a * e * e;
    (out, alias)
}

pub(crate) fn band_energies(u: &GaussianMixtureField, n_density: f64) -> (Certified, Certified) {
    let (out_bound, alias_bound) = energy_majorants(u, n_density);
    if out_bound + alias_bound <= 1e-300 * u.l2_norm().powi(2) {
        return (Certified::new(0.0, out_bound), Certified::new(0.0, alias_bound));
    }
    let (a0, _) = alias_sq_at(u, n_density, 0);
    let (a1, am) = alias_sq_at(u, n_density, 1);
    let out = weighted_out_of_band_sq(u, n_density, 0);
    let alias = Certified::new(a1.max(0.0), (a1 - a0).abs() + 64.0 * f64::EPSILON * am);
    (out, alias)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus;
    use crate::spectral_field::{FrequencyGrid, GridSpec, SpectralGridField};
    use approx::assert_relative_eq;
    use std::sync::Arc;

    #[test]
    fn majorants_dominate_the_energies() {
        for (name, n) in [("pair", 1.0), ("triple", 2.0), ("wide", 0.5)] {
            for d in 1..=2 {
                let u = corpus::shape(name, d).unwrap().heat_evolve(0.2).unwrap();
                let (out, alias) = band_energies(&u, n);
                let (ob, ab) = energy_majorants(&u, n);
                assert!(out.value <= ob && alias.value <= ab, "{name} d={d}: {out:?} {ob} {alias:?} {ab}");
            }
        }
        let far = corpus::shape("triple", 2).unwrap().heat_evolve(4.0).unwrap();
        let (out, alias) = band_energies(&far, 8.0);
        assert_eq!((out.value, alias.value), (0.0, 0.0));
        assert!(out.certificate + alias.certificate <= 1e-300);
    }

    #[test]
    fn single_term_outside_energy_is_a_normal_tail() {
        let u = GaussianMixtureField::single(1.3, vec![0.4, -0.2], 0.7).unwrap();
        let n = 0.6;
        let (out, _) = band_energies(&u, n);
        let expect = GaussianMixtureField::single_term_frequency_tail(&u.terms()[0], PI * n).powi(2);
        assert_relative_eq!(out.value, expect, max_relative = 1e-11);
        assert!(out.certificate <= 1e-10 * out.value);
    }

    #[test]
    fn energies_match_the_frequency_grid() {
        for (name, n) in [("pair", 1.0), ("triple", 0.8)] {
            let u = corpus::shape(name, 1).unwrap().heat_evolve(0.1).unwrap();
            let spec = GridSpec::for_heat(u.min_width(), n).resolving_decay(n, u.min_width()).refined(1);
            let grid = Arc::new(FrequencyGrid::new(1, n, spec).unwrap());
            let field = SpectralGridField::from_gaussian(&u, grid).unwrap();
            let (alias, _) = field.alias_defect(n).unwrap();
            let (out, al) = band_energies(&u, n);
            assert_relative_eq!(al.value, alias.l2_norm_sq_in_grid(), max_relative = 1e-8);
            let total = u.l2_norm().powi(2);
            let inside = field.band_project(n, crate::spectral_field::Band::Low).unwrap().l2_norm_sq_in_grid();
            assert_relative_eq!(out.value, total - inside, max_relative = 1e-6);
        }
    }

    #[test]
    fn weighted_energy_matches_the_grid_hs_norm() {
        let u = corpus::shape("pair", 2).unwrap().heat_evolve(0.3).unwrap();
        let n = 1.0;
        let spec = GridSpec::for_heat(u.min_width(), n).resolving_decay(n, u.min_width());
        let grid = Arc::new(FrequencyGrid::new(2, n, spec).unwrap());
        let field = SpectralGridField::from_gaussian(&u, grid).unwrap();
        for s in [1u32, 2] {
            let grid_hs = field.band_project(n, crate::spectral_field::Band::High).unwrap().hs_norm(f64::from(s));
            let exact = weighted_out_of_band_sq(&u, n, s);
            assert_relative_eq!(exact.value.sqrt(), grid_hs.value, max_relative = 1e-6);
        }
    }

    #[test]
    fn weight_expansion_sums_to_the_weight() {
        let xi = [0.3, -1.2, 0.7];
        for s in 0..4 {
            let total: f64 = weight_expansion(3, s).iter().map(|(b, c)| c * b.iter().zip(&xi).map(|(&p, &x): (&u32, &f64)| x.powi(2 * p as i32)).product::<f64>()).sum();
            assert_relative_eq!(total, (1.0 + xi.iter().map(|x| x * x).sum::<f64>()).powi(s as i32), max_relative = 1e-13);
        }
    }

    #[test]
    fn energies_keep_relative_accuracy_when_tiny() {
        // e^{-2 s (πN)²} scale far below machine epsilon of the total
        let u = GaussianMixtureField::single(1.0, vec![0.0, 0.3], 2.0).unwrap();
        let (out, alias) = band_energies(&u, 2.0);
        assert!(out.value > 0.0 && out.value < 1e-60);
        assert!(alias.value > 0.0 && alias.value < 1e-60);
        assert!(out.certificate <= 1e-9 * out.value && alias.certificate <= 1e-9 * alias.value);
    }
}
