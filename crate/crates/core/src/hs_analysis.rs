//! Sampling estimates in Bessel potential spaces `H^s`, `s > d/2`.
//!
//! The residual of lattice sampling is set against the out-of-band `H^s` mass, local
//! sup profiles `{‖f‖_{C(Q_r(rn))}}` are measured as certified intervals, the cutoff
//! commutator inequality is checked for the plateau bump, the heat flow's local bounds
//! are measured, and band-limited samples are compared at perturbed lattice points.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::bump::{bessel_power_from_jets, bump_jet, Jet, JET_ORDER};
use crate::error::{Error, Result};
use crate::gaussian_field::GaussianMixtureField;
use crate::aliasing;
use crate::observability::{spectral_residual, ResidualContext};
use crate::perturbation::PerturbationRule;
use crate::quadrature::{Certified, PanelRule};
use crate::report::BoundReport;
use crate::sinc_basis::{sample_gaussian, LatticeIndexSet, SamplePolicy};
use crate::spectral_field::{Band, Envelope, FrequencyGrid, GridSpec, SpectralGridField};
use crate::tensor::unflatten;

fn check_smoothness(s: f64, d: usize) -> Result<()> {
    if !(s > d as f64 / 2.0) || !s.is_finite() {
        return Err(Error::precondition(format!(
            "smoothness s = {s} must exceed d/2 = {}; lattice samples of H^s functions are only defined for s > d/2",
            d as f64 / 2.0
        )));
    }
    Ok(())
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::input(format!("{name} must be a positive finite number, got {v}")));
    }
    Ok(())
}

/// `‖f - Σ f(n/N) f_{N,n}‖` against `C (1+N^{-d/2}) ‖χ_{>N}(D) f‖_{H^s}`.
pub fn hs_residual(f: &SpectralGridField, n: f64, s: f64) -> Result<BoundReport> {
    let d = f.dim();
    check_smoothness(s, d)?;
    check_positive("sampling density N", n)?;
    let measured = spectral_residual(f, n)?;
    let weighted = f.band_project(n, Band::High)?.hs_norm(s);
    if !weighted.is_certified() {
        return Err(Error::precondition("the field carries no decay envelope, so its out-of-band H^s mass cannot be certified"));
    }
    let form = (1.0 + n.powf(-(d as f64) / 2.0)) * weighted.value;
    Ok(BoundReport::with_form("hs_residual", measured.value, measured.certificate, form, "spectral")
        .param("d", d as f64)
        .param("N", n)
        .param("s", s)
        .extra("out_of_band_hs", weighted.value)
        .extra("out_of_band_hs_certificate", weighted.certificate))
}

/// [`hs_residual`] for a Gaussian mixture and integer `s`, from separable per-axis
/// integrals; no frequency grid is built, so it works in every dimension.
pub fn hs_residual_gaussian(f: &GaussianMixtureField, n: f64, s: u32) -> Result<BoundReport> {
    let d = f.dim();
    check_smoothness(f64::from(s), d)?;
    check_positive("sampling density N", n)?;
    let measured = ResidualContext::from_gaussian(f, n)?.full_residual();
    let weighted = aliasing::weighted_out_of_band_sq(f, n, s).sqrt();
    let form = (1.0 + n.powf(-(d as f64) / 2.0)) * weighted.value;
    Ok(BoundReport::with_form("hs_residual", measured.value, measured.certificate, form, "gaussian")
        .param("d", d as f64)
        .param("N", n)
        .param("s", f64::from(s))
        .extra("out_of_band_hs", weighted.value)
        .extra("out_of_band_hs_certificate", weighted.certificate))
}

/// A field with `f̂(ξ) = (1+|ξ|²)^{-d/2-δ}`: in `H^s` exactly for `s < d/2 + δ`.
pub fn power_law_field(d: usize, n_band: f64, delta: f64, outer_cells: usize) -> Result<SpectralGridField> {
    check_positive("decay excess delta", delta)?;
    let spec = GridSpec::default().with_outer_cells(outer_cells);
    let grid = std::sync::Arc::new(FrequencyGrid::new(d, n_band, spec)?);
    let expo = -(d as f64) / 2.0 - delta;
    let env = Envelope { amplitude: 1.0, poly: 2.0 * expo, rate: 0.0 };
    let tail = env.radial_tail(grid.coverage(), 2.0, d).sqrt();
    SpectralGridField::from_fn(
        grid,
        |xi| Complex64::new((1.0 + xi.iter().map(|v| v * v).sum::<f64>()).powf(expo), 0.0),
        tail,
        Some(env),
    )
}

/// `∫_{ℝ^d} (1+|ξ|²)^p e^{-σ|ξ|²} cos(δ ξ₁) dξ`, reduced to one radial integral.
fn radial_integral(d: usize, p: f64, sigma: f64, delta: f64) -> Certified {
    let angular = |t: f64| match d {
        1 => 2.0 * t.cos(),
        2 => 2.0 * PI * libm::j0(t),
        _ => {
            if t.abs() < 1e-8 {
                4.0 * PI
            } else {
                4.0 * PI * t.sin() / t
            }
        }
    };
    let mut upper = (60.0 / sigma).sqrt();
    while sigma * upper * upper - p.max(0.0) * (1.0 + upper * upper).ln() < 60.0 {
        upper *= 1.2;
    }
    let mut h = 0.5 / sigma.sqrt();
    if delta > 0.0 {
        h = h.min(1.0 / delta);
    }
    h = h.min(upper / 4.0);
    let integrand = |rho: f64| (1.0 + rho * rho).powf(p) * (-sigma * rho * rho).exp() * angular(rho * delta) * rho.powi(d as i32 - 1);
    let coarse = PanelRule::new(&[0.0, upper], h, 16).integrate(integrand);
    let fine = PanelRule::new(&[0.0, upper], h / 2.0, 16).integrate(integrand);
    let tail = Envelope { amplitude: 1.0, poly: 2.0 * p, rate: sigma }.radial_tail(upper, 1.0, d);
    Certified::new(fine, (fine - coarse).abs() + tail + 1e-15 * fine.abs())
}

/// `‖f‖_{H^s}` of a Gaussian mixture from the pairwise radial spectra.
pub fn gaussian_hs_norm(f: &GaussianMixtureField, s: f64) -> Certified {
    let d = f.dim();
    let scale = (2.0 * PI).powi(-(d as i32));
    let mut value = 0.0;
    let mut cert = 0.0;
    for a in f.terms() {
        for b in f.terms() {
            let delta = a.center.iter().zip(&b.center).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            let r = radial_integral(d, s, a.width + b.width, delta);
            let w = a.amplitude * b.amplitude * scale;
            value += w * r.value;
            cert += w.abs() * r.certificate;
        }
    }
    Certified::new(value.max(0.0), cert).sqrt()
}

/// Per-cube sups `‖f‖_{C(Q_r(rn))}` over the index cube `max_j |n_j| ≤ radius`, as
/// intervals `[lower, upper]`, together with a bound on the omitted cubes.
///
/// `lower` is the largest value at `m^d` equispaced points of the cube, so it never
/// exceeds the true sup. `upper` adds the mean-value correction `(h√d/2) sup|∇|`.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalSupProfile {
    pub r: f64,
    pub dim: usize,
    pub radius: i64,
    pub subsamples: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Bound on `Σ` of squared sups over cubes outside the index cube.
    pub tail_sq: f64,
}

impl LocalSupProfile {
    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    /// Lattice index of the `k`-th entry.
    pub fn index(&self, k: usize) -> Vec<i64> {
        let side = (2 * self.radius + 1) as usize;
        let mut idx = [0usize; 3];
        unflatten(k, &vec![side; self.dim], &mut idx[..self.dim]);
        idx[..self.dim].iter().map(|&i| i as i64 - self.radius).collect()
    }

    /// ℓ² norm: the value uses the lower ends, the certificate reaches the upper ends
    /// plus the omitted cubes.
    pub fn l2_norm(&self) -> Certified {
        let lo = self.lower.iter().map(|v| v * v).sum::<f64>().sqrt();
        let hi = (self.upper.iter().map(|v| v * v).sum::<f64>() + self.tail_sq).sqrt();
        Certified::new(lo, hi - lo)
    }

    /// Index of the cube with the largest lower value.
    pub fn peak_index(&self) -> Vec<i64> {
        let k = self
            .lower
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, _)| k)
            .unwrap_or(0);
        self.index(k)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Quantity {
    Value,
    Gradient,
}

fn default_subsamples(d: usize) -> usize {
    match d {
        1 => 64,
        2 => 16,
        _ => 8,
    }
}

/// Gaussian majorants `A e^{-|x-c|²/(4w)}` of each term of `f` or of `|∇f|`.
fn majorants(f: &GaussianMixtureField, q: Quantity) -> Vec<(f64, Vec<f64>, f64)> {
    f.terms()
        .iter()
        .map(|t| {
            let p = t.prefactor().abs();
            match q {
                Quantity::Value => (p, t.center.clone(), t.width),
                // |y|/(2s) e^{-|y|²/4s} ≤ e^{-|y|²/8s} / √(e s)
                Quantity::Gradient => (p / (std::f64::consts::E * t.width).sqrt(), t.center.clone(), 2.0 * t.width),
            }
        })
        .collect()
}

/// `(Σ_{|k|≤M} a_k, Σ_{|k|>M} a_k)` for `a_k = e^{-dist(c, [rk-r, rk+r])²/(2w)}`.
fn axis_sums(c: f64, r: f64, w: f64, m: i64) -> (f64, f64) {
    let a = |k: i64| {
        let lo = r * k as f64 - r;
        let hi = lo + 2.0 * r;
        let dist = if c < lo { lo - c } else if c > hi { c - hi } else { 0.0 };
        (-dist * dist / (2.0 * w)).exp()
    };
    let inside: f64 = (-m..=m).map(a).sum();
    let mut outside = 0.0;
    for dir in [1i64, -1] {
        let mut k = m + 1;
        let mut prev = a(dir * k);
        outside += prev;
        loop {
            k += 1;
            let cur = a(dir * k);
            outside += cur;
            if cur == 0.0 {
                break;
            }
            // log-concave past the centre: the ratio only shrinks from here on
            if cur < prev && cur <= 1e-20 * outside {
                let q = cur / prev;
                outside += cur * q / (1.0 - q);
                break;
            }
            if k > m + 10_000_000 {
                outside = f64::INFINITY;
                break;
            }
            prev = cur;
        }
    }
    (inside, outside)
}

/// Bound on `Σ_{n ∉ cube} sup_{Q_r(rn)}²` from the term majorants, and the same sum over
/// all of `ℤ^d` (used to size the cube).
fn profile_tail(maj: &[(f64, Vec<f64>, f64)], r: f64, m: i64) -> (f64, f64) {
    let count = maj.len() as f64;
    let mut tail = 0.0;
    let mut total = 0.0;
    for (amp, c, w) in maj {
        let sums: Vec<(f64, f64)> = c.iter().map(|&cj| axis_sums(cj, r, *w, m)).collect();
        let full: f64 = sums.iter().map(|(i, o)| i + o).product();
        // Π S_j - Π In_j = Σ_j Out_j Π_{i<j} In_i Π_{i>j} S_i
        let mut outside = 0.0;
        for j in 0..sums.len() {
            let mut p = sums[j].1;
            for (i, (inn, out)) in sums.iter().enumerate() {
                if i < j {
                    p *= inn;
                } else if i > j {
                    p *= inn + out;
                }
            }
            outside += p;
        }
        tail += amp * amp * outside;
        total += amp * amp * full;
    }
    (count * tail, count * total)
}

fn profile(f: &GaussianMixtureField, r: f64, subsamples: Option<usize>, radius: Option<i64>, q: Quantity) -> Result<LocalSupProfile> {
    check_positive("cube half-side r", r)?;
    let d = f.dim();
    let m = subsamples.unwrap_or_else(|| default_subsamples(d));
    if m < 2 {
        return Err(Error::input("local sup profiles need at least two sub-samples per axis"));
    }
    if f.is_zero() {
        return Ok(LocalSupProfile { r, dim: d, radius: 0, subsamples: m, lower: vec![0.0], upper: vec![0.0], tail_sq: 0.0 });
    }
    let maj = majorants(f, q);
    let radius = match radius {
        Some(k) if k >= 0 => k,
        Some(k) => return Err(Error::input(format!("index cube radius must be nonnegative, got {k}"))),
        None => {
            let reach = f.terms().iter().flat_map(|t| t.center.iter().map(|c| c.abs())).fold(0.0, f64::max);
            let mut k = (reach / r).ceil() as i64;
            loop {
                let (tail, total) = profile_tail(&maj, r, k);
                if tail <= 1e-8 * total || k > 100_000 {
                    break k;
                }
                k += 1 + k / 4;
            }
        }
    };
    let (tail_sq, _) = profile_tail(&maj, r, radius);
    let side = (2 * radius + 1) as usize;
    let count = side.pow(d as u32);
    if count > 4_000_000 {
        return Err(Error::input(format!("{count} cubes requested; increase r or pass a smaller index cube")));
    }
    let h = 2.0 * r / (m - 1) as f64;
    let reach = 0.5 * h * (d as f64).sqrt();
    let terms = f.terms();
    let pref: Vec<f64> = terms.iter().map(|t| t.prefactor()).collect();
    let shape = vec![m; d];
    let total_pts = m.pow(d as u32);
    let bounds: Vec<(f64, f64)> = (0..count)
        .into_par_iter()
        .map(|k| {
            let mut idx = [0usize; 3];
            unflatten(k, &vec![side; d], &mut idx[..d]);
            let centre: Vec<f64> = idx[..d].iter().map(|&i| r * (i as i64 - radius) as f64).collect();
            // per term, per axis: Gaussian factor and its logarithmic derivative
            let tables: Vec<Vec<Vec<(f64, f64)>>> = terms
                .iter()
                .map(|t| {
                    (0..d)
                        .map(|j| {
                            (0..m)
                                .map(|i| {
                                    let y = centre[j] - r + i as f64 * h - t.center[j];
                                    ((-y * y / (4.0 * t.width)).exp(), -y / (2.0 * t.width))
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect();
            let mut best: f64 = 0.0;
            let mut pt = [0usize; 3];
            for flat in 0..total_pts {
                unflatten(flat, &shape, &mut pt[..d]);
                let mut val = 0.0;
                let mut grad = [0.0; 3];
                for (ti, tab) in tables.iter().enumerate() {
                    let g: f64 = (0..d).map(|j| tab[j][pt[j]].0).product::<f64>() * pref[ti];
                    val += g;
                    if q == Quantity::Gradient {
                        for j in 0..d {
                            grad[j] += g * tab[j][pt[j]].1;
                        }
                    }
                }
                let v = match q {
                    Quantity::Value => val.abs(),
                    Quantity::Gradient => grad[..d].iter().map(|g| g * g).sum::<f64>().sqrt(),
                };
                best = best.max(v);
            }
            let lo: Vec<f64> = centre.iter().map(|c| c - r).collect();
            let hi: Vec<f64> = centre.iter().map(|c| c + r).collect();
            let sb = f.sup_bounds_on_box(&lo, &hi);
            let (cap, slope) = match q {
                Quantity::Value => (sb[0], sb[1]),
                Quantity::Gradient => (sb[1], sb[2]),
            };
            (best, (best + reach * slope).min(cap).max(best))
        })
        .collect();
    let (lower, upper) = bounds.into_iter().unzip();
    Ok(LocalSupProfile { r, dim: d, radius, subsamples: m, lower, upper, tail_sq })
}

/// Local sup profile of `f` over the cubes `Q_r(rn)`.
///
/// `subsamples` is the number of points per axis in each cube; `radius` fixes the index
/// cube, which by default grows until the omitted cubes carry at most `1e-8` of the
/// profile's squared mass.
pub fn local_sup_profile(f: &GaussianMixtureField, r: f64, subsamples: Option<usize>, radius: Option<i64>) -> Result<LocalSupProfile> {
    profile(f, r, subsamples, radius, Quantity::Value)
}

/// As [`local_sup_profile`] for `|∇f|`.
pub fn gradient_sup_profile(f: &GaussianMixtureField, r: f64, subsamples: Option<usize>, radius: Option<i64>) -> Result<LocalSupProfile> {
    profile(f, r, subsamples, radius, Quantity::Gradient)
}

/// Local sup profile against `C (1+r^{-d/2}) ‖f‖_{H^s}`.
pub fn local_sup_bound(f: &GaussianMixtureField, r: f64, s: f64, subsamples: Option<usize>) -> Result<(LocalSupProfile, BoundReport)> {
    let d = f.dim();
    check_smoothness(s, d)?;
    let prof = local_sup_profile(f, r, subsamples, None)?;
    let l2 = prof.l2_norm();
    let hs = gaussian_hs_norm(f, s);
    let form = (1.0 + r.powf(-(d as f64) / 2.0)) * hs.value;
    let report = BoundReport::with_form("local_sup", l2.value, l2.certificate, form, "gaussian")
        .param("d", d as f64)
        .param("r", r)
        .param("s", s)
        .extra("hs_norm", hs.value)
        .extra("index_radius", prof.radius as f64)
        .extra("subsamples", prof.subsamples as f64);
    Ok((prof, report))
}

fn gaussian_jet(x: f64, c: f64, w: f64) -> Jet {
    let y = Jet::variable(x) - Jet::constant(c);
    (y * y * Jet::constant(-1.0 / (4.0 * w))).exp()
}

/// Per-axis factors of `φ f` for one Gaussian term: `φ₁(x) e^{-(x-c)²/4w}`.
struct AxisFactor {
    c: f64,
    w: f64,
}

impl AxisFactor {
    fn value(&self, x: f64) -> f64 {
        bump_jet(x).value() * (-(x - self.c).powi(2) / (4.0 * self.w)).exp()
    }

    /// `∫ |(φ₁ g)^{(k)}|`, by quadrature with a safety margin.
    fn derivative_l1(&self, k: usize, rule: &PanelRule) -> f64 {
        1.1 * rule.integrate(|x| (bump_jet(x) * gaussian_jet(x, self.c, self.w)).derivative(k).abs())
    }

    /// `(2π)^{-1/2} ∫ φ₁ g e^{-ixξ}` at each frequency node.
    fn fourier(&self, spatial: &PanelRule, freqs: &[f64]) -> Vec<Complex64> {
        let vals: Vec<f64> = spatial.nodes.iter().zip(&spatial.weights).map(|(&x, &w)| w * self.value(x)).collect();
        let norm = (2.0 * PI).powf(-0.5);
        freqs
            .par_iter()
            .map(|&xi| {
                spatial
                    .nodes
                    .iter()
                    .zip(&vals)
                    .map(|(&x, &v)| Complex64::from_polar(v, -x * xi))
                    .sum::<Complex64>()
                    * norm
            })
            .collect()
    }
}

const CUT_BREAKS: [f64; 4] = [-2.0, -1.0, 1.0, 2.0];

/// `‖φ f‖²_{H^s}` by Fourier quadrature of the separable products, at one resolution.
fn cutoff_hs_sq(f: &GaussianMixtureField, s: f64, coverage: f64, level: u32) -> f64 {
    let d = f.dim();
    let scale = f64::from(1u32 << level);
    let spatial = PanelRule::new(&CUT_BREAKS, 0.05 / scale, 16);
    let freq = PanelRule::new(&[-coverage, coverage], 0.5 / scale, 12);
    let per_term: Vec<(f64, Vec<Vec<Complex64>>)> = f
        .terms()
        .iter()
        .map(|t| {
            let axes = (0..d).map(|j| AxisFactor { c: t.center[j], w: t.width }.fourier(&spatial, &freq.nodes)).collect();
            (t.prefactor(), axes)
        })
        .collect();
    let len = freq.nodes.len();
    match d {
        1 => (0..len)
            .map(|i| {
                let xi = freq.nodes[i];
                let v: Complex64 = per_term.iter().map(|(p, ax)| ax[0][i] * *p).sum();
                freq.weights[i] * (1.0 + xi * xi).powf(s) * v.norm_sqr()
            })
            .sum(),
        _ => (0..len)
            .into_par_iter()
            .map(|i| {
                let mut acc = 0.0;
                for k in 0..len {
                    let r2 = freq.nodes[i].powi(2) + freq.nodes[k].powi(2);
                    let v: Complex64 = per_term.iter().map(|(p, ax)| ax[0][i] * ax[1][k] * *p).sum();
                    acc += freq.weights[k] * (1.0 + r2).powf(s) * v.norm_sqr();
                }
                freq.weights[i] * acc
            })
            .sum(),
    }
}

/// Per-axis data for bounding the part of `‖φ f‖²_{H^s}` beyond `[-Ξ, Ξ]^d`: for each
/// term and axis the `L¹` norms of `(φ₁ g)^{(k)}` and `∫ (1+ξ²)^s |F|²` up to a fixed
/// coverage.
struct FrequencyTail {
    s: f64,
    k_min: usize,
    base: f64,
    /// `(prefactor, per axis (derivative L¹ norms, inner integral))`
    terms: Vec<(f64, Vec<(Vec<f64>, f64)>)>,
}

impl FrequencyTail {
    fn new(f: &GaussianMixtureField, s: f64, base: f64) -> Self {
        let rule = PanelRule::new(&CUT_BREAKS, 0.02, 16);
        let freq = PanelRule::new(&[-base, base], 0.25, 12);
        let k_min = (s + 0.5).floor() as usize + 1;
        let terms = f
            .terms()
            .iter()
            .map(|t| {
                let axes = (0..f.dim())
                    .map(|j| {
                        let fac = AxisFactor { c: t.center[j], w: t.width };
                        let norms = (k_min..=JET_ORDER).map(|k| fac.derivative_l1(k, &rule)).collect();
                        let ft = fac.fourier(&rule, &freq.nodes);
                        let inner = freq.nodes.iter().zip(&freq.weights).zip(&ft).map(|((&xi, &w), v)| w * (1.0 + xi * xi).powf(s) * v.norm_sqr()).sum();
                        (norms, inner)
                    })
                    .collect();
                (t.prefactor(), axes)
            })
            .collect();
        Self { s, k_min, base, terms }
    }

    /// `∫_{|ξ|>Ξ} (1+ξ²)^s |F|² ≤ (1+Ξ^{-2})^s A_k² Ξ^{-(2k-2s-1)} / (π (2k-2s-1))`, best `k`.
    fn axis_out(&self, norms: &[f64], coverage: f64) -> f64 {
        norms
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let e = 2.0 * (self.k_min + i) as f64 - 2.0 * self.s - 1.0;
                (1.0 + coverage.powi(-2)).powf(self.s) * a * a * coverage.powf(-e) / (PI * e)
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Uses `(1+|ξ|²)^s ≤ Π_j (1+ξ_j²)^s` and Cauchy–Schwarz over the terms.
    fn bound(&self, coverage: f64) -> f64 {
        let count = self.terms.len() as f64;
        let mut tail = 0.0;
        for (pref, axes) in &self.terms {
            let full: Vec<f64> = axes.iter().map(|(a, inner)| inner + self.axis_out(a, self.base)).collect();
            let mut term_tail = 0.0;
            for (j, (a, _)) in axes.iter().enumerate() {
                let mut p = self.axis_out(a, coverage);
                for (i, v) in full.iter().enumerate() {
                    if i != j {
                        p *= v;
                    }
                }
                term_tail += p;
            }
            tail += pref * pref * term_tail;
        }
        count * tail
    }
}

/// `‖φ ⟨D⟩^s f‖²` with `⟨D⟩^s f` evaluated spectrally on the spatial quadrature nodes.
fn localized_bessel_sq(f: &GaussianMixtureField, s: f64, level: u32) -> Result<Certified> {
    let d = f.dim();
    let w = f.min_width();
    let mut cov = (40.0 / w).sqrt();
    while w * cov * cov - 0.5 * s * (1.0 + cov * cov).ln() < 40.0 {
        cov *= 1.2;
    }
    let reach = 2.0 + f.max_center_norm();
    let panels = ((reach * 2.0 * cov / 3.0).ceil() as usize).max(4) << level;
    let spec = GridSpec { outer_cells: 0, panels_per_cell: panels, order: 12 };
    let grid = std::sync::Arc::new(FrequencyGrid::new(d, cov / PI, spec)?);
    let field = SpectralGridField::from_gaussian(f, grid)?.bessel_apply(s);
    let point_cert = (2.0 * PI).powf(-(d as f64) / 2.0) * field.l1_tail();
    let rule = PanelRule::new(&CUT_BREAKS, 0.2 / f64::from(1u32 << level), 16);
    let axes = vec![rule.nodes.clone(); d];
    let vals = field.values_on_tensor(&axes)?;
    let phi: Vec<f64> = rule.nodes.iter().map(|&x| bump_jet(x).value()).collect();
    let len = rule.nodes.len();
    let mut acc = 0.0;
    let mut weight_phi = 0.0;
    let mut idx = [0usize; 3];
    let shape = vec![len; d];
    for (k, v) in vals.iter().enumerate() {
        unflatten(k, &shape, &mut idx[..d]);
        let mut wgt = 1.0;
        let mut ph = 1.0;
        for j in 0..d {
            wgt *= rule.weights[idx[j]];
            ph *= phi[idx[j]];
        }
        acc += wgt * ph * ph * v.re * v.re;
        weight_phi += wgt * ph * ph;
    }
    // |v|² error from a pointwise error e: 2|v|e + e²
    let cert = 2.0 * acc.sqrt() * (point_cert * point_cert * weight_phi).sqrt() + point_cert * point_cert * weight_phi;
    Ok(Certified::new(acc, cert))
}

/// `‖((1-Δ)^{[s]+1} φ) f‖²` by tensor quadrature over `Q_2(0)`.
fn lower_order_sq(f: &GaussianMixtureField, s: f64, level: u32) -> f64 {
    let d = f.dim();
    let m = s.floor() as usize + 1;
    let rule = PanelRule::new(&CUT_BREAKS, 0.05 / f64::from(1u32 << level), 16);
    let jets: Vec<Jet> = rule.nodes.iter().map(|&x| bump_jet(x)).collect();
    let len = rule.nodes.len();
    let shape = vec![len; d];
    (0..len.pow(d as u32))
        .into_par_iter()
        .map(|k| {
            let mut idx = [0usize; 3];
            unflatten(k, &shape, &mut idx[..d]);
            let x: Vec<f64> = idx[..d].iter().map(|&i| rule.nodes[i]).collect();
            let jj: Vec<Jet> = idx[..d].iter().map(|&i| jets[i]).collect();
            let wgt: f64 = idx[..d].iter().map(|&i| rule.weights[i]).product();
            let v = bessel_power_from_jets(m, &jj) * f.value(&x);
            wgt * v * v
        })
        .sum()
}

/// Checks `‖φ f‖²_{H^s} ≤ 4^s (‖((1-Δ)^{[s]+1}φ) f‖² + ‖φ ⟨D⟩^s f‖²)` for the plateau bump
/// `φ` (one on `Q_1(0)`, zero off `Q_2(0)`). Supports `d ≤ 2` and `0 < s < 5`.
pub fn commutator_inequality_check(f: &GaussianMixtureField, s: f64) -> Result<BoundReport> {
    let d = f.dim();
    check_positive("smoothness s", s)?;
    if 2 * (s.floor() as usize + 1) > JET_ORDER {
        return Err(Error::input(format!("s = {s} needs bump derivatives beyond order {JET_ORDER}; use s < 5")));
    }
    if d > 2 {
        return Err(Error::input("the commutator check runs in d = 1 or 2"));
    }
    let four_s = 4f64.powf(s);
    if f.is_zero() {
        return Ok(BoundReport::explicit("commutator", 0.0, 0.0, 0.0, "gaussian").param("d", d as f64).param("s", s));
    }
    let scale = f.l2_norm().powi(2);
    let tails = FrequencyTail::new(f, s, 24.0);
    let mut coverage = 24.0;
    let mut tail = tails.bound(coverage);
    while tail > 1e-7 * scale && coverage < 400.0 {
        coverage *= 1.25;
        tail = tails.bound(coverage);
    }
    let lhs0 = cutoff_hs_sq(f, s, coverage, 0);
    let lhs1 = cutoff_hs_sq(f, s, coverage, 1);
    let lhs = Certified::new(lhs1, (lhs1 - lhs0).abs() + tail);
    let low0 = lower_order_sq(f, s, 0);
    let low1 = lower_order_sq(f, s, 1);
    let prin0 = localized_bessel_sq(f, s, 0)?;
    let prin1 = localized_bessel_sq(f, s, 1)?;
    let low_cert = (low1 - low0).abs();
    let prin_cert = (prin1.value - prin0.value).abs() + prin1.certificate;
    let rhs = four_s * (low1 + prin1.value);
    Ok(BoundReport::explicit("commutator", lhs.value, lhs.certificate + four_s * (low_cert + prin_cert), rhs, "gaussian")
        .param("d", d as f64)
        .param("s", s)
        .extra("lower_order", low1)
        .extra("principal", prin1.value)
        .extra("frequency_coverage", coverage))
}

/// Local bounds for `u(T) = e^{TΔ}u0`: the ℓ² norms of the local sups of `u(T)` and
/// `|∇u(T)|` over `Q_r(rn)` and of the lattice values `u(T, rn)`, each against its
/// bound form with the constant left open.
pub fn heat_local_bounds(u0: &GaussianMixtureField, t: f64, r: f64, tol: f64) -> Result<Vec<BoundReport>> {
    check_positive("time T", t)?;
    check_positive("cube half-side r", r)?;
    let d = u0.dim();
    let df = d as f64;
    let ut = u0.heat_evolve(t)?;
    let norm0 = u0.l2_norm();
    let form = (1.0 + (t / (r * r)).powf(df / 4.0)) * t.powf(-df / 4.0) * norm0;
    let sup = local_sup_profile(&ut, r, None, None)?;
    let grad = gradient_sup_profile(&ut, r, None, None)?;
    let scale = ut.l2_norm() * r.powf(-df / 2.0);
    let lattice = if ut.is_zero() {
        Certified::exact(0.0)
    } else {
        sample_gaussian(&ut, 1.0 / r, SamplePolicy::Adaptive { tol: tol * scale })?.full_l2_norm()
    };
    let tag = |rep: BoundReport, radius: i64| rep.param("d", df).param("T", t).param("r", r).extra("index_radius", radius as f64);
    let s = sup.l2_norm();
    let g = grad.l2_norm();
    Ok(vec![
        tag(BoundReport::with_form("heat_local_sup", s.value, s.certificate, form, "gaussian"), sup.radius),
        tag(BoundReport::with_form("heat_local_grad", g.value, g.certificate, form / t.sqrt(), "gaussian"), grad.radius),
        tag(BoundReport::with_form("heat_lattice", lattice.value, lattice.certificate, form, "gaussian"), 0),
    ])
}

/// `‖D^α u(T)‖ ≤ (|α|/2T)^{|α|/2} e^{-|α|/2} ‖u0‖`.
pub fn derivative_l2_check(u0: &GaussianMixtureField, t: f64, alpha: &[usize], tol: f64) -> Result<BoundReport> {
    check_positive("time T", t)?;
    Error::check_dim(u0.dim(), alpha.len())?;
    let ut = u0.heat_evolve(t)?;
    let a = alpha.iter().sum::<usize>() as f64;
    let rhs = (a / (2.0 * t)).powf(a / 2.0) * (-a / 2.0).exp() * u0.l2_norm();
    let measured = if ut.is_zero() { Certified::exact(0.0) } else { ut.weighted_derivative_integral(alpha, 0, tol)?.sqrt() };
    let label = alpha.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
    Ok(BoundReport::explicit("heat_derivative", measured.value, measured.certificate, rhs, "gaussian")
        .param("d", u0.dim() as f64)
        .param("T", t)
        .label("alpha", label))
}

fn default_window(d: usize) -> i64 {
    match d {
        1 => 256,
        2 => 24,
        _ => 8,
    }
}

/// `‖{f(λ_n) - f(n/N)}‖_{ℓ²}` for a band-limited `f` against `ε π d e^{πd} N^{d/2} ‖f‖`.
///
/// The sum runs over the index cube `max_j |n_j| ≤ radius`. Dropping indices can only
/// lower the measured value, so a reported violation is always genuine. The share of
/// `N^d ‖f‖²` that the unperturbed samples in the cube miss is reported as
/// `sample_deficit`.
pub fn perturbed_bandlimited_gap(f: &SpectralGridField, n: f64, rule: &PerturbationRule, radius: Option<i64>) -> Result<BoundReport> {
    check_positive("sampling density N", n)?;
    let d = f.dim();
    let df = d as f64;
    let norm = f.l2_norm();
    let high = f.band_project(n, Band::High)?;
    let out = high.l2_norm_sq_in_grid().sqrt() + high.tail_bound();
    if out > 1e-12 * norm.value.max(f64::MIN_POSITIVE) {
        return Err(Error::precondition(format!("field is not band-limited at N = {n}: out-of-band mass {out:.3e}")));
    }
    let m = radius.unwrap_or_else(|| default_window(d));
    let set = LatticeIndexSet::cube(d, n, m)?;
    rule.validate(n, set.iter())?;
    let eps = rule.eps();
    let rhs = eps * PI * df * (PI * df).exp() * n.powf(df / 2.0) * norm.value;
    let base = f.values_on_lattice(n, m, Some(n))?;
    let grid = f.grid();
    let keep = grid.in_band_axis(n);
    let nodes = grid.axis_nodes();
    let weights = grid.axis_weights();
    let coeffs = f.coeffs();
    let full = grid.shape();
    let members: Vec<Vec<i64>> = set.iter().map(|v| v.to_vec()).collect();
    let perturbed: Vec<f64> = members
        .par_iter()
        .map(|idx| {
            let x = rule.point(n, idx);
            band_point_value(coeffs, &full, &keep, nodes, weights, &x)
        })
        .collect();
    // two passes: scale by the largest difference, then sum
    let diffs: Vec<f64> = perturbed.iter().zip(&base).map(|(p, b)| p - b.re).collect();
    let peak = diffs.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let measured = if peak == 0.0 { 0.0 } else { peak * diffs.iter().map(|v| (v / peak).powi(2)).sum::<f64>().sqrt() };
    let captured: f64 = base.iter().map(|v| v.norm_sqr()).sum();
    let total = n.powf(df) * norm.value * norm.value;
    let deficit = ((total - captured) / total.max(f64::MIN_POSITIVE)).max(0.0);
    let sup = base.iter().fold(0.0f64, |a, v| a.max(v.norm()));
    let cert = 64.0 * f64::EPSILON * sup * (members.len() as f64).sqrt();
    Ok(BoundReport::explicit("perturbed_bandlimited", measured, cert, rhs, "spectral")
        .param("d", df)
        .param("N", n)
        .param("eps", eps)
        .label("rule", rule.name())
        .extra("index_radius", m as f64)
        .extra("sample_deficit", deficit))
}

/// Low band point value `(2π)^{-d/2} Σ_{ξ ∈ Q} w f̂(ξ) e^{ix·ξ}` over the in-band nodes.
fn band_point_value(coeffs: &[Complex64], full: &[usize], keep: &[usize], nodes: &[f64], weights: &[f64], x: &[f64]) -> f64 {
    let d = x.len();
    let norm = (2.0 * PI).powf(-(d as f64) / 2.0);
    let phases: Vec<Vec<Complex64>> = x.iter().map(|&xj| keep.iter().map(|&i| Complex64::from_polar(weights[i], xj * nodes[i])).collect()).collect();
    let m = keep.len();
    let shape = vec![m; d];
    let mut acc = Complex64::new(0.0, 0.0);
    let mut idx = [0usize; 3];
    for flat in 0..m.pow(d as u32) {
        unflatten(flat, &shape, &mut idx[..d]);
        let mut src = 0;
        let mut ph = Complex64::new(1.0, 0.0);
        for j in 0..d {
            src = src * full[j] + keep[idx[j]];
            ph *= phases[j][idx[j]];
        }
        acc += coeffs[src] * ph;
    }
    acc.re * norm
}
