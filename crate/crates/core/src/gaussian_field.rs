//! Closed-form algebra of isotropic Gaussian mixtures.
//!
//! A term `(a, c, s)` is the heat kernel of time `s` centred at `c`, scaled by `a`:
//!
//! ```text
//! x ↦ a (4πs)^{-d/2} exp(-|x - c|² / (4s))
//! ```
//!
//! Heat evolution, Fourier transforms, inner products and derivatives all have exact
//! expressions for this family, which is why every heat-equation experiment in the crate
//! is driven by it.

use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::quadrature::{breakpoints, integrate_box_adaptive, integrate_tensor, Certified, PanelRule};
use crate::special::{gaussian_even_moment, hermite, normal_inside, normal_outside, union_escape};

/// Widths below this are rejected: the prefactor `(4πs)^{-d/2}` overflows.
pub const MIN_WIDTH: f64 = 1e-12;
pub const MAX_DIM: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianTerm {
    pub amplitude: f64,
    pub center: Vec<f64>,
    pub width: f64,
}

impl GaussianTerm {
    pub fn new(amplitude: f64, center: Vec<f64>, width: f64) -> Result<Self> {
        if !(width >= MIN_WIDTH) || !width.is_finite() {
            return Err(Error::input(format!("Gaussian width must be in [{MIN_WIDTH}, inf), got {width}")));
        }
        if !amplitude.is_finite() || center.iter().any(|c| !c.is_finite()) {
            return Err(Error::input("Gaussian amplitude and center must be finite"));
        }
        Ok(Self { amplitude, center, width })
    }

    pub(crate) fn prefactor(&self) -> f64 {
        self.amplitude * (4.0 * PI * self.width).powf(-(self.center.len() as f64) / 2.0)
    }

    fn dist2(&self, x: &[f64]) -> f64 {
        self.center.iter().zip(x).map(|(c, xi)| (xi - c) * (xi - c)).sum()
    }

    #[inline]
    fn value(&self, x: &[f64]) -> f64 {
        self.prefactor() * (-self.dist2(x) / (4.0 * self.width)).exp()
    }

    /// Squared L² norm, `a² (8πs)^{-d/2}`.
    pub fn norm_sq(&self) -> f64 {
        self.amplitude * self.amplitude * (8.0 * PI * self.width).powf(-(self.center.len() as f64) / 2.0)
    }
}

/// Which side of the Fourier transform a tail query refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Spatial,
    Frequency,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMixtureField {
    dim: usize,
    terms: Vec<GaussianTerm>,
}

impl GaussianMixtureField {
    pub fn new(dim: usize, terms: Vec<GaussianTerm>) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::input(format!("dimension must be 1, 2 or 3, got {dim}")));
        }
        for t in &terms {
            Error::check_dim(dim, t.center.len())?;
        }
        Ok(Self { dim, terms })
    }

    pub fn zero(dim: usize) -> Result<Self> {
        Self::new(dim, Vec::new())
    }

    pub fn single(amplitude: f64, center: Vec<f64>, width: f64) -> Result<Self> {
        let dim = center.len();
        Self::new(dim, vec![GaussianTerm::new(amplitude, center, width)?])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[GaussianTerm] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.iter().all(|t| t.amplitude == 0.0)
    }

    pub fn min_width(&self) -> f64 {
        self.terms.iter().map(|t| t.width).fold(f64::INFINITY, f64::min)
    }

    pub fn max_width(&self) -> f64 {
        self.terms.iter().map(|t| t.width).fold(0.0, f64::max)
    }

    /// Largest `|c|` over the terms.
    pub fn max_center_norm(&self) -> f64 {
        self.terms
            .iter()
            .map(|t| t.center.iter().map(|c| c * c).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        Error::check_dim(self.dim, x.len())?;
        Ok(self.value(x))
    }

    /// Point value without the dimension check; `x.len()` must equal `dim`.
    #[inline]
    pub fn value(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|t| t.value(x)).sum()
    }

    pub fn heat_evolve(&self, t: f64) -> Result<Self> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::input(format!("heat evolution time must be a finite t >= 0, got {t}")));
        }
        let terms = self
            .terms
            .iter()
            .map(|term| GaussianTerm { width: term.width + t, ..term.clone() })
            .collect();
        Ok(Self { dim: self.dim, terms })
    }

    pub fn fourier_at(&self, xi: &[f64]) -> Result<Complex64> {
        Error::check_dim(self.dim, xi.len())?;
        Ok(self.fourier(xi))
    }

    #[inline]
    pub fn fourier(&self, xi: &[f64]) -> Complex64 {
        let norm = (2.0 * PI).powf(-(self.dim as f64) / 2.0);
        let xi2: f64 = xi.iter().map(|v| v * v).sum();
        self.terms
            .iter()
            .map(|t| {
                let phase: f64 = t.center.iter().zip(xi).map(|(c, x)| c * x).sum();
                Complex64::from_polar(t.amplitude * norm * (-t.width * xi2).exp(), -phase)
            })
            .sum()
    }

    /// Exact `⟨f, g⟩`: the product of two heat kernels integrates to a heat kernel of the
    /// summed width evaluated at the center offset.
    pub fn inner_product(&self, other: &Self) -> Result<f64> {
        Error::check_dim(self.dim, other.dim)?;
        let mut acc = 0.0;
        for a in &self.terms {
            for b in &other.terms {
                let s = a.width + b.width;
                let d2 = a.dist2(&b.center);
                acc += a.amplitude * b.amplitude * (4.0 * PI * s).powf(-(self.dim as f64) / 2.0) * (-d2 / (4.0 * s)).exp();
            }
        }
        Ok(acc)
    }

    pub fn l2_norm(&self) -> f64 {
        self.inner_product(self).expect("same dimension").max(0.0).sqrt()
    }

    /// Linear combination `α·self + β·other`.
    pub fn combine(&self, alpha: f64, other: &Self, beta: f64) -> Result<Self> {
        Error::check_dim(self.dim, other.dim)?;
        let mut terms: Vec<GaussianTerm> = self
            .terms
            .iter()
            .map(|t| GaussianTerm { amplitude: alpha * t.amplitude, ..t.clone() })
            .collect();
        terms.extend(other.terms.iter().map(|t| GaussianTerm { amplitude: beta * t.amplitude, ..t.clone() }));
        Ok(Self { dim: self.dim, terms })
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        let terms = self
            .terms
            .iter()
            .map(|t| GaussianTerm { amplitude: alpha * t.amplitude, ..t.clone() })
            .collect();
        Self { dim: self.dim, terms }
    }

    /// The field `x ↦ self(λx)`, again a Gaussian mixture.
    pub fn dilate(&self, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(Error::input("dilation factor must be positive"));
        }
        let d = self.dim as i32;
        let terms = self
            .terms
            .iter()
            .map(|t| GaussianTerm {
                amplitude: t.amplitude * lambda.powi(-d),
                center: t.center.iter().map(|c| c / lambda).collect(),
                width: t.width / (lambda * lambda),
            })
            .collect();
        Ok(Self { dim: self.dim, terms })
    }

    /// Partial derivative `D^α` at `x`, from Hermite polynomials.
    pub fn derivative(&self, alpha: &[usize], x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                let q = 4.0 * t.width;
                let sq = q.sqrt();
                let mut v = t.prefactor();
                for ((&a, &c), &xi) in alpha.iter().zip(&t.center).zip(x) {
                    let y = xi - c;
                    let sign = if a % 2 == 0 { 1.0 } else { -1.0 };
                    v *= sign * sq.powi(-(a as i32)) * hermite(a, y / sq) * (-y * y / q).exp();
                }
                v
            })
            .sum()
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|j| {
                let mut alpha = vec![0; self.dim];
                alpha[j] = 1;
                self.derivative(&alpha, x)
            })
            .collect()
    }

    /// Upper bounds for `sup |f|`, `sup |∇f|` and `sup ‖∇²f‖` over the box `[lo, hi]`.
    pub fn sup_bounds_on_box(&self, lo: &[f64], hi: &[f64]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for t in &self.terms {
            let mut rmin2 = 0.0;
            let mut rmax2 = 0.0;
            for j in 0..self.dim {
                let c = t.center[j];
                let near = c.clamp(lo[j], hi[j]) - c;
                let far = (lo[j] - c).abs().max((hi[j] - c).abs());
                rmin2 += near * near;
                rmax2 += far * far;
            }
            let (rmin, rmax) = (rmin2.sqrt(), rmax2.sqrt());
            let s = t.width;
            let k = |r: f64| t.prefactor().abs() * (-r * r / (4.0 * s)).exp();
            let peak = (2.0 * s).sqrt().clamp(rmin, rmax);
            out[0] += k(rmin);
            out[1] += k(peak) * peak / (2.0 * s);
            out[2] += k(peak) * (peak * peak / (4.0 * s * s) + 1.0 / (2.0 * s));
        }
        out
    }

    /// `(∫ (1+|x|)^{2k} |f(x)|² dx)^{1/2}` by adaptive spatial quadrature.
    ///
    /// `rel_tol` is relative to `‖f‖²`. The certificate includes a bound on the mass
    /// outside the integration box.
    pub fn weighted_l2_norm(&self, k: u32, rel_tol: f64) -> Result<Certified> {
        if self.is_zero() {
            return Ok(Certified::exact(0.0));
        }
        let weight = move |x: &[f64]| -> f64 {
            let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            (1.0 + r).powi(2 * k as i32)
        };
        self.weighted_integral(k, rel_tol, &weight, |x| {
            let v = self.value(x);
            v * v
        })
        .map(Certified::sqrt)
    }

    /// `∫ (1+|x|)^{2k} g(x) dx` over the box that carries this mixture's mass, for an
    /// integrand `g` dominated by `|f|²`-type Gaussian decay around the same centers.
    pub(crate) fn weighted_integral<W, G>(&self, k: u32, rel_tol: f64, weight: &W, g: G) -> Result<Certified>
    where
        W: Fn(&[f64]) -> f64 + Sync,
        G: Fn(&[f64]) -> f64 + Sync,
    {
        self.weighted_integral_with_floor(k, rel_tol, 0.0, weight, g)
    }

    /// As [`Self::weighted_integral`], accepting any certificate below `abs_floor` too.
    pub(crate) fn weighted_integral_with_floor<W, G>(&self, k: u32, rel_tol: f64, abs_floor: f64, weight: &W, g: G) -> Result<Certified>
    where
        W: Fn(&[f64]) -> f64 + Sync,
        G: Fn(&[f64]) -> f64 + Sync,
    {
        let d = self.dim;
        let (lo, hi) = self.mass_box(k);
        let mut marks: Vec<f64> = vec![0.0];
        for t in &self.terms {
            marks.extend(t.center.iter().copied());
        }
        let axes: Vec<Vec<f64>> = (0..d).map(|j| breakpoints(lo[j], hi[j], &marks)).collect();
        let tail = self.weighted_tail_bound(k, &lo, &hi);
        let panel = self.min_width().sqrt();
        let integrand = |x: &[f64]| weight(x) * g(x);
        // the weight can make the integral much larger than ‖f‖², so a coarse pass sets the scale
        let coarse = integrate_tensor(&axes, panel, 10, &integrand).abs();
        let scale = self.l2_norm().powi(2).max(coarse).max(f64::MIN_POSITIVE);
        integrate_box_adaptive("weighted L2 integral", &axes, panel, 10, (rel_tol * scale).max(abs_floor), tail, &integrand)
    }

    /// `∫ (1+|x|)^{2k} |D^α f(x)|² dx` by adaptive quadrature.
    ///
    /// The tail certificate comes from a Gaussian majorant of `|D^α f|`: Cramér's
    /// inequality `|H_m(z)| e^{-z²/2} ≤ 1.0865·2^{m/2}√(m!)` puts each differentiated term
    /// under a term of twice the width.
    pub fn weighted_derivative_integral(&self, alpha: &[usize], k: u32, rel_tol: f64) -> Result<Certified> {
        Error::check_dim(self.dim, alpha.len())?;
        if self.is_zero() {
            return Ok(Certified::exact(0.0));
        }
        let majorant = self.derivative_majorant(alpha);
        let weight = move |x: &[f64]| -> f64 {
            let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            (1.0 + r).powi(2 * k as i32)
        };
        majorant.weighted_integral(k, rel_tol, &weight, |x| {
            let v = self.derivative(alpha, x);
            v * v
        })
    }

    /// Mixture of width-`2s` terms dominating `|D^α f|` pointwise.
    pub(crate) fn derivative_majorant(&self, alpha: &[usize]) -> Self {
        const CRAMER: f64 = 1.0865;
        let d = self.dim as f64;
        let terms = self
            .terms
            .iter()
            .map(|t| {
                let sq = (4.0 * t.width).sqrt();
                let factor: f64 = alpha
                    .iter()
                    .map(|&a| CRAMER * sq.powi(-(a as i32)) * 2f64.powf(a as f64 / 2.0) * crate::special::factorial(a).sqrt())
                    .product();
                GaussianTerm { amplitude: t.amplitude.abs() * factor * 2f64.powf(d / 2.0), center: t.center.clone(), width: 2.0 * t.width }
            })
            .collect();
        Self { dim: self.dim, terms }
    }

    /// Point value of the low-band projection `χ_{≤N}(D) f` at `x`.
    ///
    /// Each term factors over axes into `(1/π) ∫_0^{πN} e^{-sξ²} cos(yξ) dξ`, integrated by
    /// composite Gauss–Legendre rules resolving both the oscillation and the decay. The
    /// certificate is the disagreement between two rule orders plus rounding.
    pub fn band_limited_value(&self, n_density: f64, x: &[f64]) -> Certified {
        let mut value = 0.0;
        let mut cert = 0.0;
        for t in &self.terms {
            let mut v = t.amplitude;
            let mut bound = t.amplitude.abs();
            for (&c, &xi) in t.center.iter().zip(x) {
                let (a, e) = lowpass_axis(t.width, xi - c, n_density);
                let m = lowpass_axis_sup(t.width, n_density);
                v *= a;
                cert += e * bound * m.powi(self.dim as i32 - 1);
                bound *= m;
            }
            value += v;
            cert += 8.0 * f64::EPSILON * bound;
        }
        Certified::new(value, cert)
    }

    /// Low-band projection `χ_{≤N}(D) f` at every `n/N` with `max_j |n_j| ≤ m`, row-major
    /// over the cube, with the largest pointwise certificate. Uses per-axis tables, so the
    /// cost is linear in the cube side per term.
    pub fn band_limited_lattice(&self, n_density: f64, m: i64) -> (Vec<f64>, f64) {
        let d = self.dim;
        let side = (2 * m + 1) as usize;
        let total = side.pow(d as u32);
        let mut values = vec![0.0; total];
        let mut cert = 0.0;
        for t in &self.terms {
            let sup = lowpass_axis_sup(t.width, n_density);
            let tables: Vec<Vec<(f64, f64)>> = t
                .center
                .iter()
                .map(|&c| (-m..=m).map(|k| lowpass_axis(t.width, k as f64 / n_density - c, n_density)).collect())
                .collect();
            let max_err = tables.iter().flatten().map(|p| p.1).fold(0.0, f64::max);
            cert += t.amplitude.abs() * (d as f64 * max_err * sup.powi(d as i32 - 1) + 8.0 * f64::EPSILON * sup.powi(d as i32));
            let mut idx = vec![0usize; d];
            for (flat, slot) in values.iter_mut().enumerate() {
                crate::tensor::unflatten(flat, &vec![side; d], &mut idx);
                let mut v = t.amplitude;
                for (axis, &i) in idx.iter().enumerate() {
                    v *= tables[axis][i].0;
                }
                *slot += v;
            }
        }
        (values, cert)
    }

    /// `‖χ_{≤N}(D) f‖²` from pairwise per-axis integrals over the band.
    pub fn band_limited_norm_sq(&self, n_density: f64) -> Certified {
        let mut value = 0.0;
        let mut cert = 0.0;
        for a in &self.terms {
            for b in &self.terms {
                let s = a.width + b.width;
                let sup = lowpass_axis_sup(s, n_density);
                let mut v = a.amplitude * b.amplitude;
                let mut err = 0.0;
                for (ca, cb) in a.center.iter().zip(&b.center) {
                    let (x, e) = lowpass_axis(s, ca - cb, n_density);
                    v *= x;
                    err += e;
                }
                value += v;
                let scale = (a.amplitude * b.amplitude).abs() * sup.powi(self.dim as i32 - 1);
                cert += scale * err + 8.0 * f64::EPSILON * scale * sup;
            }
        }
        Certified::new(value.max(0.0), cert)
    }

    /// Axis-aligned box outside of which the (weighted) squared mass is negligible.
    pub(crate) fn mass_box(&self, k: u32) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![f64::INFINITY; self.dim];
        let mut hi = vec![f64::NEG_INFINITY; self.dim];
        for t in &self.terms {
            let reach = t.width.sqrt() * (12.0 + 2.0 * f64::from(k));
            for j in 0..self.dim {
                lo[j] = lo[j].min(t.center[j] - reach);
                hi[j] = hi[j].max(t.center[j] + reach);
            }
        }
        (lo, hi)
    }

    /// Upper bound on `∫_{box^c} (1+|x|)^{2k} |f|²` (Cauchy–Schwarz over terms and moments).
    fn weighted_tail_bound(&self, k: u32, lo: &[f64], hi: &[f64]) -> f64 {
        let d = self.dim;
        let nterms = self.terms.len() as f64;
        let mut acc = 0.0;
        for t in &self.terms {
            let s = t.width;
            let c_norm = t.center.iter().map(|c| c * c).sum::<f64>().sqrt();
            let moment = if k == 0 {
                1.0
            } else {
                let m = 4 * k as i32;
                3f64.powi(m - 1) * (1.0 + c_norm.powi(m) + gaussian_even_moment(2 * k as usize, s, d))
            };
            let escape: f64 = (0..d).map(|j| normal_outside(lo[j], hi[j], t.center[j], s)).sum();
            acc += t.norm_sq() * moment.sqrt() * escape.min(1.0).sqrt();
        }
        nterms * acc
    }

    /// Certified upper bound on the L² mass of the field outside the centred cube
    /// `[-h, h]^d`, on the requested side of the Fourier transform.
    ///
    /// Single terms use the exact erfc tensorization; mixtures combine terms by the
    /// triangle inequality, capped by the total norm.
    pub fn tail_l2_outside_cube(&self, halfwidth: f64, side: Side) -> f64 {
        if !(halfwidth > 0.0) {
            return self.l2_norm();
        }
        let sum: f64 = self
            .terms
            .iter()
            .map(|t| {
                let q: Vec<f64> = match side {
                    Side::Spatial => t
                        .center
                        .iter()
                        .map(|&c| normal_outside(-halfwidth, halfwidth, c, t.width))
                        .collect(),
                    Side::Frequency => vec![normal_outside(-halfwidth, halfwidth, 0.0, 0.25 / t.width); self.dim],
                };
                (t.norm_sq() * union_escape(&q)).sqrt()
            })
            .sum();
        if self.terms.len() <= 1 {
            sum
        } else {
            sum.min(self.l2_norm())
        }
    }

    /// Exact out-of-cube spectral mass for a single term (no triangle inequality).
    pub fn single_term_frequency_tail(term: &GaussianTerm, halfwidth: f64) -> f64 {
        let d = term.center.len();
        let q = vec![normal_outside(-halfwidth, halfwidth, 0.0, 0.25 / term.width); d];
        (term.norm_sq() * union_escape(&q)).sqrt()
    }

    /// `Σ_{k≠0} ‖ f̂ ‖_{L²(Q_{πN}(2πN k))}`, summed over the aliasing cells of the lattice
    /// `ℤ^d/N` (triangle inequality across terms).
    pub fn alias_cell_l2_sum(&self, n_density: f64) -> f64 {
        let h = PI * n_density;
        let mut total = 0.0;
        for t in &self.terms {
            let var = 0.25 / t.width;
            let pref = t.norm_sq().sqrt();
            let cell_mass_1d = |k: i64| normal_inside((2 * k - 1) as f64 * h, (2 * k + 1) as f64 * h, 0.0, var);
            let mut per_axis = Vec::new();
            let mut kmax = 1i64;
            loop {
                let m = cell_mass_1d(kmax);
                per_axis.push(m);
                if m < 1e-300 || kmax > 100_000 {
                    break;
                }
                kmax += 1;
            }
            let center = cell_mass_1d(0);
            let mass = |k: i64| if k == 0 { center } else { per_axis[(k.unsigned_abs() - 1) as usize] };
            let km = per_axis.len() as i64;
            let mut acc = 0.0;
            match self.dim {
                1 => {
                    for k in 1..=km {
                        acc += 2.0 * mass(k).sqrt();
                    }
                }
                2 => {
                    for k1 in -km..=km {
                        for k2 in -km..=km {
                            if k1 != 0 || k2 != 0 {
                                acc += (mass(k1) * mass(k2)).sqrt();
                            }
                        }
                    }
                }
                _ => {
                    for k1 in -km..=km {
                        for k2 in -km..=km {
                            for k3 in -km..=km {
                                if k1 != 0 || k2 != 0 || k3 != 0 {
                                    acc += (mass(k1) * mass(k2) * mass(k3)).sqrt();
                                }
                            }
                        }
                    }
                }
            }
            total += pref * acc;
        }
        total
    }

    /// Upper bound on the ℓ² norm of `{|f|(n/N)}` over indices outside the cube
    /// `max_j |n_j| ≤ max_index`.
    pub fn lattice_tail_bound(&self, n_density: f64, max_index: i64) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                let q = 1.0 / (2.0 * t.width);
                let mut out = Vec::with_capacity(self.dim);
                let mut tot = Vec::with_capacity(self.dim);
                for &c in &t.center {
                    let outside = gauss_lattice_sum_above(n_density, c, q, max_index)
                        + gauss_lattice_sum_above(n_density, -c, q, max_index);
                    let inside = gauss_lattice_sum_range(n_density, c, q, -max_index, max_index);
                    out.push(outside);
                    tot.push(inside + outside);
                }
                let mut sq = 0.0;
                for j in 0..self.dim {
                    let mut p = out[j];
                    for i in 0..self.dim {
                        if i != j {
                            p *= tot[i];
                        }
                    }
                    sq += p;
                }
                let pref = t.prefactor();
                (pref * pref * sq).sqrt()
            })
            .sum()
    }

    /// As [`Self::lattice_tail_bound`] for values at points `λ_n` with
    /// `|λ_n - n/N| ≤ delta`.
    ///
    /// Uses `(a - δ)_+² ≥ a²/2 - δ²`, i.e. each term is dominated by a term of twice the
    /// width whose amplitude absorbs `e^{δ²/4s}`.
    pub fn perturbed_lattice_tail_bound(&self, n_density: f64, max_index: i64, delta: f64) -> f64 {
        if delta == 0.0 {
            return self.lattice_tail_bound(n_density, max_index);
        }
        let scale = 2f64.powf(self.dim as f64 / 2.0);
        self.terms
            .iter()
            .map(|t| {
                let amp = t.amplitude.abs() * scale * (delta * delta / (4.0 * t.width)).exp();
                let wide = GaussianTerm { amplitude: amp, center: t.center.clone(), width: 2.0 * t.width };
                Self { dim: self.dim, terms: vec![wide] }.lattice_tail_bound(n_density, max_index)
            })
            .sum()
    }

    /// Smallest cube index radius whose omitted ℓ² sample mass is certified below `tol`.
    pub fn adaptive_lattice_radius(&self, n_density: f64, tol: f64) -> (i64, f64) {
        let mut m = 0i64;
        loop {
            let tail = self.lattice_tail_bound(n_density, m);
            if tail <= tol || m > 4096 {
                return (m, tail);
            }
            m = if m < 8 { m + 1 } else { m + m / 4 };
        }
    }

    /// Plain-text record: the dimension on the first line, then `amplitude center.. width`
    /// per term, at 17 significant digits. `;` is accepted as a line separator on input.
    pub fn to_record(&self) -> String {
        let mut s = format!("{}\n", self.dim);
        for t in &self.terms {
            let _ = write!(s, "{:.16e}", t.amplitude);
            for c in &t.center {
                let _ = write!(s, " {c:.16e}");
            }
            let _ = writeln!(s, " {:.16e}", t.width);
        }
        s
    }

    pub fn from_record(text: &str) -> Result<Self> {
        let mut lines = text
            .split(['\n', ';'])
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty());
        let dim: usize = lines
            .next()
            .ok_or_else(|| Error::Parse("empty field record".into()))?
            .parse()
            .map_err(|e| Error::Parse(format!("dimension: {e}")))?;
        let mut terms = Vec::new();
        for (i, line) in lines.enumerate() {
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse(format!("term {i}: {e}")))?;
            if vals.len() != dim + 2 {
                return Err(Error::Parse(format!(
                    "term {i}: expected {} numbers (amplitude, {dim} center coordinates, width), got {}",
                    dim + 2,
                    vals.len()
                )));
            }
            terms.push(GaussianTerm::new(vals[0], vals[1..=dim].to_vec(), vals[dim + 1])?);
        }
        Self::new(dim, terms)
    }
}

/// `Σ_{n > m} exp(-q (n/N - c)²)` with a certified geometric remainder.
fn gauss_lattice_sum_above(n_density: f64, c: f64, q: f64, m: i64) -> f64 {
    let mut sum = 0.0;
    let mut n = m + 1;
    let term = |n: i64| (-q * (n as f64 / n_density - c).powi(2)).exp();
    // peak far above m: the whole-line bound is tight enough and avoids a long walk
    if c * n_density - m as f64 > 10_000.0 {
        return 1.0 + n_density * (PI / q).sqrt();
    }
    loop {
        let t = term(n);
        sum += t;
        let x = n as f64 / n_density;
        if x > c {
            let next = term(n + 1);
            if t == 0.0 || (next < 1e-18 * sum.max(1e-300) && next < t) {
                let ratio = if t > 0.0 { next / t } else { 0.0 };
                if ratio < 1.0 {
                    return sum + next / (1.0 - ratio);
                }
            }
        }
        n += 1;
        if n - m > 50_000_000 {
            return f64::INFINITY;
        }
    }
}

fn gauss_lattice_sum_range(n_density: f64, c: f64, q: f64, lo: i64, hi: i64) -> f64 {
    (lo..=hi).map(|n| (-q * (n as f64 / n_density - c).powi(2)).exp()).sum()
}

/// `(1/π) ∫_0^{πN} e^{-sξ²} dξ`, the largest value of [`lowpass_axis`].
fn lowpass_axis_sup(s: f64, n_density: f64) -> f64 {
    let top = PI * n_density * s.sqrt();
    (4.0 * PI * s).powf(-0.5) * libm::erf(top)
}

/// `(1/π) ∫_0^{πN} e^{-sξ²} cos(yξ) dξ` with an error estimate.
fn lowpass_axis(s: f64, y: f64, n_density: f64) -> (f64, f64) {
    let top = (PI * n_density).min((760.0 / s).sqrt());
    let h = (1.5 / y.abs().max(1e-300)).min(1.0 / s.sqrt()).min(top);
    let rule = |order| PanelRule::new(&[0.0, top], h, order).integrate(|xi| (-s * xi * xi).exp() * (y * xi).cos()) / PI;
    let fine = rule(20);
    let coarse = rule(14);
    (fine, (fine - coarse).abs() + 4.0 * f64::EPSILON * lowpass_axis_sup(s, n_density))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::PanelRule;
    use approx::assert_relative_eq;

    fn unit(d: usize) -> GaussianMixtureField {
        GaussianMixtureField::single(1.0, vec![0.0; d], 1.0).unwrap()
    }

    #[test]
    fn evaluate_examples() {
        let m = GaussianMixtureField::single(1.0, vec![0.0], 1.0 / (4.0 * PI)).unwrap();
        assert_relative_eq!(m.evaluate(&[0.0]).unwrap(), 1.0, max_relative = 1e-15);
        for d in 1..=3 {
            let mut c = vec![0.0; d];
            c[0] = 3.7;
            let m = GaussianMixtureField::single(1.0, c.clone(), 1.0).unwrap();
            assert_relative_eq!(m.evaluate(&c).unwrap(), (4.0 * PI).powf(-(d as f64) / 2.0), max_relative = 1e-15);
        }
        let a = GaussianMixtureField::single(0.7, vec![0.3, -1.0], 0.5).unwrap();
        let b = GaussianMixtureField::single(-1.2, vec![1.0, 2.0], 2.0).unwrap();
        let ab = a.combine(1.0, &b, 1.0).unwrap();
        let x = [0.4, 0.9];
        assert_relative_eq!(ab.evaluate(&x).unwrap(), a.value(&x) + b.value(&x), max_relative = 1e-15);
        assert!(matches!(a.evaluate(&[1.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn heat_evolve_examples_and_errors() {
        let m = unit(2);
        assert_eq!(m.heat_evolve(0.0).unwrap(), m);
        let lifted = m.heat_evolve(0.5).unwrap().heat_evolve(1.25).unwrap();
        assert_eq!(lifted, m.heat_evolve(1.75).unwrap());
        assert!(m.heat_evolve(-1e-3).is_err());
        let u = GaussianMixtureField::single(1.0, vec![9.0, 0.0], 1.0).unwrap();
        let ut = u.heat_evolve(2.0).unwrap();
        assert_eq!(ut.terms()[0].width, 3.0);
        assert_eq!(ut.terms()[0].center, vec![9.0, 0.0]);
    }

    #[test]
    fn fourier_examples() {
        for d in 1..=3 {
            let m = GaussianMixtureField::single(1.0, vec![0.0; d], 0.37).unwrap();
            let v = m.fourier_at(&vec![0.0; d]).unwrap();
            assert_relative_eq!(v.re, (2.0 * PI).powf(-(d as f64) / 2.0), max_relative = 1e-15);
            assert_eq!(v.im, 0.0);
        }
        let c = vec![1.5, -0.5];
        let off = GaussianMixtureField::single(1.0, c.clone(), 0.8).unwrap();
        let on = GaussianMixtureField::single(1.0, vec![0.0, 0.0], 0.8).unwrap();
        let xi = [0.7, 1.9];
        let phase = Complex64::from_polar(1.0, -(c[0] * xi[0] + c[1] * xi[1]));
        let diff = off.fourier(&xi) - phase * on.fourier(&xi);
        assert!(diff.norm() < 1e-15);
    }

    #[test]
    fn counterexample_norm_closed_forms() {
        for d in 1..=3 {
            let mut c = vec![0.0; d];
            c[0] = 12.0;
            let u0 = GaussianMixtureField::single(1.0, c, 1.0).unwrap();
            assert_relative_eq!(u0.l2_norm(), (8.0 * PI).powf(-(d as f64) / 4.0), max_relative = 1e-14);
            let t = 1.7;
            let ut = u0.heat_evolve(t).unwrap();
            assert_relative_eq!(
                ut.l2_norm(),
                (8.0 * PI).powf(-(d as f64) / 4.0) * (t + 1.0).powf(-(d as f64) / 4.0),
                max_relative = 1e-14
            );
        }
    }

    #[test]
    fn inner_product_far_separated_matches_spatial_oracle() {
        let f = GaussianMixtureField::single(1.0, vec![-3.0], 0.6).unwrap();
        let g = GaussianMixtureField::single(2.0, vec![4.0], 1.1).unwrap();
        let closed = f.inner_product(&g).unwrap();
        // brute-force spatial trapezoid on a wide fine grid
        let h = 1e-3;
        let oracle: f64 = (-40_000..=40_000).map(|i| {
            let x = i as f64 * h;
            f.value(&[x]) * g.value(&[x]) * h
        }).sum();
        assert_relative_eq!(closed, oracle, max_relative = 1e-10);
        let bound = (-(7.0f64 * 7.0) / (4.0 * (0.6 + 1.1))).exp() * f.l2_norm() * g.l2_norm();
        assert!(closed < bound);
    }

    #[test]
    fn weighted_norm_k1_matches_trapezoid_oracle() {
        let m = unit(1);
        let got = m.weighted_l2_norm(1, 1e-12).unwrap();
        let h = 2e-4;
        let oracle: f64 = (-200_000..=200_000)
            .map(|i| {
                let x = i as f64 * h;
                (1.0 + x.abs()).powi(2) * m.value(&[x]).powi(2) * h
            })
            .sum::<f64>()
            .sqrt();
        assert_relative_eq!(got.value, oracle, max_relative = 1e-8);
        let k0 = m.weighted_l2_norm(0, 1e-12).unwrap();
        assert!((k0.value - m.l2_norm()).abs() <= k0.certificate + 1e-12);
        let k2 = m.weighted_l2_norm(2, 1e-12).unwrap();
        assert!(k0.value <= got.value && got.value <= k2.value);
    }

    #[test]
    fn tail_outside_cube_single_term_matches_quadrature() {
        let m = GaussianMixtureField::single(1.0, vec![0.0], 0.5).unwrap();
        let h = 1.3;
        let closed = m.tail_l2_outside_cube(h, Side::Spatial);
        let rule = PanelRule::new(&[h, 40.0], 0.25, 16);
        let oracle = (2.0 * rule.integrate(|x| m.value(&[x]).powi(2))).sqrt();
        assert_relative_eq!(closed, oracle, max_relative = 1e-10);

        let freq = m.tail_l2_outside_cube(h, Side::Frequency);
        let rule = PanelRule::new(&[h, 40.0], 0.25, 16);
        let oracle = (2.0 * rule.integrate(|xi| m.fourier(&[xi]).norm_sqr())).sqrt();
        assert_relative_eq!(freq, oracle, max_relative = 1e-10);
    }

    #[test]
    fn tail_limits() {
        let m = unit(2);
        assert!(m.tail_l2_outside_cube(1e3, Side::Spatial) < 1e-300);
        assert_relative_eq!(m.tail_l2_outside_cube(1e-14, Side::Spatial), m.l2_norm(), max_relative = 1e-12);
        assert_eq!(m.tail_l2_outside_cube(0.0, Side::Frequency), m.l2_norm());
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let m = GaussianMixtureField::single(1.3, vec![0.2, -0.4], 0.7).unwrap();
        let x = [0.5, 0.1];
        let h = 1e-5;
        let fd = (m.value(&[x[0] + h, x[1]]) - m.value(&[x[0] - h, x[1]])) / (2.0 * h);
        assert_relative_eq!(m.derivative(&[1, 0], &x), fd, max_relative = 1e-8);
        let fd2 = (m.value(&[x[0], x[1] + h]) - 2.0 * m.value(&x) + m.value(&[x[0], x[1] - h])) / (h * h);
        assert_relative_eq!(m.derivative(&[0, 2], &x), fd2, max_relative = 1e-5);
    }

    #[test]
    fn lattice_tail_bound_dominates_direct_sum() {
        let m = GaussianMixtureField::single(1.0, vec![0.4], 2.0).unwrap();
        let n = 1.5;
        for mi in [0, 3, 10] {
            let direct: f64 = (-2000i64..=2000)
                .filter(|k| k.abs() > mi)
                .map(|k| m.value(&[k as f64 / n]).powi(2))
                .sum::<f64>()
                .sqrt();
            let bound = m.lattice_tail_bound(n, mi);
            assert!(bound >= direct * (1.0 - 1e-12));
            assert!(bound <= direct * (1.0 + 1e-9) + 1e-300);
        }
    }

    #[test]
    fn perturbed_tail_bound_dominates_shifted_values() {
        let m = GaussianMixtureField::single(1.0, vec![0.4], 0.7).unwrap();
        let (n, delta) = (2.0, 0.05);
        for mi in [0, 4, 9] {
            let direct: f64 = (-2000i64..=2000)
                .filter(|k| k.abs() > mi)
                .map(|k| {
                    let x = k as f64 / n;
                    // worst shift toward the center
                    let y = if x > 0.4 { x - delta } else { x + delta };
                    m.value(&[y]).powi(2)
                })
                .sum::<f64>()
                .sqrt();
            assert!(m.perturbed_lattice_tail_bound(n, mi, delta) >= direct);
        }
        assert_eq!(m.perturbed_lattice_tail_bound(n, 3, 0.0), m.lattice_tail_bound(n, 3));
    }

    #[test]
    fn record_round_trip_is_exact() {
        let m = GaussianMixtureField::new(
            2,
            vec![
                GaussianTerm::new(0.1 + 0.2, vec![1.0 / 3.0, -2.0 / 7.0], 0.123456789012345678).unwrap(),
                GaussianTerm::new(-1e-7, vec![5e10, 0.0], 3.0).unwrap(),
            ],
        )
        .unwrap();
        let back = GaussianMixtureField::from_record(&m.to_record()).unwrap();
        assert_eq!(back, m);
        assert!(GaussianMixtureField::from_record("1\n1.0 2.0").is_err());
        let inline = GaussianMixtureField::from_record("1; 1 0 1; 0.5 2 0.25").unwrap();
        assert_eq!(inline.terms().len(), 2);
    }

    #[test]
    fn tiny_widths_rejected() {
        assert!(GaussianTerm::new(1.0, vec![0.0], 1e-13).is_err());
        assert!(GaussianTerm::new(1.0, vec![0.0], f64::NAN).is_err());
    }
}
