//! Tensor-product Fourier-grid representation of fields.
//!
//! A [`FrequencyGrid`] is built for a band parameter `N`: each axis covers
//! `[-Ξ, Ξ]` with `Ξ = (2K+1)πN`, split into `2K+1` aliasing cells of width `2πN`, each
//! cell split into equal panels carrying Gauss–Legendre nodes. The cube boundary `±πN`
//! is a panel boundary, so band projectors are exact restrictions, and shifting by
//! `2πN` maps nodes onto nodes, so aliasing sums can be read off the grid.

use std::f64::consts::PI;
use std::io::{BufRead, Write};
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gaussian_field::{GaussianMixtureField, Side, MAX_DIM};
use crate::quadrature::{compensated_sum, Certified, PanelRule};
use crate::special::sphere_area;
use crate::tensor::{contract_all, unflatten, Matrix};

/// Largest tensor grid accepted, in nodes; about 270 MB per complex field.
pub const MAX_GRID_NODES: usize = 1 << 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridSpec {
    /// `K`: number of aliasing cells on each side of the central cell.
    pub outer_cells: usize,
    pub panels_per_cell: usize,
    pub order: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { outer_cells: 2, panels_per_cell: 8, order: 12 }
    }
}

impl GridSpec {
    /// Doubles the panel count `level` times.
    pub fn refined(self, level: u32) -> Self {
        Self { panels_per_cell: self.panels_per_cell << level, ..self }
    }

    pub fn with_outer_cells(self, outer_cells: usize) -> Self {
        Self { outer_cells, ..self }
    }

    /// Coverage for heat-evolved data: `Ξ ≥ πN·max(4, ⌈6/√(TN²)⌉)`, rounded up to an odd
    /// number of cells.
    pub fn for_heat(t: f64, n_band: f64) -> Self {
        let mult = (6.0 / (t * n_band * n_band).sqrt()).ceil().max(4.0);
        let k = ((mult - 1.0) / 2.0).ceil() as usize;
        Self { outer_cells: k.min(40), ..Self::default() }
    }

    /// Enough panels that a phase `e^{i x·ξ}` with `|x| ≤ extent` turns by at most about
    /// two radians per panel.
    pub fn resolving(self, n_band: f64, extent: f64) -> Self {
        let need = (extent * 2.0 * PI * n_band / 2.0).ceil() as usize;
        let mut p = self.panels_per_cell.max(need).max(2);
        p += p % 2;
        Self { panels_per_cell: p, ..self }
    }

    /// Enough panels that `|f̂|² ~ e^{-2b|ξ|²}` changes by at most `e^{16}` across a
    /// panel near the cube edge, so relative accuracy survives for tiny in-band aliases.
    pub fn resolving_decay(self, n_band: f64, rate: f64) -> Self {
        let need = (PI * PI * rate * n_band * n_band / 2.0).ceil() as usize;
        let mut p = self.panels_per_cell.max(need.min(2048));
        p += p % 2;
        Self { panels_per_cell: p, ..self }
    }

    /// Largest `|x|` whose phases [`Self::resolving`] accepts for this panel count.
    pub fn resolved_extent(&self, n_band: f64) -> f64 {
        self.panels_per_cell as f64 / (PI * n_band)
    }
}

fn complex_sum(parts: &[Complex64]) -> Complex64 {
    Complex64::new(compensated_sum(parts.iter().map(|c| c.re)), compensated_sum(parts.iter().map(|c| c.im)))
}

#[derive(Clone, Debug)]
pub struct FrequencyGrid {
    dim: usize,
    band: f64,
    spec: GridSpec,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    panel_width: f64,
    coverage: f64,
}

impl FrequencyGrid {
    pub fn new(dim: usize, n_band: f64, spec: GridSpec) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::input(format!("grid dimension must be 1..=3, got {dim}")));
        }
        if !(n_band > 0.0) || !n_band.is_finite() {
            return Err(Error::input("band parameter N must be positive"));
        }
        if spec.panels_per_cell == 0 || spec.order == 0 {
            return Err(Error::input("grid needs at least one panel and one node per panel"));
        }
        let cells = 2 * spec.outer_cells + 1;
        let per_axis = cells * spec.panels_per_cell * spec.order;
        if (per_axis as f64).powi(dim as i32) > MAX_GRID_NODES as f64 {
            return Err(Error::precondition(format!(
                "frequency grid would have {per_axis}^{dim} nodes, above the limit of {MAX_GRID_NODES}"
            )));
        }
        let coverage = cells as f64 * PI * n_band;
        let panel_width = 2.0 * PI * n_band / spec.panels_per_cell as f64;
        let n_panels = cells * spec.panels_per_cell;
        let breaks: Vec<f64> = (0..=n_panels).map(|p| -coverage + p as f64 * panel_width).collect();
        let rule = PanelRule::new(&breaks, panel_width * (1.0 + 1e-9), spec.order);
        let mut nodes = rule.nodes;
        // exact antisymmetry about 0
        let n = nodes.len();
        for i in 0..n / 2 {
            let v = 0.5 * (nodes[n - 1 - i] - nodes[i]);
            nodes[i] = -v;
            nodes[n - 1 - i] = v;
        }
        Ok(Self { dim, band: n_band, spec, nodes, weights: rule.weights, panel_width, coverage })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn band(&self) -> f64 {
        self.band
    }
    pub fn spec(&self) -> GridSpec {
        self.spec
    }
    pub fn coverage(&self) -> f64 {
        self.coverage
    }
    pub fn axis_nodes(&self) -> &[f64] {
        &self.nodes
    }
    pub fn axis_weights(&self) -> &[f64] {
        &self.weights
    }
    pub fn axis_len(&self) -> usize {
        self.nodes.len()
    }
    pub fn len(&self) -> usize {
        self.axis_len().pow(self.dim as u32)
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    pub fn shape(&self) -> Vec<usize> {
        vec![self.axis_len(); self.dim]
    }

    /// Node coordinates and quadrature weight at a flat index.
    #[inline]
    pub fn node(&self, flat: usize, xi: &mut [f64]) -> f64 {
        let n = self.axis_len();
        let mut rem = flat;
        let mut w = 1.0;
        for axis in (0..self.dim).rev() {
            let i = rem % n;
            rem /= n;
            xi[axis] = self.nodes[i];
            w *= self.weights[i];
        }
        w
    }

    /// True when `±πN'` falls on panel boundaries inside the coverage.
    pub fn is_aligned(&self, n_band: f64) -> bool {
        let edge = PI * n_band;
        if edge > self.coverage * (1.0 + 1e-12) {
            return false;
        }
        let steps = (edge + self.coverage) / self.panel_width;
        (steps - steps.round()).abs() < 1e-8
    }

    /// Number of axis nodes spanned by a shift of `2πN'`, if it maps nodes onto nodes.
    pub fn shift_stride(&self, n_band: f64) -> Option<usize> {
        let panels = 2.0 * PI * n_band / self.panel_width;
        if (panels - panels.round()).abs() < 1e-8 && panels.round() >= 1.0 {
            Some(panels.round() as usize * self.spec.order)
        } else {
            None
        }
    }

    /// Indices of axis nodes strictly inside `(-πN', πN')`.
    pub fn in_band_axis(&self, n_band: f64) -> Vec<usize> {
        let edge = PI * n_band;
        (0..self.axis_len()).filter(|&i| self.nodes[i].abs() < edge).collect()
    }
}

/// Radial magnitude bound `|f̂(ξ)| ≤ A (1+|ξ|²)^{q/2} e^{-b|ξ|²}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Envelope {
    pub amplitude: f64,
    pub poly: f64,
    pub rate: f64,
}

impl Envelope {
    pub fn value(&self, rho: f64) -> f64 {
        self.amplitude * (1.0 + rho * rho).powf(self.poly / 2.0) * (-self.rate * rho * rho).exp()
    }

    /// `sup_{ρ ≥ ρ₁}` of the envelope.
    pub fn sup_beyond(&self, rho1: f64) -> f64 {
        if self.poly <= 0.0 {
            return self.value(rho1);
        }
        if self.rate <= 0.0 {
            return f64::INFINITY;
        }
        let peak = (self.poly / (2.0 * self.rate) - 1.0).max(0.0).sqrt();
        self.value(rho1.max(peak))
    }

    /// `∫_{|ξ| ≥ ρ₀} env(ξ)^p dξ` in dimension `d`; bounds any integral over the complement
    /// of the cube `[-ρ₀, ρ₀]^d`.
    pub fn radial_tail(&self, rho0: f64, p: f64, d: usize) -> f64 {
        if self.amplitude == 0.0 {
            return 0.0;
        }
        let area = sphere_area(d);
        let df = d as f64;
        if self.rate <= 0.0 {
            let expo = p * self.poly + df;
            if self.poly >= 0.0 || expo >= 0.0 || rho0 <= 0.0 {
                return f64::INFINITY;
            }
            return self.amplitude.powf(p) * area * rho0.powf(expo) / (-expo);
        }
        let b = p * self.rate;
        let scale = 1.0 / b.sqrt();
        let upper = rho0 + scale * (14.0 + self.poly.abs().sqrt() * 4.0 + df) + 1.0;
        let rule = PanelRule::new(&[rho0, upper], 0.2 * scale, 16);
        let body = rule.integrate(|r| self.value(r).powf(p) * r.powi(d as i32 - 1));
        // beyond `upper` the integrand is below e^{-196} of its scale
        let rest = self.value(upper).powf(p) * upper.powi(d as i32 - 1) * scale;
        area * (body + rest)
    }

    /// `Σ_{k: max|k_j| ≥ j0} ‖env(· + 2πN k)‖_{L²(Q_{πN})}`, bounded shell by shell.
    pub fn alias_shell_bound(&self, n_band: f64, j0: usize, d: usize) -> f64 {
        if self.amplitude == 0.0 {
            return 0.0;
        }
        let cell = (2.0 * PI * n_band).powf(d as f64 / 2.0);
        let count = |j: usize| ((2 * j + 1) as f64).powi(d as i32) - ((2 * j - 1) as f64).powi(d as i32);
        let shell = |j: usize| count(j) * cell * self.sup_beyond(PI * n_band * (2 * j - 1) as f64);
        let j0 = j0.max(1);
        let mut acc = 0.0;
        if self.rate > 0.0 {
            let mut j = j0;
            let mut prev = shell(j);
            acc += prev;
            loop {
                j += 1;
                let cur = shell(j);
                acc += cur;
                if cur == 0.0 {
                    return acc;
                }
                if cur < prev && cur < 1e-30 * acc.max(f64::MIN_POSITIVE) {
                    let ratio = cur / prev;
                    return acc + cur * ratio / (1.0 - ratio);
                }
                if j > j0 + 100_000 {
                    return f64::INFINITY;
                }
                prev = cur;
            }
        }
        if self.poly >= -(d as f64) {
            return f64::INFINITY;
        }
        let last = j0 + 2000;
        for j in j0..=last {
            acc += shell(j);
        }
        let df = d as f64;
        let rem = 2.0 * df * 3f64.powi(d as i32 - 1) * cell * self.amplitude * (PI * n_band).powf(self.poly)
            * ((2 * last + 1) as f64 - 1.0).powf(df + self.poly)
            / (2.0 * (-(df + self.poly)));
        acc + rem
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Band {
    Low,
    High,
}

/// Samples of a Fourier transform on a [`FrequencyGrid`], with a certified bound on the
/// L² mass outside the grid's coverage.
#[derive(Clone, Debug)]
pub struct SpectralGridField {
    grid: Arc<FrequencyGrid>,
    coeffs: Vec<Complex64>,
    tail_bound: f64,
    envelope: Option<Envelope>,
}

impl SpectralGridField {
    pub fn from_parts(grid: Arc<FrequencyGrid>, coeffs: Vec<Complex64>, tail_bound: f64, envelope: Option<Envelope>) -> Result<Self> {
        if coeffs.len() != grid.len() {
            return Err(Error::input(format!("{} coefficients for a grid of {} nodes", coeffs.len(), grid.len())));
        }
        if !(tail_bound >= 0.0) {
            return Err(Error::input("tail bound must be nonnegative (use +inf for uncertified)"));
        }
        Ok(Self { grid, coeffs, tail_bound, envelope })
    }

    pub fn from_fn<F>(grid: Arc<FrequencyGrid>, f: F, tail_bound: f64, envelope: Option<Envelope>) -> Result<Self>
    where
        F: Fn(&[f64]) -> Complex64 + Sync,
    {
        let d = grid.dim();
        let coeffs = (0..grid.len())
            .into_par_iter()
            .map(|k| {
                let mut xi = [0.0; 3];
                grid.node(k, &mut xi);
                f(&xi[..d])
            })
            .collect();
        Self::from_parts(grid, coeffs, tail_bound, envelope)
    }

    pub fn zeros(grid: Arc<FrequencyGrid>) -> Self {
        let n = grid.len();
        Self { grid, coeffs: vec![Complex64::new(0.0, 0.0); n], tail_bound: 0.0, envelope: None }
    }

    /// Exact Fourier samples of a Gaussian mixture. The tail bound is the mixture's
    /// spectral mass outside the coverage cube.
    pub fn from_gaussian(mix: &GaussianMixtureField, grid: Arc<FrequencyGrid>) -> Result<Self> {
        Error::check_dim(grid.dim(), mix.dim())?;
        let tail = mix.tail_l2_outside_cube(grid.coverage(), Side::Frequency);
        let envelope = if mix.is_zero() {
            Envelope { amplitude: 0.0, poly: 0.0, rate: 0.0 }
        } else {
            let amp: f64 = mix.terms().iter().map(|t| t.amplitude.abs()).sum::<f64>()
                * (2.0 * PI).powf(-(mix.dim() as f64) / 2.0);
            Envelope { amplitude: amp, poly: 0.0, rate: mix.min_width() }
        };
        Self::from_fn(grid, |xi| mix.fourier(xi), tail, Some(envelope))
    }

    pub fn grid(&self) -> &Arc<FrequencyGrid> {
        &self.grid
    }
    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }
    pub fn tail_bound(&self) -> f64 {
        self.tail_bound
    }
    pub fn envelope(&self) -> Option<Envelope> {
        self.envelope
    }
    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn with_envelope(mut self, envelope: Option<Envelope>) -> Self {
        self.envelope = envelope;
        self
    }

    fn map_nodes<F>(&self, f: F) -> Vec<Complex64>
    where
        F: Fn(&[f64], Complex64) -> Complex64 + Sync,
    {
        let d = self.dim();
        self.coeffs
            .par_iter()
            .enumerate()
            .map(|(k, &c)| {
                let mut xi = [0.0; 3];
                self.grid.node(k, &mut xi);
                f(&xi[..d], c)
            })
            .collect()
    }

    pub fn apply_heat_multiplier(&self, t: f64) -> Result<Self> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::input(format!("heat multiplier time must be a finite t >= 0, got {t}")));
        }
        let coeffs = self.map_nodes(|xi, c| c * (-t * xi.iter().map(|v| v * v).sum::<f64>()).exp());
        let xi2 = self.grid.coverage().powi(2);
        Ok(Self {
            grid: self.grid.clone(),
            coeffs,
            tail_bound: self.tail_bound * (-t * xi2).exp(),
            envelope: self.envelope.map(|e| Envelope { rate: e.rate + t, ..e }),
        })
    }

    pub fn band_project(&self, n_band: f64, part: Band) -> Result<Self> {
        if !self.grid.is_aligned(n_band) {
            return Err(Error::GridAlignment(format!(
                "cube edge πN = {} is not a panel boundary of this grid; regenerate the grid for N = {n_band}",
                PI * n_band
            )));
        }
        let edge = PI * n_band;
        let keep_low = part == Band::Low;
        let coeffs = self.map_nodes(|xi, c| {
            let inside = xi.iter().all(|v| v.abs() < edge);
            if inside == keep_low {
                c
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        let tail_bound = if keep_low { 0.0 } else { self.tail_bound };
        Ok(Self { grid: self.grid.clone(), coeffs, tail_bound, envelope: self.envelope })
    }

    /// Bessel potential weight `(1+|ξ|²)^{s/2}`.
    ///
    /// For `s > 0` the coverage tail is re-derived from the decay envelope when one is
    /// attached, and marked uncertified otherwise.
    pub fn bessel_apply(&self, s: f64) -> Self {
        let coeffs = self.map_nodes(|xi, c| c * (1.0 + xi.iter().map(|v| v * v).sum::<f64>()).powf(s / 2.0));
        let envelope = self.envelope.map(|e| Envelope { poly: e.poly + s, ..e });
        let tail_bound = if self.tail_bound == 0.0 {
            0.0
        } else if s <= 0.0 {
            self.tail_bound * (1.0 + self.grid.coverage().powi(2)).powf(s / 2.0)
        } else {
            match envelope {
                Some(env) => env.radial_tail(self.grid.coverage(), 2.0, self.dim()).sqrt().max(0.0),
                None => f64::INFINITY,
            }
        };
        Self { grid: self.grid.clone(), coeffs, tail_bound, envelope }
    }

    /// Quadrature value of `‖f‖` with the coverage tail as certificate. The quadrature
    /// error itself is controlled by re-running on refined grids (see [`crate::quadrature::refine_until`]).
    pub fn l2_norm(&self) -> Certified {
        let sq = self.l2_norm_sq_in_grid();
        let root = sq.sqrt();
        let cert = if self.tail_bound.is_finite() {
            (sq + self.tail_bound * self.tail_bound).sqrt() - root
        } else {
            f64::INFINITY
        };
        Certified::new(root, cert)
    }

    pub fn l2_norm_sq_in_grid(&self) -> f64 {
        let d = self.dim();
        let parts: Vec<f64> = self
            .coeffs
            .par_iter()
            .enumerate()
            .map(|(k, c)| {
                let mut xi = [0.0; 3];
                self.grid.node(k, &mut xi[..d]) * c.norm_sqr()
            })
            .collect();
        compensated_sum(parts)
    }

    pub fn hs_norm(&self, s: f64) -> Certified {
        if s == 0.0 {
            return self.l2_norm();
        }
        self.bessel_apply(s).l2_norm()
    }

    /// `⟨f, g⟩ = ∫ f̂ conj(ĝ)` by quadrature on the shared grid.
    pub fn inner_product(&self, other: &Self) -> Result<Complex64> {
        if !Arc::ptr_eq(&self.grid, &other.grid) && self.grid.len() != other.grid.len() {
            return Err(Error::input("inner product needs fields on the same grid"));
        }
        let d = self.dim();
        let parts: Vec<Complex64> = self
            .coeffs
            .par_iter()
            .zip(&other.coeffs)
            .enumerate()
            .map(|(k, (a, b))| {
                let mut xi = [0.0; 3];
                let w = self.grid.node(k, &mut xi[..d]);
                a * b.conj() * w
            })
            .collect();
        Ok(complex_sum(&parts))
    }

    pub fn combine(&self, alpha: Complex64, other: &Self, beta: Complex64) -> Result<Self> {
        if self.coeffs.len() != other.coeffs.len() {
            return Err(Error::input("fields live on different grids"));
        }
        let coeffs = self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| alpha * a + beta * b).collect();
        let tail_bound = alpha.norm() * self.tail_bound + beta.norm() * other.tail_bound;
        let envelope = match (self.envelope, other.envelope) {
            (Some(a), Some(b)) if a.poly == b.poly => Some(Envelope {
                amplitude: alpha.norm() * a.amplitude + beta.norm() * b.amplitude,
                poly: a.poly,
                rate: a.rate.min(b.rate),
            }),
            _ => None,
        };
        Ok(Self { grid: self.grid.clone(), coeffs, tail_bound, envelope })
    }

    /// `(2π)^{-d/2} ∫ f̂(ξ) e^{ix·ξ} dξ` by direct summation over the grid. The certificate
    /// covers the mass beyond the coverage (L¹ form, from the envelope).
    pub fn point_value(&self, x: &[f64]) -> Result<(Complex64, f64)> {
        Error::check_dim(self.dim(), x.len())?;
        let d = self.dim();
        let norm = (2.0 * PI).powf(-(d as f64) / 2.0);
        let parts: Vec<Complex64> = self
            .coeffs
            .par_iter()
            .enumerate()
            .map(|(k, c)| {
                let mut xi = [0.0; 3];
                let w = self.grid.node(k, &mut xi[..d]);
                let phase: f64 = xi[..d].iter().zip(x).map(|(a, b)| a * b).sum();
                c * Complex64::from_polar(w, phase)
            })
            .collect();
        let v = complex_sum(&parts) * norm;
        Ok((v, norm * self.l1_tail()))
    }

    /// L¹ mass of `f̂` beyond the coverage cube.
    pub fn l1_tail(&self) -> f64 {
        if self.tail_bound == 0.0 {
            return 0.0;
        }
        match self.envelope {
            Some(env) => env.radial_tail(self.grid.coverage(), 1.0, self.dim()),
            None => f64::INFINITY,
        }
    }

    /// Point values on the tensor product of per-axis point lists, by separable
    /// contraction. Returns values in row-major order over the point lists.
    pub fn values_on_tensor(&self, axes: &[Vec<f64>]) -> Result<Vec<Complex64>> {
        self.values_on_tensor_band(axes, None)
    }

    /// As [`Self::values_on_tensor`], optionally restricted to the nodes of `Q_{πN'}`,
    /// i.e. the point values of the low band part.
    pub fn values_on_tensor_band(&self, axes: &[Vec<f64>], band: Option<f64>) -> Result<Vec<Complex64>> {
        let d = self.dim();
        Error::check_dim(d, axes.len())?;
        let keep: Vec<usize> = match band {
            Some(n) => {
                if !self.grid.is_aligned(n) {
                    return Err(Error::GridAlignment(format!("band N = {n} not aligned with grid")));
                }
                self.grid.in_band_axis(n)
            }
            None => (0..self.grid.axis_len()).collect(),
        };
        let m = keep.len();
        let shape_in = vec![m; d];
        let total: usize = shape_in.iter().product();
        let full = self.grid.shape();
        let data: Vec<Complex64> = (0..total)
            .into_par_iter()
            .map(|flat| {
                let mut idx = [0usize; 3];
                unflatten(flat, &shape_in, &mut idx[..d]);
                let mut src = 0;
                for axis in 0..d {
                    src = src * full[axis] + keep[idx[axis]];
                }
                self.coeffs[src]
            })
            .collect();
        let nodes = self.grid.axis_nodes();
        let weights = self.grid.axis_weights();
        let norm = (2.0 * PI).powf(-0.5);
        let mats: Vec<Matrix> = axes
            .iter()
            .map(|pts| {
                Matrix::from_fn(pts.len(), m, |r, c| {
                    let i = keep[c];
                    Complex64::from_polar(norm * weights[i], pts[r] * nodes[i])
                })
            })
            .collect();
        Ok(contract_all(data, &shape_in, &mats).0)
    }

    /// Values at the lattice points `n/N'` for `max_j |n_j| ≤ m`, row-major over the cube.
    pub fn values_on_lattice(&self, n_density: f64, m: i64, band: Option<f64>) -> Result<Vec<Complex64>> {
        let pts: Vec<f64> = (-m..=m).map(|k| k as f64 / n_density).collect();
        let axes = vec![pts; self.dim()];
        self.values_on_tensor_band(&axes, band)
    }

    /// Node-wise aliasing defect on `Q_{πN'}`: `-Σ_{k≠0} f̂(ξ + 2πN'k)` using the grid
    /// nodes, zero outside the band. The second value bounds the L² norm over `Q_{πN'}` of
    /// the aliases that fall outside the coverage (from the envelope).
    pub fn alias_defect(&self, n_band: f64) -> Result<(Self, f64)> {
        let stride = self
            .grid
            .shift_stride(n_band)
            .ok_or_else(|| Error::GridAlignment(format!("shift 2πN' for N' = {n_band} does not map nodes to nodes")))?;
        if !self.grid.is_aligned(n_band) {
            return Err(Error::GridAlignment(format!("band N' = {n_band} not aligned with grid")));
        }
        let d = self.dim();
        let n_axis = self.grid.axis_len();
        let edge = PI * n_band;
        let nodes = self.grid.axis_nodes();
        let shape = self.grid.shape();
        let coeffs: Vec<Complex64> = (0..self.grid.len())
            .into_par_iter()
            .map(|flat| {
                let mut idx = [0usize; 3];
                unflatten(flat, &shape, &mut idx[..d]);
                if idx[..d].iter().any(|&i| nodes[i].abs() >= edge) {
                    return Complex64::new(0.0, 0.0);
                }
                // all in-coverage shifts per axis
                let mut lists: Vec<Vec<usize>> = Vec::with_capacity(d);
                for &i in &idx[..d] {
                    let mut l = vec![i];
                    let mut k = 1;
                    loop {
                        let mut any = false;
                        if i + k * stride < n_axis {
                            l.push(i + k * stride);
                            any = true;
                        }
                        if k * stride <= i {
                            l.push(i - k * stride);
                            any = true;
                        }
                        if !any {
                            break;
                        }
                        k += 1;
                    }
                    lists.push(l);
                }
                let mut acc = Complex64::new(0.0, 0.0);
                let mut pick = [0usize; 3];
                loop {
                    if pick[..d].iter().any(|&p| p != 0) {
                        let mut src = 0;
                        for axis in 0..d {
                            src = src * n_axis + lists[axis][pick[axis]];
                        }
                        acc += self.coeffs[src];
                    }
                    let mut axis = d;
                    loop {
                        if axis == 0 {
                            return -acc;
                        }
                        axis -= 1;
                        pick[axis] += 1;
                        if pick[axis] < lists[axis].len() {
                            break;
                        }
                        pick[axis] = 0;
                    }
                }
            })
            .collect();
        // fully covered alias cells: |2πN'k| + πN' ≤ Ξ
        let covered = ((self.grid.coverage() / edge - 1.0) / 2.0 + 1e-9).floor().max(0.0) as usize;
        let beyond = match self.envelope {
            Some(env) => env.alias_shell_bound(n_band, covered + 1, d),
            None if self.tail_bound == 0.0 => 0.0,
            None => f64::INFINITY,
        };
        let field = Self { grid: self.grid.clone(), coeffs, tail_bound: 0.0, envelope: None };
        Ok((field, beyond))
    }

    /// CSV export: a `# grid` header line, then `xi_1..xi_d,re,im` per node.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let g = &self.grid;
        let spec = g.spec();
        writeln!(
            out,
            "# grid dim={} band={:.16e} outer_cells={} panels_per_cell={} order={} tail_bound={:.16e}",
            g.dim(),
            g.band(),
            spec.outer_cells,
            spec.panels_per_cell,
            spec.order,
            self.tail_bound
        )?;
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (1..=g.dim()).map(|j| format!("xi_{j}")).collect();
        header.push("re".into());
        header.push("im".into());
        w.write_record(&header)?;
        let d = g.dim();
        let mut xi = [0.0; 3];
        for (k, c) in self.coeffs.iter().enumerate() {
            g.node(k, &mut xi[..d]);
            let mut row: Vec<String> = xi[..d].iter().map(|v| format!("{v:.16e}")).collect();
            row.push(format!("{:.16e}", c.re));
            row.push(format!("{:.16e}", c.im));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// CSV import; rebuilds the grid from the header and checks every node coordinate.
    pub fn read_csv<R: BufRead>(mut input: R) -> Result<Self> {
        let mut first = String::new();
        input.read_line(&mut first)?;
        let header = first.trim().strip_prefix("# grid").ok_or_else(|| Error::Parse("missing '# grid' header line".into()))?;
        let mut dim = None;
        let mut band = None;
        let mut spec = GridSpec::default();
        let mut tail = None;
        for kv in header.split_whitespace() {
            let (k, v) = kv.split_once('=').ok_or_else(|| Error::Parse(format!("bad header item {kv}")))?;
            let perr = |e: String| Error::Parse(format!("{k}: {e}"));
            match k {
                "dim" => dim = Some(v.parse::<usize>().map_err(|e| perr(e.to_string()))?),
                "band" => band = Some(v.parse::<f64>().map_err(|e| perr(e.to_string()))?),
                "outer_cells" => spec.outer_cells = v.parse().map_err(|e: std::num::ParseIntError| perr(e.to_string()))?,
                "panels_per_cell" => spec.panels_per_cell = v.parse().map_err(|e: std::num::ParseIntError| perr(e.to_string()))?,
                "order" => spec.order = v.parse().map_err(|e: std::num::ParseIntError| perr(e.to_string()))?,
                "tail_bound" => tail = Some(v.parse::<f64>().map_err(|e| perr(e.to_string()))?),
                other => return Err(Error::Parse(format!("unknown header key {other}"))),
            }
        }
        let dim = dim.ok_or_else(|| Error::Parse("header lacks dim".into()))?;
        let band = band.ok_or_else(|| Error::Parse("header lacks band".into()))?;
        let grid = Arc::new(FrequencyGrid::new(dim, band, spec)?);
        let mut reader = csv::Reader::from_reader(input);
        let mut coeffs = Vec::with_capacity(grid.len());
        let mut xi = [0.0; 3];
        for (k, rec) in reader.records().enumerate() {
            let rec = rec?;
            if rec.len() != dim + 2 {
                return Err(Error::Parse(format!("row {k}: expected {} columns", dim + 2)));
            }
            let vals: Vec<f64> = rec
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse(format!("row {k}: {e}")))?;
            if k >= grid.len() {
                return Err(Error::Parse("more rows than grid nodes".into()));
            }
            grid.node(k, &mut xi[..dim]);
            for j in 0..dim {
                if (vals[j] - xi[j]).abs() > 1e-12 * (1.0 + xi[j].abs()) {
                    return Err(Error::GridAlignment(format!("row {k}: node coordinate {} does not match grid node {}", vals[j], xi[j])));
                }
            }
            coeffs.push(Complex64::new(vals[dim], vals[dim + 1]));
        }
        Self::from_parts(grid, coeffs, tail.unwrap_or(f64::INFINITY), None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::refine_until;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn grid(d: usize, n: f64) -> Arc<FrequencyGrid> {
        Arc::new(FrequencyGrid::new(d, n, GridSpec::default()).unwrap())
    }

    #[test]
    fn grid_nodes_symmetric_and_weights_positive() {
        let g = grid(1, 1.3);
        let n = g.axis_len();
        for i in 0..n {
            assert_eq!(g.axis_nodes()[i], -g.axis_nodes()[n - 1 - i]);
            assert!(g.axis_weights()[i] > 0.0);
        }
        let total: f64 = g.axis_weights().iter().sum();
        assert_relative_eq!(total, 2.0 * g.coverage(), max_relative = 1e-13);
        assert!(g.is_aligned(1.3));
        assert!(!g.is_aligned(1.0));
    }

    #[test]
    fn unit_gaussian_norm_matches_closed_form() {
        let m = GaussianMixtureField::single(1.0, vec![0.0], 1.0).unwrap();
        let f = SpectralGridField::from_gaussian(&m, grid(1, 1.0)).unwrap();
        let n = f.l2_norm();
        assert!((n.value - (8.0 * PI).powf(-0.25)).abs() < 1e-8 + n.certificate);
    }

    #[test]
    fn zero_mixture_gives_zero_field() {
        let z = GaussianMixtureField::zero(2).unwrap();
        let f = SpectralGridField::from_gaussian(&z, grid(2, 1.0)).unwrap();
        assert!(f.coeffs().iter().all(|c| c.norm() == 0.0));
        assert_eq!(f.tail_bound(), 0.0);
    }

    #[test]
    fn heat_multiplier_matches_evolved_sampling_exactly() {
        let m = GaussianMixtureField::single(0.8, vec![0.5, -1.0], 0.4).unwrap();
        let g = grid(2, 1.0);
        let t = 0.6;
        let a = SpectralGridField::from_gaussian(&m.heat_evolve(t).unwrap(), g.clone()).unwrap();
        let b = SpectralGridField::from_gaussian(&m, g).unwrap().apply_heat_multiplier(t).unwrap();
        for (x, y) in a.coeffs().iter().zip(b.coeffs()) {
            assert!((x - y).norm() <= 1e-13 * x.norm() + 1e-300);
        }
        assert!(b.tail_bound() >= a.tail_bound() * (1.0 - 1e-12));
    }

    #[test]
    fn heat_multiplier_examples() {
        let m = GaussianMixtureField::single(1.0, vec![0.0], 0.3).unwrap();
        let f = SpectralGridField::from_gaussian(&m, grid(1, 1.0)).unwrap();
        let same = f.apply_heat_multiplier(0.0).unwrap();
        assert_eq!(same.coeffs(), f.coeffs());
        let g = f.apply_heat_multiplier(0.5).unwrap();
        assert!(g.l2_norm().value <= f.l2_norm().value);
        assert!(f.apply_heat_multiplier(-0.1).is_err());
        // a node with |ξ|² = 1/t shrinks by e^{-1}
        let t = 1.0 / f.grid().axis_nodes()[7].powi(2);
        let h = f.apply_heat_multiplier(t).unwrap();
        assert_relative_eq!(h.coeffs()[7].norm() / f.coeffs()[7].norm(), (-1.0f64).exp(), max_relative = 1e-14);
    }

    #[test]
    fn band_projection_partition_and_alignment() {
        let m = GaussianMixtureField::single(1.0, vec![0.3, 0.1], 0.05).unwrap();
        let f = SpectralGridField::from_gaussian(&m, grid(2, 1.0)).unwrap();
        let lo = f.band_project(1.0, Band::Low).unwrap();
        let hi = f.band_project(1.0, Band::High).unwrap();
        for ((a, b), c) in lo.coeffs().iter().zip(hi.coeffs()).zip(f.coeffs()) {
            assert_eq!(a + b, *c);
        }
        let total = f.l2_norm_sq_in_grid();
        assert_relative_eq!(lo.l2_norm_sq_in_grid() + hi.l2_norm_sq_in_grid(), total, max_relative = 1e-14);
        assert!(matches!(f.band_project(0.7, Band::Low), Err(Error::GridAlignment(_))));
        // band-limited input: low is identity, high vanishes
        let lo2 = lo.band_project(1.0, Band::Low).unwrap();
        assert_eq!(lo2.coeffs(), lo.coeffs());
        assert_eq!(lo.band_project(1.0, Band::High).unwrap().l2_norm().value, 0.0);
        // commutes with the heat multiplier
        let a = f.apply_heat_multiplier(0.3).unwrap().band_project(1.0, Band::Low).unwrap();
        let b = lo.apply_heat_multiplier(0.3).unwrap();
        assert_eq!(a.coeffs(), b.coeffs());
    }

    #[test]
    fn bessel_examples() {
        let m = GaussianMixtureField::single(1.0, vec![0.2], 0.7).unwrap();
        let f = SpectralGridField::from_gaussian(&m, grid(1, 1.0)).unwrap();
        assert_eq!(f.bessel_apply(0.0).coeffs(), f.coeffs());
        let back = f.bessel_apply(1.7).bessel_apply(-1.7);
        for (a, b) in back.coeffs().iter().zip(f.coeffs()) {
            assert!((a - b).norm() <= 1e-14 * b.norm() + 1e-300);
        }
        assert_eq!(f.hs_norm(0.0), f.l2_norm());
        let direct = f.bessel_apply(1.3).l2_norm();
        assert_eq!(f.hs_norm(1.3), direct);
        let no_env = f.clone().with_envelope(None).bessel_apply(1.0);
        assert!(no_env.tail_bound().is_infinite());
    }

    #[test]
    fn bessel_two_is_one_minus_laplacian() {
        // (1-Δ)u evaluated from closed-form second derivatives vs spectral weighting
        let m = GaussianMixtureField::single(1.0, vec![0.3], 0.5).unwrap();
        let f = SpectralGridField::from_gaussian(&m, grid(1, 1.0)).unwrap().bessel_apply(2.0);
        for x in [-1.1, 0.0, 0.4, 2.0] {
            let (v, _) = f.point_value(&[x]).unwrap();
            let oracle = m.value(&[x]) - m.derivative(&[2], &[x]);
            assert!((v.re - oracle).abs() < 1e-9, "x={x}: {} vs {oracle}", v.re);
        }
    }

    #[test]
    fn point_values_match_closed_form() {
        let m = GaussianMixtureField::new(
            2,
            vec![
                crate::gaussian_field::GaussianTerm::new(1.0, vec![0.5, -0.3], 0.6).unwrap(),
                crate::gaussian_field::GaussianTerm::new(-0.4, vec![-1.0, 0.8], 1.2).unwrap(),
            ],
        )
        .unwrap();
        let g = Arc::new(FrequencyGrid::new(2, 1.0, GridSpec::default().resolving(1.0, 6.0)).unwrap());
        let f = SpectralGridField::from_gaussian(&m, g).unwrap();
        let mut rng = 0.37f64;
        for _ in 0..20 {
            rng = (rng * 9301.0 + 0.49297).fract();
            let x0 = 4.0 * rng - 2.0;
            rng = (rng * 9301.0 + 0.49297).fract();
            let x1 = 4.0 * rng - 2.0;
            let (v, cert) = f.point_value(&[x0, x1]).unwrap();
            assert!((v.re - m.value(&[x0, x1])).abs() < 1e-7 + cert);
        }
        let even = GaussianMixtureField::single(1.0, vec![0.0, 0.0], 0.6).unwrap();
        let fe = SpectralGridField::from_gaussian(&even, grid(2, 1.0)).unwrap();
        assert!(fe.point_value(&[0.0, 0.0]).unwrap().0.im.abs() < 1e-12);
    }

    #[test]
    fn tensor_values_match_direct_point_values() {
        let m = GaussianMixtureField::single(1.0, vec![0.2, 0.1], 0.5).unwrap();
        let f = SpectralGridField::from_gaussian(&m, grid(2, 1.0)).unwrap();
        let vals = f.values_on_lattice(1.0, 2, None).unwrap();
        let (direct, _) = f.point_value(&[1.0, -2.0]).unwrap();
        // n = (1, -2) → row-major index (1+2)*5 + (-2+2)
        assert!((vals[15] - direct).norm() < 1e-13);
    }

    #[test]
    fn refinement_converges_quickly_for_smooth_gaussian() {
        let m = GaussianMixtureField::single(1.0, vec![0.4], 1.0).unwrap();
        let mut levels = 0;
        let out = refine_until("gaussian norm", 1e-8, |level| {
            levels = level;
            let g = Arc::new(FrequencyGrid::new(1, 1.0, GridSpec { panels_per_cell: 2, order: 8, outer_cells: 2 }.refined(level)).unwrap());
            let f = SpectralGridField::from_gaussian(&m, g).unwrap();
            let n = f.l2_norm();
            Ok((n.value, n.certificate))
        })
        .unwrap();
        assert!(levels <= 3, "needed {levels} doublings");
        assert!((out.value - m.l2_norm()).abs() <= out.certificate + 1e-12);
    }

    #[test]
    fn under_covered_grid_fails_certification() {
        let m = GaussianMixtureField::single(1.0, vec![0.0], 0.01).unwrap();
        let err = refine_until("under-covered", 1e-8, |level| {
            let g = Arc::new(FrequencyGrid::new(1, 0.5, GridSpec { outer_cells: 0, ..GridSpec::default() }.refined(level)).unwrap());
            let n = SpectralGridField::from_gaussian(&m, g).unwrap().l2_norm();
            Ok((n.value, n.certificate))
        })
        .unwrap_err();
        match err {
            Error::Certification { certificate, .. } => assert!(certificate > 1e-3),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn csv_round_trip_and_validation() {
        let m = GaussianMixtureField::single(1.0, vec![0.3], 0.5).unwrap();
        let g = Arc::new(FrequencyGrid::new(1, 1.0, GridSpec { outer_cells: 1, panels_per_cell: 2, order: 4 }).unwrap());
        let f = SpectralGridField::from_gaussian(&m, g).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let back = SpectralGridField::read_csv(std::io::Cursor::new(buf.clone())).unwrap();
        assert_eq!(back.coeffs(), f.coeffs());
        let text = String::from_utf8(buf).unwrap().replacen("panels_per_cell=2", "panels_per_cell=3", 1);
        assert!(SpectralGridField::read_csv(std::io::Cursor::new(text.into_bytes())).is_err());
    }

    #[test]
    fn alias_defect_matches_closed_form_periodization() {
        let m = GaussianMixtureField::single(1.0, vec![0.4], 0.08).unwrap();
        let n = 1.0;
        let g = Arc::new(FrequencyGrid::new(1, n, GridSpec { outer_cells: 4, ..GridSpec::default() }).unwrap());
        let f = SpectralGridField::from_gaussian(&m, g.clone()).unwrap();
        let (alias, beyond) = f.alias_defect(n).unwrap();
        assert!(beyond < 1e-20);
        for (i, &xi) in g.axis_nodes().iter().enumerate() {
            if xi.abs() < PI * n {
                let oracle: Complex64 = (1..=20)
                    .flat_map(|k| [k as f64, -(k as f64)])
                    .map(|k| m.fourier(&[xi + 2.0 * PI * n * k]))
                    .sum();
                assert!((alias.coeffs()[i] + oracle).norm() < 1e-14);
            } else {
                assert_eq!(alias.coeffs()[i].norm(), 0.0);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn multipliers_commute_and_preserve_symmetry(t in 0.0f64..2.0, s in -2.0f64..2.0, c in -1.0f64..1.0, w in 0.1f64..2.0) {
            let m = GaussianMixtureField::single(1.0, vec![c], w).unwrap();
            let f = SpectralGridField::from_gaussian(&m, grid(1, 1.0)).unwrap();
            let a = f.apply_heat_multiplier(t).unwrap().bessel_apply(s).band_project(1.0, Band::Low).unwrap();
            let b = f.band_project(1.0, Band::Low).unwrap().bessel_apply(s).apply_heat_multiplier(t).unwrap();
            let n = f.coeffs().len();
            for i in 0..n {
                prop_assert!((a.coeffs()[i] - b.coeffs()[i]).norm() <= 1e-14 * a.coeffs()[i].norm() + 1e-300);
                // real field: f̂(-ξ) = conj f̂(ξ)
                prop_assert!((a.coeffs()[i] - a.coeffs()[n - 1 - i].conj()).norm() <= 1e-14 * a.coeffs()[i].norm() + 1e-300);
            }
        }
    }
}
