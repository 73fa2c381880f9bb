//! The sampling basis `f_{N,n}(x) = Π_j sinc(π(N x_j - n_j))`, lattice index sets,
//! sample vectors and band-limited synthesis.

use std::f64::consts::PI;
use std::fmt;
use std::io::{BufRead, Write};
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gaussian_field::{GaussianMixtureField, MAX_DIM};
use crate::quadrature::Certified;
use crate::report::BoundReport;
use crate::spectral_field::{Band, FrequencyGrid, GridSpec, SpectralGridField};
use crate::tensor::{contract_all, unflatten, Matrix};

/// Largest cube index radius an adaptive policy will grow to.
pub const MAX_ADAPTIVE_INDEX: i64 = 4096;

#[inline]
fn sinc_pi(t: f64) -> f64 {
    if t == 0.0 {
        1.0
    } else {
        (PI * t).sin() / (PI * t)
    }
}

/// `f_{N,n}(x)`.
pub fn sinc_eval(n_density: f64, n: &[i64], x: &[f64]) -> f64 {
    n.iter().zip(x).map(|(&k, &xj)| sinc_pi(n_density * xj - k as f64)).product()
}

/// Fourier transform of `f_{N,n}`: `(2π)^{-d/2} N^{-d} e^{-i(n/N)·ξ}` on the closed cube
/// `Q_{πN}`, zero outside.
pub fn sinc_fourier(n_density: f64, n: &[i64], xi: &[f64]) -> Complex64 {
    let edge = PI * n_density;
    if xi.iter().any(|v| v.abs() > edge) {
        return Complex64::new(0.0, 0.0);
    }
    let d = n.len() as f64;
    let phase: f64 = n.iter().zip(xi).map(|(&k, &v)| k as f64 * v).sum::<f64>() / n_density;
    Complex64::from_polar((2.0 * PI).powf(-d / 2.0) * n_density.powf(-d), -phase)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum IndexShape {
    /// `max_j |n_j| ≤ max_index`.
    Cube { max_index: i64 },
    /// `|n/N| < radius` (strict).
    Ball { radius: f64 },
    /// `|n| ≤ radius` in index units.
    IntegerBall { radius: f64 },
    /// A cube grown until the omitted samples carry at most `tail_bound` in ℓ².
    Adaptive { max_index: i64, tail_bound: f64 },
}

impl fmt::Display for IndexShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Cube { max_index } => write!(f, "cube:{max_index}"),
            Self::Ball { radius } => write!(f, "ball:{radius}"),
            Self::IntegerBall { radius } => write!(f, "intball:{radius}"),
            Self::Adaptive { max_index, .. } => write!(f, "adaptive:{max_index}"),
        }
    }
}

/// A finite set of lattice indices `n ∈ ℤ^d`, in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct LatticeIndexSet {
    dim: usize,
    n_density: f64,
    shape: IndexShape,
    members: Vec<[i64; MAX_DIM]>,
}

impl LatticeIndexSet {
    fn build(dim: usize, n_density: f64, shape: IndexShape, reach: i64, keep: impl Fn(&[i64]) -> bool) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::input(format!("index sets support d = 1..=3, got {dim}")));
        }
        if !(n_density > 0.0) || !n_density.is_finite() {
            return Err(Error::input("lattice density N must be positive"));
        }
        let side = (2 * reach + 1) as usize;
        let shape_v = vec![side; dim];
        let total = side.pow(dim as u32);
        let mut members = Vec::new();
        let mut idx = [0usize; MAX_DIM];
        for flat in 0..total {
            unflatten(flat, &shape_v, &mut idx[..dim]);
            let mut n = [0i64; MAX_DIM];
            for j in 0..dim {
                n[j] = idx[j] as i64 - reach;
            }
            if keep(&n[..dim]) {
                members.push(n);
            }
        }
        Ok(Self { dim, n_density, shape, members })
    }

    pub fn cube(dim: usize, n_density: f64, max_index: i64) -> Result<Self> {
        if max_index < 0 {
            return Err(Error::input("cube index radius must be nonnegative"));
        }
        Self::build(dim, n_density, IndexShape::Cube { max_index }, max_index, |_| true)
    }

    /// `{n : |n/N| < r}`.
    pub fn ball(dim: usize, n_density: f64, radius: f64) -> Result<Self> {
        if !(radius >= 0.0) {
            return Err(Error::input("ball radius must be nonnegative"));
        }
        let reach = (radius * n_density).ceil() as i64;
        let r2 = radius * radius;
        Self::build(dim, n_density, IndexShape::Ball { radius }, reach, |n| {
            n.iter().map(|&k| (k as f64 / n_density).powi(2)).sum::<f64>() < r2
        })
    }

    /// `{n : |n| ≤ G}`.
    pub fn integer_ball(dim: usize, n_density: f64, radius: f64) -> Result<Self> {
        if !(radius >= 0.0) || !radius.is_finite() {
            return Err(Error::input("index ball radius must be finite and nonnegative"));
        }
        let reach = radius.floor() as i64;
        let r2 = radius * radius;
        Self::build(dim, n_density, IndexShape::IntegerBall { radius }, reach, |n| {
            n.iter().map(|&k| (k * k) as f64).sum::<f64>() <= r2
        })
    }

    pub fn adaptive(dim: usize, n_density: f64, max_index: i64, tail_bound: f64) -> Result<Self> {
        Self::build(dim, n_density, IndexShape::Adaptive { max_index, tail_bound }, max_index, |_| true)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn density(&self) -> f64 {
        self.n_density
    }
    pub fn shape(&self) -> IndexShape {
        self.shape
    }
    pub fn len(&self) -> usize {
        self.members.len()
    }
    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
    pub fn member(&self, k: usize) -> &[i64] {
        &self.members[k][..self.dim]
    }
    pub fn iter(&self) -> impl Iterator<Item = &[i64]> + '_ {
        self.members.iter().map(move |m| &m[..self.dim])
    }
    pub fn point(&self, k: usize) -> Vec<f64> {
        self.member(k).iter().map(|&v| v as f64 / self.n_density).collect()
    }

    /// Radius of the smallest index cube containing every member.
    pub fn bounding_index(&self) -> i64 {
        self.members.iter().flat_map(|m| m[..self.dim].iter().map(|v| v.abs())).max().unwrap_or(0)
    }

    /// Radius of the largest index cube contained in the set (`-1` if none).
    pub fn inner_cube_index(&self) -> i64 {
        let d = self.dim as f64;
        match self.shape {
            IndexShape::Cube { max_index } | IndexShape::Adaptive { max_index, .. } => max_index,
            IndexShape::Ball { radius } => {
                let mut m = (radius * self.n_density / d.sqrt()).floor() as i64;
                while m >= 0 && d.sqrt() * m as f64 / self.n_density >= radius {
                    m -= 1;
                }
                m
            }
            IndexShape::IntegerBall { radius } => (radius / d.sqrt()).floor() as i64,
        }
    }

    pub fn contains(&self, n: &[i64]) -> bool {
        self.members.binary_search_by(|m| m[..self.dim].cmp(n)).is_ok()
    }
}

/// Real samples on a lattice index set with a certified ℓ² bound on the omitted samples.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleVector {
    index_set: LatticeIndexSet,
    values: Vec<f64>,
    tail_bound: f64,
}

impl SampleVector {
    pub fn new(index_set: LatticeIndexSet, values: Vec<f64>, tail_bound: f64) -> Result<Self> {
        if values.len() != index_set.len() {
            return Err(Error::input(format!("{} values for {} indices", values.len(), index_set.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("sample values must be finite"));
        }
        if !(tail_bound >= 0.0) {
            return Err(Error::input("sample tail bound must be nonnegative"));
        }
        Ok(Self { index_set, values, tail_bound })
    }

    pub fn from_fn<F>(index_set: LatticeIndexSet, tail_bound: f64, f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        let values = (0..index_set.len()).into_par_iter().map(|k| f(&index_set.point(k))).collect();
        Self::new(index_set, values, tail_bound)
    }

    pub fn index_set(&self) -> &LatticeIndexSet {
        &self.index_set
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn tail_bound(&self) -> f64 {
        self.tail_bound
    }
    pub fn dim(&self) -> usize {
        self.index_set.dim()
    }
    pub fn density(&self) -> f64 {
        self.index_set.density()
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// ℓ² norm of the full (untruncated) sequence, certified by the tail bound.
    pub fn full_l2_norm(&self) -> Certified {
        let v = self.l2_norm();
        Certified::new(v, (v * v + self.tail_bound * self.tail_bound).sqrt() - v)
    }

    /// CSV: a `# samples` header line, then `n_1..n_d,value`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let set = &self.index_set;
        writeln!(
            out,
            "# samples dim={} density={:.16e} shape={} tail_bound={:.16e}",
            set.dim(),
            set.density(),
            set.shape(),
            self.tail_bound
        )?;
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (1..=set.dim()).map(|j| format!("n_{j}")).collect();
        header.push("value".into());
        w.write_record(&header)?;
        for (n, v) in set.iter().zip(&self.values) {
            let mut row: Vec<String> = n.iter().map(|k| k.to_string()).collect();
            row.push(format!("{v:.16e}"));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the CSV written by [`Self::write_csv`]. The index set is rebuilt from the
    /// header and every row must name its members in order.
    pub fn read_csv<R: BufRead>(mut input: R) -> Result<Self> {
        let mut first = String::new();
        input.read_line(&mut first)?;
        let header = first.trim().strip_prefix("# samples").ok_or_else(|| Error::Parse("missing '# samples' header line".into()))?;
        let (mut dim, mut density, mut shape, mut tail) = (None, None, None, 0.0);
        for kv in header.split_whitespace() {
            let (k, v) = kv.split_once('=').ok_or_else(|| Error::Parse(format!("bad header item {kv}")))?;
            match k {
                "dim" => dim = Some(v.parse::<usize>().map_err(|e| Error::Parse(format!("dim: {e}")))?),
                "density" => density = Some(v.parse::<f64>().map_err(|e| Error::Parse(format!("density: {e}")))?),
                "shape" => shape = Some(v.to_string()),
                "tail_bound" => tail = v.parse::<f64>().map_err(|e| Error::Parse(format!("tail_bound: {e}")))?,
                other => return Err(Error::Parse(format!("unknown header key {other}"))),
            }
        }
        let dim = dim.ok_or_else(|| Error::Parse("header lacks dim".into()))?;
        let density = density.ok_or_else(|| Error::Parse("header lacks density".into()))?;
        let shape = shape.ok_or_else(|| Error::Parse("header lacks shape".into()))?;
        let (kind, arg) = shape.split_once(':').ok_or_else(|| Error::Parse(format!("bad shape {shape}")))?;
        let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(format!("shape argument: {e}")));
        let set = match kind {
            "cube" => LatticeIndexSet::cube(dim, density, num(arg)? as i64)?,
            "ball" => LatticeIndexSet::ball(dim, density, num(arg)?)?,
            "intball" => LatticeIndexSet::integer_ball(dim, density, num(arg)?)?,
            "adaptive" => LatticeIndexSet::adaptive(dim, density, num(arg)? as i64, tail)?,
            other => return Err(Error::Parse(format!("unknown index shape {other}"))),
        };
        let mut reader = csv::Reader::from_reader(input);
        let mut values = Vec::with_capacity(set.len());
        for (k, rec) in reader.records().enumerate() {
            let rec = rec?;
            if rec.len() != dim + 1 || k >= set.len() {
                return Err(Error::Parse(format!("row {k}: does not match the declared index set")));
            }
            for j in 0..dim {
                let nj: i64 = rec[j].trim().parse().map_err(|e| Error::Parse(format!("row {k}: {e}")))?;
                if nj != set.member(k)[j] {
                    return Err(Error::Parse(format!("row {k}: index out of order or outside the set")));
                }
            }
            values.push(rec[dim].trim().parse::<f64>().map_err(|e| Error::Parse(format!("row {k}: {e}")))?);
        }
        Self::new(set, values, tail)
    }
}

/// The band-limited field `Σ a_n f_{N,n}`.
#[derive(Clone, Debug, PartialEq)]
pub struct SincSeries {
    samples: SampleVector,
}

/// Builds the sinc series of a sample vector at its own density.
pub fn synthesize(n_density: f64, samples: SampleVector) -> Result<SincSeries> {
    if (samples.density() - n_density).abs() > 1e-14 * n_density {
        return Err(Error::input(format!(
            "samples were taken at density {} but synthesis requested at {n_density}",
            samples.density()
        )));
    }
    Ok(SincSeries { samples })
}

impl SincSeries {
    pub fn density(&self) -> f64 {
        self.samples.density()
    }
    pub fn samples(&self) -> &SampleVector {
        &self.samples
    }
    pub fn dim(&self) -> usize {
        self.samples.dim()
    }

    /// `‖Σ a_n f_{N,n}‖ = N^{-d/2} ‖a‖`, exact by orthogonality. The certificate is the
    /// contribution of the samples omitted by truncation.
    pub fn l2_norm(&self) -> Certified {
        let scale = self.density().powf(-(self.dim() as f64) / 2.0);
        let full = self.samples.full_l2_norm();
        Certified::new(scale * full.value, scale * full.certificate)
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let n = self.density();
        self.samples.index_set.iter().zip(&self.samples.values).map(|(k, a)| a * sinc_eval(n, k, x)).sum()
    }

    pub fn fourier(&self, xi: &[f64]) -> Complex64 {
        let n = self.density();
        self.samples.index_set.iter().zip(&self.samples.values).map(|(k, a)| *a * sinc_fourier(n, k, xi)).sum()
    }

    /// Exact Fourier form on the nodes of `grid`, evaluated separably over the bounding
    /// index cube. The grid must have `±πN` as panel boundaries.
    pub fn to_spectral(&self, grid: Arc<FrequencyGrid>) -> Result<SpectralGridField> {
        let d = self.dim();
        Error::check_dim(grid.dim(), d)?;
        let n_density = self.density();
        if !grid.is_aligned(n_density) {
            return Err(Error::GridAlignment(format!("grid is not aligned with the band edge of N = {n_density}")));
        }
        let m = self.samples.index_set.bounding_index();
        let side = (2 * m + 1) as usize;
        let cube_shape = vec![side; d];
        let mut data = vec![Complex64::new(0.0, 0.0); side.pow(d as u32)];
        for (k, a) in self.samples.index_set.iter().zip(&self.samples.values) {
            let mut flat = 0;
            for &kj in k {
                flat = flat * side + (kj + m) as usize;
            }
            data[flat] = Complex64::new(*a, 0.0);
        }
        let keep = grid.in_band_axis(n_density);
        let nodes = grid.axis_nodes();
        let norm = (2.0 * PI).powf(-0.5) / n_density;
        let mat = Matrix::from_fn(keep.len(), side, |r, c| {
            Complex64::from_polar(norm, -((c as i64 - m) as f64) * nodes[keep[r]] / n_density)
        });
        let mats = vec![mat; d];
        let (band, band_shape) = contract_all(data, &cube_shape, &mats);
        let full = grid.shape();
        let mut coeffs = vec![Complex64::new(0.0, 0.0); grid.len()];
        let mut idx = [0usize; MAX_DIM];
        for (flat, v) in band.into_iter().enumerate() {
            unflatten(flat, &band_shape, &mut idx[..d]);
            let mut dst = 0;
            for axis in 0..d {
                dst = dst * full[axis] + keep[idx[axis]];
            }
            coeffs[dst] = v;
        }
        SpectralGridField::from_parts(grid, coeffs, 0.0, None)
    }
}

/// How many lattice samples to take.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SamplePolicy {
    Cube(i64),
    Ball(f64),
    IntegerBall(f64),
    /// Grow a cube until the certified omitted ℓ² mass is at most `tol`.
    Adaptive { tol: f64 },
}

impl SamplePolicy {
    pub fn name(&self) -> String {
        match self {
            Self::Cube(m) => format!("cube:{m}"),
            Self::Ball(r) => format!("ball:{r}"),
            Self::IntegerBall(g) => format!("intball:{g}"),
            Self::Adaptive { tol } => format!("adaptive:{tol:e}"),
        }
    }

    fn fixed_set(&self, dim: usize, n_density: f64) -> Option<Result<LatticeIndexSet>> {
        match *self {
            Self::Cube(m) => Some(LatticeIndexSet::cube(dim, n_density, m)),
            Self::Ball(r) => Some(LatticeIndexSet::ball(dim, n_density, r)),
            Self::IntegerBall(g) => Some(LatticeIndexSet::integer_ball(dim, n_density, g)),
            Self::Adaptive { .. } => None,
        }
    }
}

/// Source of a certified bound on omitted samples `Σ_{max|n_j| > m} |f(n/N)|²`.
#[derive(Clone, Debug)]
pub enum SampleEnvelope {
    /// The samples are those of this Gaussian mixture.
    Gaussian(GaussianMixtureField),
    /// The samples are those of the low band part of this Gaussian mixture at the
    /// sampling density; the difference is bounded through the aliasing cells.
    BandLimitedGaussian(GaussianMixtureField),
    /// Band-limited field whose total `Σ|f(n/N)|² = N^d ‖f‖²` is known; the tail is the
    /// deficit, padded for rounding.
    Parseval { norm_sq: f64 },
}

impl SampleEnvelope {
    fn tail(&self, n_density: f64, inner_index: i64, partial_sq: f64) -> f64 {
        match self {
            Self::Gaussian(mix) => {
                if inner_index < 0 {
                    return mix.lattice_tail_bound(n_density, -1);
                }
                mix.lattice_tail_bound(n_density, inner_index)
            }
            Self::BandLimitedGaussian(mix) => {
                let d = mix.dim() as f64;
                mix.lattice_tail_bound(n_density, inner_index) + n_density.powf(d / 2.0) * mix.alias_cell_l2_sum(n_density)
            }
            Self::Parseval { norm_sq } => {
                let total = *norm_sq;
                (total - partial_sq).max(0.0).sqrt() + (1e-13 * total).sqrt()
            }
        }
    }

    fn scale_norm(&self, n_density: f64, dim: usize) -> Self {
        match self {
            Self::Parseval { norm_sq } => Self::Parseval { norm_sq: norm_sq * n_density.powi(dim as i32) },
            other => other.clone(),
        }
    }
}

/// Samples `mix(n/N)` under a policy, with the exact lattice tail bound.
pub fn sample_gaussian(mix: &GaussianMixtureField, n_density: f64, policy: SamplePolicy) -> Result<SampleVector> {
    let d = mix.dim();
    let set = match policy.fixed_set(d, n_density) {
        Some(set) => set?,
        None => {
            let SamplePolicy::Adaptive { tol } = policy else { unreachable!() };
            let (m, tail) = mix.adaptive_lattice_radius(n_density, tol);
            if tail > tol {
                return Err(Error::Certification { what: "lattice sample tail".into(), value: m as f64, certificate: tail, tolerance: tol });
            }
            LatticeIndexSet::adaptive(d, n_density, m, tail)?
        }
    };
    let tail = match set.shape() {
        IndexShape::Adaptive { tail_bound, .. } => tail_bound,
        _ => mix.lattice_tail_bound(n_density, set.inner_cube_index()),
    };
    SampleVector::from_fn(set, tail, |x| mix.value(x))
}

/// Samples of a spectral field at `n/N`, optionally of its low band part at `band`.
///
/// `envelope` certifies the omitted samples. With `band = Some(N)` the values are those
/// of `χ_{≤N}(D) f`, which is the sequence the feedback law needs.
pub fn sample_spectral(
    field: &SpectralGridField,
    n_density: f64,
    policy: SamplePolicy,
    envelope: &SampleEnvelope,
    band: Option<f64>,
) -> Result<SampleVector> {
    let d = field.dim();
    let envelope = envelope.scale_norm(n_density, d);
    let take = |set: LatticeIndexSet| -> Result<(LatticeIndexSet, Vec<f64>)> {
        let m = set.bounding_index();
        let cube = field.values_on_lattice(n_density, m, band)?;
        let side = (2 * m + 1) as usize;
        let values = set
            .iter()
            .map(|n| {
                let flat = n.iter().fold(0usize, |acc, &k| acc * side + (k + m) as usize);
                cube[flat].re
            })
            .collect();
        Ok((set, values))
    };
    let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
    match policy.fixed_set(d, n_density) {
        Some(set) => {
            let inner = set?.inner_cube_index();
            let (set, values) = take(policy.fixed_set(d, n_density).unwrap()?)?;
            let tail = envelope.tail(n_density, inner, sq(&values));
            SampleVector::new(set, values, tail)
        }
        None => {
            let SamplePolicy::Adaptive { tol } = policy else { unreachable!() };
            let mut m = match &envelope {
                SampleEnvelope::Gaussian(mix) | SampleEnvelope::BandLimitedGaussian(mix) => mix.adaptive_lattice_radius(n_density, tol).0,
                SampleEnvelope::Parseval { .. } => 2,
            };
            loop {
                let (_, values) = take(LatticeIndexSet::cube(d, n_density, m)?)?;
                let tail = envelope.tail(n_density, m, sq(&values));
                if tail <= tol {
                    let set = LatticeIndexSet::adaptive(d, n_density, m, tail)?;
                    return SampleVector::new(set, values, tail);
                }
                if m >= MAX_ADAPTIVE_INDEX {
                    return Err(Error::Certification { what: "spectral sample tail".into(), value: m as f64, certificate: tail, tolerance: tol });
                }
                m = (m + m / 2 + 1).min(MAX_ADAPTIVE_INDEX);
            }
        }
    }
}

/// Checks the sampling identity for a band-limited field: the reconstruction
/// `f - Σ f(n/N) f_{N,n}` and the sampling Parseval defect `|‖f‖² - N^{-d} Σ|f(n/N)|²|`.
///
/// The grid must resolve phases out to the lattice extent of the index set.
pub fn shannon_check(field: &SpectralGridField, n_density: f64, policy: SamplePolicy, envelope: &SampleEnvelope) -> Result<BoundReport> {
    let high = field.band_project(n_density, Band::High)?;
    if high.tail_bound() > 0.0 || high.coeffs().iter().any(|c| c.norm() > 0.0) {
        return Err(Error::precondition(format!("field has spectral mass outside Q_(πN) for N = {n_density}; it is not band-limited")));
    }
    let d = field.dim();
    let samples = sample_spectral(field, n_density, policy, envelope, None)?;
    let extent = samples.index_set().bounding_index() as f64 / n_density;
    let needed = GridSpec::default().resolving(field.grid().band(), extent).panels_per_cell;
    if field.grid().spec().panels_per_cell < needed {
        return Err(Error::precondition(format!(
            "grid has {} panels per cell but lattice extent {extent} needs {needed}; rebuild it with GridSpec::resolving",
            field.grid().spec().panels_per_cell
        )));
    }
    let tail = samples.tail_bound();
    let scale = n_density.powf(-(d as f64) / 2.0);
    let series = synthesize(n_density, samples)?;
    let spec = series.to_spectral(field.grid().clone())?;
    let diff = field.combine(Complex64::new(1.0, 0.0), &spec, Complex64::new(-1.0, 0.0))?;
    let residual = diff.l2_norm_sq_in_grid().sqrt();
    let norm_sq = field.l2_norm_sq_in_grid();
    let sample_sq = series.samples().values().iter().map(|v| v * v).sum::<f64>() * scale * scale;
    let defect = (norm_sq - sample_sq).abs();
    let rounding = 1e-12 * norm_sq.sqrt();
    let cert = scale * tail + rounding;
    let imag = field.values_on_lattice(n_density, 0, None)?[0].im.abs();
    Ok(BoundReport::explicit("shannon", residual, cert, 0.0, "spectral")
        .param("d", d as f64)
        .param("N", n_density)
        .label("policy", policy.name())
        .extra("parseval_defect", defect)
        .extra("parseval_certificate", scale * scale * tail * tail + 2.0 * rounding * norm_sq.sqrt())
        .extra("sample_tail", tail)
        .extra("max_index", series.samples().index_set().bounding_index() as f64)
        .extra("imag_at_origin", imag))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn sinc_eval_examples() {
        assert_eq!(sinc_eval(1.0, &[0], &[0.0]), 1.0);
        assert_eq!(sinc_eval(2.0, &[3, -1], &[1.5, -0.5]), 1.0);
        assert!(sinc_eval(1.0, &[0], &[2.0]).abs() < 1e-15);
        assert!(sinc_eval(2.0, &[1, 1], &[0.5, 1.0]).abs() < 1e-15);
        assert_relative_eq!(sinc_eval(1.0, &[0], &[0.5]), 2.0 / PI, max_relative = 1e-15);
    }

    #[test]
    fn sinc_fourier_examples() {
        assert_relative_eq!(sinc_fourier(2.0, &[0, 0], &[0.0, 0.0]).re, 1.0 / (2.0 * PI) / 4.0, max_relative = 1e-15);
        // closed cube: the edge belongs to the support
        assert!(sinc_fourier(1.0, &[0], &[PI]).norm() > 0.0);
        assert_eq!(sinc_fourier(1.0, &[0], &[PI * (1.0 + 1e-12)]).norm(), 0.0);
    }

    #[test]
    fn sinc_fourier_energy_and_inverse_transform() {
        for (n_density, d) in [(1.0, 1), (2.5, 1), (1.5, 2)] {
            let grid = Arc::new(FrequencyGrid::new(d, n_density, GridSpec::default().resolving(n_density, 4.0)).unwrap());
            let n: Vec<i64> = (0..d as i64).map(|j| 2 - j).collect();
            let f = SpectralGridField::from_fn(grid, |xi| sinc_fourier(n_density, &n, xi), 0.0, None).unwrap();
            assert_relative_eq!(f.l2_norm_sq_in_grid(), n_density.powi(-(d as i32)), max_relative = 1e-12);
            let mut state = 0.123f64;
            for _ in 0..10 {
                let x: Vec<f64> = (0..d)
                    .map(|_| {
                        state = (state * 7919.0 + 0.317).fract();
                        3.0 * state - 1.5
                    })
                    .collect();
                let (v, _) = f.point_value(&x).unwrap();
                assert!((v.re - sinc_eval(n_density, &n, &x)).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn index_set_shapes() {
        let b = LatticeIndexSet::ball(1, 2.0, 1.0).unwrap();
        // |n/2| < 1 → n ∈ {-1, 0, 1}; ties excluded
        assert_eq!(b.iter().map(|n| n[0]).collect::<Vec<_>>(), vec![-1, 0, 1]);
        let b2 = LatticeIndexSet::ball(2, 1.0, 1.5).unwrap();
        assert_eq!(b2.len(), 9);
        assert!(b2.contains(&[1, 1]) && !b2.contains(&[2, 0]));
        assert_eq!(b2.inner_cube_index(), 1);
        let g = LatticeIndexSet::integer_ball(2, 3.0, 1.0).unwrap();
        assert_eq!(g.len(), 5);
        let c = LatticeIndexSet::cube(3, 1.0, 1).unwrap();
        assert_eq!(c.len(), 27);
        assert_eq!(c.bounding_index(), 1);
    }

    #[test]
    fn single_sample_synthesis_is_the_basis_function() {
        for d in 1..=2 {
            let n_density = 1.7;
            let set = LatticeIndexSet::cube(d, n_density, 0).unwrap();
            let s = synthesize(n_density, SampleVector::new(set, vec![1.0], 0.0).unwrap()).unwrap();
            assert_relative_eq!(s.l2_norm().value, n_density.powf(-(d as f64) / 2.0), max_relative = 1e-15);
            let x = vec![0.23; d];
            assert_eq!(s.value(&x), sinc_eval(n_density, &vec![0; d], &x));
        }
    }

    #[test]
    fn scaled_basis_is_orthonormal_under_quadrature() {
        for d in 1..=2 {
            for n_density in [1.0, 2.5] {
                let grid = Arc::new(FrequencyGrid::new(d, n_density, GridSpec { outer_cells: 0, ..GridSpec::default() }.resolving(n_density, 6.0 / n_density)).unwrap());
                let scale = n_density.powf(d as f64 / 2.0);
                let idx = LatticeIndexSet::cube(d, n_density, 3).unwrap();
                let fields: Vec<SpectralGridField> = idx
                    .iter()
                    .map(|n| SpectralGridField::from_fn(grid.clone(), |xi| sinc_fourier(n_density, n, xi) * scale, 0.0, None).unwrap())
                    .collect();
                for (i, a) in fields.iter().enumerate() {
                    for (j, b) in fields.iter().enumerate().skip(i) {
                        let ip = a.inner_product(b).unwrap();
                        let target = if i == j { 1.0 } else { 0.0 };
                        assert!((ip - target).norm() < 1e-9, "d={d} N={n_density} {i},{j}: {ip}");
                    }
                }
            }
        }
    }

    #[test]
    fn twenty_sample_norm_matches_quadrature() {
        let n_density = 1.3;
        let set = LatticeIndexSet::ball(1, n_density, 7.5).unwrap();
        assert_eq!(set.len(), 19);
        let set = LatticeIndexSet::cube(1, n_density, 10).unwrap();
        let values: Vec<f64> = (0..set.len()).map(|k| ((k * 37 % 11) as f64 - 5.0) / 3.0).collect();
        let s = synthesize(n_density, SampleVector::new(set, values, 0.0).unwrap()).unwrap();
        let grid = Arc::new(FrequencyGrid::new(1, n_density, GridSpec::default().resolving(n_density, 10.0 / n_density)).unwrap());
        let f = s.to_spectral(grid).unwrap();
        assert_relative_eq!(f.l2_norm().value, s.l2_norm().value, max_relative = 1e-9);
        assert!(f.band_project(n_density, Band::High).unwrap().coeffs().iter().all(|c| c.norm() == 0.0));
        for x in [0.1, -2.2, 3.3] {
            let (v, _) = f.point_value(&[x]).unwrap();
            assert!((v.re - s.value(&[x])).abs() < 1e-9);
        }
    }

    #[test]
    fn synthesis_interpolates_and_checks_density() {
        let n_density = 2.0;
        let set = LatticeIndexSet::cube(2, n_density, 2).unwrap();
        let sv = SampleVector::from_fn(set, 0.0, |x| x[0] - 2.0 * x[1]).unwrap();
        assert!(synthesize(1.0, sv.clone()).is_err());
        let s = synthesize(n_density, sv.clone()).unwrap();
        for (k, n) in sv.index_set().iter().enumerate() {
            let x: Vec<f64> = n.iter().map(|&v| v as f64 / n_density).collect();
            assert!((s.value(&x) - sv.values()[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn sample_csv_round_trip() {
        let set = LatticeIndexSet::ball(2, 1.5, 1.2).unwrap();
        let sv = SampleVector::from_fn(set, 1e-9, |x| (x[0] + 0.3 * x[1]).sin()).unwrap();
        let mut buf = Vec::new();
        sv.write_csv(&mut buf).unwrap();
        let back = SampleVector::read_csv(std::io::Cursor::new(buf.clone())).unwrap();
        assert_eq!(back, sv);
        let broken = String::from_utf8(buf).unwrap().replacen("\n-1,", "\n-7,", 1);
        assert!(SampleVector::read_csv(std::io::Cursor::new(broken.into_bytes())).is_err());
    }

    #[test]
    fn gaussian_sampling_certifies_tail() {
        let mix = GaussianMixtureField::single(1.0, vec![0.4], 1.0).unwrap();
        let sv = sample_gaussian(&mix, 1.0, SamplePolicy::Adaptive { tol: 1e-10 }).unwrap();
        let brute: f64 = (-200..=200).map(|n: i64| mix.value(&[n as f64]).powi(2)).sum::<f64>().sqrt();
        assert!((sv.l2_norm() - brute).abs() <= sv.tail_bound() + 1e-15);
        let ball = sample_gaussian(&mix, 1.0, SamplePolicy::Ball(2.5)).unwrap();
        assert!((ball.l2_norm() - brute).abs() <= ball.tail_bound() + 1e-15);
    }

    fn low_band_gaussian(d: usize, n_density: f64, width: f64, extent: f64) -> (GaussianMixtureField, SpectralGridField) {
        let mix = GaussianMixtureField::single(1.0, vec![0.2; d], width).unwrap();
        let grid = Arc::new(FrequencyGrid::new(d, n_density, GridSpec::default().resolving(n_density, extent)).unwrap());
        let f = SpectralGridField::from_gaussian(&mix, grid).unwrap().band_project(n_density, Band::Low).unwrap();
        (mix, f)
    }

    #[test]
    fn shannon_check_on_basis_function() {
        let n_density = 1.0;
        let grid = Arc::new(FrequencyGrid::new(1, n_density, GridSpec::default().resolving(n_density, 8.0)).unwrap());
        let f = SpectralGridField::from_fn(grid, |xi| sinc_fourier(n_density, &[0], xi), 0.0, None).unwrap();
        let env = SampleEnvelope::Parseval { norm_sq: f.l2_norm_sq_in_grid() };
        let r = shannon_check(&f, n_density, SamplePolicy::Cube(8), &env).unwrap();
        assert!(r.extras["parseval_defect"] < 1e-9);
        assert!(r.measured < 1e-9);
    }

    #[test]
    fn shannon_check_on_low_band_gaussian_and_oversampling() {
        let (mix, f) = low_band_gaussian(1, 1.5, 1.0, 20.0);
        let env = SampleEnvelope::BandLimitedGaussian(mix.clone());
        let r = shannon_check(&f, 1.5, SamplePolicy::Adaptive { tol: 1e-8 }, &env).unwrap();
        assert!(r.measured < 1e-6, "{r:?}");
        assert!(r.extras["parseval_defect"] < 1e-6);
        // the same field is in the class at twice the density; rebuild the grid aligned there
        let grid = Arc::new(FrequencyGrid::new(1, 3.0, GridSpec::default().resolving(3.0, 20.0)).unwrap());
        let f2 = SpectralGridField::from_fn(
            grid,
            |xi| if xi[0].abs() < 1.5 * PI { mix.fourier(xi) } else { Complex64::new(0.0, 0.0) },
            0.0,
            None,
        )
        .unwrap();
        let env2 = SampleEnvelope::Parseval { norm_sq: f2.l2_norm_sq_in_grid() };
        let r2 = shannon_check(&f2, 3.0, SamplePolicy::Cube(60), &env2).unwrap();
        assert!(r2.measured < 1e-6, "{r2:?}");
    }

    #[test]
    fn shannon_check_rejects_broadband_fields() {
        let mix = GaussianMixtureField::single(1.0, vec![0.0], 0.1).unwrap();
        let grid = Arc::new(FrequencyGrid::new(1, 1.0, GridSpec::default()).unwrap());
        let f = SpectralGridField::from_gaussian(&mix, grid).unwrap();
        let env = SampleEnvelope::Gaussian(mix);
        assert!(matches!(shannon_check(&f, 1.0, SamplePolicy::Cube(4), &env), Err(Error::Precondition(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn synthesis_is_an_isometry_up_to_scale(values in proptest::collection::vec(-3.0f64..3.0, 9), n_density in 0.5f64..3.0) {
            let set = LatticeIndexSet::cube(2, n_density, 1).unwrap();
            let sv = SampleVector::new(set, values.clone(), 0.0).unwrap();
            let s = synthesize(n_density, sv).unwrap();
            let l2 = values.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!((s.l2_norm().value * n_density - l2).abs() <= 1e-12 * l2.max(1e-300));
            for (k, n) in s.samples().index_set().iter().enumerate() {
                let x: Vec<f64> = n.iter().map(|&v| v as f64 / n_density).collect();
                prop_assert!((s.value(&x) - values[k]).abs() < 1e-12);
            }
        }
    }
}
