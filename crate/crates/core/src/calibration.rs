//! Versioned table of empirically fitted bound constants.
//!
//! Each entry is keyed by dimension and bound id and carries the SHA-256 fingerprint of
//! the sweep that produced it. A constant is applied to a report only when the
//! fingerprint of the current standard sweep matches, so editing a sweep without
//! recalibrating leaves the affected reports unasserted instead of silently wrong.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus;
use crate::error::{Error, Result};
use crate::gaussian_field::GaussianMixtureField;
use crate::hs_analysis::{heat_local_bounds, hs_residual_gaussian, local_sup_bound};
use crate::impulse_control::{
    closed_loop_final, control_sobolev_norm, feedback_gain, threshold_density, window_threshold, windowed_closed_loop, ClosedLoopRun,
    FeedbackPolicy, FieldRef,
};
use crate::observability::{perturbed_residual, perturbed_sample_gap, residual, sample_l2_report};
use crate::perturbation::PerturbationRule;
use crate::report::BoundReport;
use crate::weak_window::{windowed_residual, WindowedExperiment};

/// Bumped whenever sweeps or the meaning of a constant change.
pub const ARTIFACT_VERSION: &str = "1";

/// Fitted constants are the largest observed ratio times this factor.
pub const SAFETY_MARGIN: f64 = 1.1;

/// Target accuracy used for every sweep point.
pub const CALIBRATION_TOL: f64 = 1e-6;

/// Closed-loop target used to fit the threshold constants.
pub const TARGET_EPS: f64 = 0.1;
const TARGET_T: f64 = 1.0;
const TARGET_TAU: f64 = 0.5;
/// Candidate grid `{k · step : 1 ≤ k ≤ count}` for threshold constants.
const GRID_STEP: f64 = 0.05;
const GRID_COUNT: usize = 80;
const RADIUS_GRID_COUNT: usize = 40;

const EMBEDDED: &str = include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/data/calibration.json"));

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundId {
    Residual,
    SampleL2,
    PerturbedResidual,
    PerturbedSampleGap,
    Window,
    ControlSobolev,
    ClosedLoop,
    /// Smallest `C₁` whose threshold density reaches the closed-loop target.
    ClosedLoopC1,
    /// Lexicographically smallest `(c_N, c_r)` reaching the windowed closed-loop target.
    WindowedClosedLoop,
    HsResidual,
    LocalSup,
    HeatLocalSup,
    HeatLocalGrad,
    HeatLattice,
}

impl BoundId {
    pub const ALL: [BoundId; 14] = [
        Self::Residual,
        Self::SampleL2,
        Self::PerturbedResidual,
        Self::PerturbedSampleGap,
        Self::Window,
        Self::ControlSobolev,
        Self::ClosedLoop,
        Self::ClosedLoopC1,
        Self::WindowedClosedLoop,
        Self::HsResidual,
        Self::LocalSup,
        Self::HeatLocalSup,
        Self::HeatLocalGrad,
        Self::HeatLattice,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Residual => "residual",
            Self::SampleL2 => "sample_l2",
            Self::PerturbedResidual => "perturbed_residual",
            Self::PerturbedSampleGap => "perturbed_sample_gap",
            Self::Window => "window",
            Self::ControlSobolev => "control_sobolev",
            Self::ClosedLoop => "closed_loop",
            Self::ClosedLoopC1 => "closed_loop_c1",
            Self::WindowedClosedLoop => "windowed_closed_loop",
            Self::HsResidual => "hs_residual",
            Self::LocalSup => "local_sup",
            Self::HeatLocalSup => "heat_local_sup",
            Self::HeatLocalGrad => "heat_local_grad",
            Self::HeatLattice => "heat_lattice",
        }
    }

    /// Dimensions with a standard sweep. The control family is fitted in one dimension.
    pub fn dims(self) -> &'static [usize] {
        match self {
            Self::ControlSobolev | Self::ClosedLoop | Self::ClosedLoopC1 | Self::WindowedClosedLoop => &[1],
            _ => &[1, 2],
        }
    }

    /// Whether the constant multiplies a bound form (as opposed to a threshold search).
    fn is_ratio_fit(self) -> bool {
        !matches!(self, Self::ClosedLoopC1 | Self::WindowedClosedLoop)
    }
}

impl fmt::Display for BoundId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BoundId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| Error::Parse(format!("unknown bound id `{s}`; expected one of {}", Self::ALL.map(|b| b.as_str()).join(", "))))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationEntry {
    pub dim: usize,
    pub bound: BoundId,
    pub constant: f64,
    pub max_ratio: f64,
    pub points: usize,
    pub fingerprint: String,
    #[serde(default)]
    pub extra: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTable {
    pub version: String,
    pub entries: BTreeMap<String, CalibrationEntry>,
}

/// Outcome of looking a constant up for a report.
#[derive(Clone, Debug, PartialEq)]
pub enum Lookup<'a> {
    Found(&'a CalibrationEntry),
    Missing,
    Stale,
}

fn key(d: usize, bound: BoundId) -> String {
    format!("d{d}/{bound}")
}

impl Default for CalibrationTable {
    fn default() -> Self {
        Self { version: ARTIFACT_VERSION.to_string(), entries: BTreeMap::new() }
    }
}

impl CalibrationTable {
    /// The table shipped with the library.
    pub fn embedded() -> Self {
        serde_json::from_str(EMBEDDED).expect("embedded calibration table is valid JSON")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("calibration table {}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("tables serialize");
        s.push('\n');
        s
    }

    /// Writes atomically through a temporary file in the same directory.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, self.to_json())?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn get(&self, d: usize, bound: BoundId) -> Option<&CalibrationEntry> {
        self.entries.get(&key(d, bound))
    }

    /// The entry for `(d, bound)` if its version and fingerprint match the current
    /// standard sweep.
    pub fn lookup(&self, d: usize, bound: BoundId) -> Lookup<'_> {
        match self.get(d, bound) {
            None => Lookup::Missing,
            Some(e) if self.version == ARTIFACT_VERSION && Some(&e.fingerprint) == standard_fingerprint(bound, d).as_ref() => {
                Lookup::Found(e)
            }
            Some(_) => Lookup::Stale,
        }
    }

    /// Applies the calibrated constant to a report that still carries an unknown one.
    /// Reports whose constant is missing or stale stay unasserted and are labelled.
    pub fn apply(&self, d: usize, report: BoundReport) -> BoundReport {
        if report.constant.is_some() {
            return report;
        }
        let Ok(bound) = report.bound.parse::<BoundId>() else {
            return report;
        };
        match self.lookup(d, bound) {
            Lookup::Found(e) => report.with_constant(e.constant, Some(e.fingerprint.clone())),
            Lookup::Missing => report.label("calibration", "missing"),
            Lookup::Stale => report.label("calibration", "stale"),
        }
    }

    /// `C₁` for the closed-loop threshold, with its fingerprint.
    pub fn closed_loop_c1(&self) -> Option<(f64, String)> {
        match self.lookup(1, BoundId::ClosedLoopC1) {
            Lookup::Found(e) => Some((e.constant, e.fingerprint.clone())),
            _ => None,
        }
    }

    /// `(c_N, c_r)` for the windowed closed-loop thresholds, with the fingerprint.
    pub fn windowed_thresholds(&self) -> Option<(f64, f64, String)> {
        match self.lookup(1, BoundId::WindowedClosedLoop) {
            Lookup::Found(e) => Some((e.constant, *e.extra.get("c_r")?, e.fingerprint.clone())),
            _ => None,
        }
    }
}

/// One point of a calibration sweep: a corpus field and named parameters.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepPoint {
    pub field: usize,
    pub params: BTreeMap<&'static str, f64>,
}

impl SweepPoint {
    fn get(&self, k: &str) -> f64 {
        self.params[k]
    }
}

/// Cartesian product of named parameter lists over every field.
fn product(fields: usize, axes: &[(&'static str, &[f64])]) -> Vec<SweepPoint> {
    let mut out = Vec::new();
    for field in 0..fields {
        let mut stack: Vec<BTreeMap<&'static str, f64>> = vec![BTreeMap::new()];
        for (name, values) in axes {
            stack = stack
                .into_iter()
                .flat_map(|m| {
                    values.iter().map(move |&v| {
                        let mut m = m.clone();
                        m.insert(*name, v);
                        m
                    })
                })
                .collect();
        }
        out.extend(stack.into_iter().map(|params| SweepPoint { field, params }));
    }
    out
}

/// Integer smoothness orders above `d/2` used for the H^s sweeps.
fn integer_orders(d: usize) -> [f64; 2] {
    let s0 = (d / 2 + 1) as f64;
    [s0, s0 + 1.0]
}

/// Standard sweep for `bound` in dimension `d` over `fields` fields, or `None` if the
/// bound is not fitted in that dimension. Threshold searches have no point sweep.
pub fn sweep(bound: BoundId, d: usize, fields: usize) -> Option<Vec<SweepPoint>> {
    if !bound.dims().contains(&d) {
        return None;
    }
    let half = d as f64 / 2.0;
    let points = match bound {
        BoundId::Residual | BoundId::SampleL2 => product(fields, &[("T", &[0.25, 1.0, 4.0]), ("N", &[1.0, 2.0, 4.0, 8.0])]),
        BoundId::PerturbedResidual | BoundId::PerturbedSampleGap => {
            product(fields, &[("T", &[0.25, 1.0, 4.0]), ("N", &[1.0, 2.0, 4.0]), ("eps", &[0.05, 0.1, 0.2])])
        }
        BoundId::Window => product(fields, &[("T", &[0.5, 1.0, 2.0]), ("N", &[1.0, 2.0]), ("r", &[2.0, 4.0, 8.0]), ("k", &[1.0, 2.0])]),
        BoundId::ControlSobolev => product(fields, &[("N", &[1.0, 2.0, 4.0]), ("s", &[half + 0.5, half + 1.0])]),
        BoundId::ClosedLoop => {
            let mut p = product(fields, &[("T", &[1.0]), ("tau", &[0.5]), ("N", &[1.0, 2.0, 3.0, 4.0])]);
            p.extend(product(fields, &[("T", &[2.0]), ("tau", &[1.0]), ("N", &[1.0, 2.0, 3.0])]));
            p
        }
        BoundId::HsResidual => product(fields, &[("T", &[0.25, 1.0]), ("N", &[1.0, 2.0, 4.0]), ("s", &integer_orders(d))]),
        BoundId::LocalSup => product(fields, &[("r", &[0.5, 1.0, 2.0]), ("s", &[half + 0.5, half + 1.0])]),
        BoundId::HeatLocalSup | BoundId::HeatLocalGrad | BoundId::HeatLattice => {
            product(fields, &[("T", &[0.25, 1.0, 4.0]), ("r", &[0.5, 1.0, 2.0])])
        }
        BoundId::ClosedLoopC1 | BoundId::WindowedClosedLoop => Vec::new(),
    };
    Some(points)
}

fn corpus_fields(d: usize, extra: &[GaussianMixtureField]) -> Vec<GaussianMixtureField> {
    let mut f: Vec<GaussianMixtureField> = corpus::standard_shapes(d).into_iter().map(|(_, f)| f).collect();
    f.extend(extra.iter().cloned());
    f
}

fn fingerprint(bound: BoundId, d: usize, fields: &[GaussianMixtureField]) -> Option<String> {
    let points = sweep(bound, d, fields.len())?;
    #[derive(Serialize)]
    struct Description<'a> {
        version: &'a str,
        bound: BoundId,
        d: usize,
        tol: f64,
        margin: f64,
        fields: Vec<String>,
        points: &'a [SweepPoint],
        search: Option<[f64; 6]>,
    }
    let search = (!bound.is_ratio_fit()).then_some([
        TARGET_EPS,
        TARGET_T,
        TARGET_TAU,
        GRID_STEP,
        GRID_COUNT as f64,
        RADIUS_GRID_COUNT as f64,
    ]);
    let desc = Description {
        version: ARTIFACT_VERSION,
        bound,
        d,
        tol: CALIBRATION_TOL,
        margin: SAFETY_MARGIN,
        fields: fields.iter().map(|f| f.to_record()).collect(),
        points: &points,
        search,
    };
    let json = serde_json::to_string(&desc).expect("descriptions serialize");
    Some(format!("{:x}", Sha256::digest(json.as_bytes())))
}

/// Fingerprint of the standard sweep for `(bound, d)`.
pub fn standard_fingerprint(bound: BoundId, d: usize) -> Option<String> {
    fingerprint(bound, d, &corpus_fields(d, &[]))
}

/// Runs one sweep point and returns the report for `bound`.
pub fn run_point(bound: BoundId, field: &GaussianMixtureField, p: &SweepPoint) -> Result<BoundReport> {
    let tol = CALIBRATION_TOL;
    match bound {
        BoundId::Residual => residual(field, p.get("T"), p.get("N"), tol),
        BoundId::SampleL2 => sample_l2_report(field, p.get("T"), p.get("N"), tol),
        BoundId::PerturbedResidual | BoundId::PerturbedSampleGap => {
            let rule = PerturbationRule::named("alternating", p.get("eps"), 0)?;
            if bound == BoundId::PerturbedResidual {
                perturbed_residual(field, p.get("T"), p.get("N"), &rule, tol)
            } else {
                perturbed_sample_gap(field, p.get("T"), p.get("N"), &rule, tol)
            }
        }
        BoundId::Window => {
            let exp = WindowedExperiment { u0: field.clone(), t: p.get("T"), n: p.get("N"), r: p.get("r"), k: p.get("k") as u32 };
            windowed_residual(&exp, tol)
        }
        BoundId::ControlSobolev => {
            let w = field.heat_evolve(0.5)?;
            let v = feedback_gain(FieldRef::Gaussian(&w), p.get("N"), FeedbackPolicy::default())?;
            control_sobolev_norm(&v, p.get("s"))
        }
        BoundId::ClosedLoop => closed_loop_final(&ClosedLoopRun::new(field.clone(), p.get("T"), p.get("tau"), p.get("N")), None, tol),
        BoundId::HsResidual => hs_residual_gaussian(&field.heat_evolve(p.get("T"))?, p.get("N"), p.get("s") as u32),
        BoundId::LocalSup => local_sup_bound(field, p.get("r"), p.get("s"), None).map(|(_, r)| r),
        BoundId::HeatLocalSup | BoundId::HeatLocalGrad | BoundId::HeatLattice => heat_local_bounds(field, p.get("T"), p.get("r"), tol)?
            .into_iter()
            .find(|r| r.bound == bound.as_str())
            .ok_or_else(|| Error::Calibration(format!("heat_local_bounds returned no {bound} report"))),
        BoundId::ClosedLoopC1 | BoundId::WindowedClosedLoop => Err(Error::Calibration(format!("{bound} is fitted by a threshold search"))),
    }
}

fn candidates(count: usize) -> impl Iterator<Item = f64> {
    (1..=count).map(|k| k as f64 * GRID_STEP)
}

/// Whether every field reaches `‖y(T)‖ ≤ ε‖y0‖` (beyond its certificate) at the density
/// threshold for `c1`.
fn c1_reaches_target(fields: &[GaussianMixtureField], c1: f64) -> Result<bool> {
    let n = threshold_density(c1, TARGET_T, TARGET_TAU, TARGET_EPS);
    let results: Vec<Result<bool>> = fields
        .par_iter()
        .map(|f| {
            let r = closed_loop_final(&ClosedLoopRun::new(f.clone(), TARGET_T, TARGET_TAU, n), None, CALIBRATION_TOL)?;
            Ok(r.measured + r.certificate <= TARGET_EPS * f.l2_norm())
        })
        .collect();
    results.into_iter().try_fold(true, |acc, r| Ok(acc && r?))
}

fn windowed_reaches_target(fields: &[GaussianMixtureField], cn: f64, cr: f64) -> Result<bool> {
    let n = threshold_density(cn, TARGET_T, TARGET_TAU, TARGET_EPS);
    let r = window_threshold(cr, 1, TARGET_T, TARGET_EPS);
    let results: Vec<Result<bool>> = fields
        .par_iter()
        .map(|f| {
            let run = ClosedLoopRun::new(f.clone(), TARGET_T, TARGET_TAU, n).with_window(r);
            let rep = windowed_closed_loop(&run, None, CALIBRATION_TOL)?;
            Ok(rep.measured + rep.certificate <= TARGET_EPS * f.l2_norm())
        })
        .collect();
    results.into_iter().try_fold(true, |acc, r| Ok(acc && r?))
}

fn search_c1(fields: &[GaussianMixtureField]) -> Result<f64> {
    for c in candidates(GRID_COUNT) {
        if c1_reaches_target(fields, c)? {
            return Ok(c);
        }
    }
    Err(Error::Calibration(format!("no C1 up to {} reaches the closed-loop target", GRID_COUNT as f64 * GRID_STEP)))
}

fn search_windowed(fields: &[GaussianMixtureField]) -> Result<(f64, f64)> {
    let widest = RADIUS_GRID_COUNT as f64 * GRID_STEP;
    for cn in candidates(GRID_COUNT) {
        // the widest window is the best case for this density; skip when it fails
        if !windowed_reaches_target(fields, cn, widest)? {
            continue;
        }
        for cr in candidates(RADIUS_GRID_COUNT) {
            if windowed_reaches_target(fields, cn, cr)? {
                return Ok((cn, cr));
            }
        }
    }
    Err(Error::Calibration("no (c_N, c_r) on the grid reaches the windowed closed-loop target".into()))
}

/// Fits one `(bound, d)` entry over the standard corpus plus `extra` fields.
pub fn calibrate_entry(bound: BoundId, d: usize, extra: &[GaussianMixtureField]) -> Result<CalibrationEntry> {
    let fields = corpus_fields(d, extra);
    let fp = fingerprint(bound, d, &fields).ok_or_else(|| Error::Calibration(format!("{bound} has no sweep in dimension {d}")))?;
    if let Some(e) = extra.iter().find(|f| f.dim() != d) {
        return Err(Error::Dimension { expected: d, got: e.dim() });
    }
    let mut extra_out = BTreeMap::new();
    let (constant, max_ratio, points) = match bound {
        BoundId::ClosedLoopC1 => {
            let c = search_c1(&fields)?;
            extra_out.insert("threshold_density".into(), threshold_density(c, TARGET_T, TARGET_TAU, TARGET_EPS));
            (c, c, fields.len())
        }
        BoundId::WindowedClosedLoop => {
            let (cn, cr) = search_windowed(&fields)?;
            extra_out.insert("c_r".into(), cr);
            extra_out.insert("threshold_density".into(), threshold_density(cn, TARGET_T, TARGET_TAU, TARGET_EPS));
            extra_out.insert("threshold_radius".into(), window_threshold(cr, 1, TARGET_T, TARGET_EPS));
            (cn, cn, fields.len())
        }
        _ => {
            let points = sweep(bound, d, fields.len()).expect("checked by fingerprint");
            let reports: Vec<Result<BoundReport>> = points.par_iter().map(|p| run_point(bound, &fields[p.field], p)).collect();
            let mut max_ratio = 0.0f64;
            for (p, r) in points.iter().zip(reports) {
                let r = r.map_err(|e| Error::Calibration(format!("d{d}/{bound}: point {:?} on field {} failed: {e}", p.params, p.field)))?;
                let needed = r.required_constant().unwrap_or(0.0);
                if !needed.is_finite() {
                    return Err(Error::Calibration(format!("d{d}/{bound}: point {:?} needs an infinite constant", p.params)));
                }
                max_ratio = max_ratio.max(needed);
            }
            (max_ratio * SAFETY_MARGIN, max_ratio, points.len())
        }
    };
    Ok(CalibrationEntry { dim: d, bound, constant, max_ratio, points, fingerprint: fp, extra: extra_out })
}

/// Where the previous table is kept when `path` is overwritten.
pub fn archive_path(path: &Path, contents: &str) -> PathBuf {
    let digest = format!("{:x}", Sha256::digest(contents.as_bytes()));
    let dir = path.parent().unwrap_or_else(|| Path::new(".")).join("archive");
    dir.join(format!("calibration-{}.json", &digest[..16]))
}

/// Fits every named bound in every dimension it supports (restricted to `dims` when
/// given) and writes the updated table to `path`, archiving the previous file.
///
/// An empty bound list is a no-op. Any failing sweep aborts before the table is touched.
pub fn calibrate(path: &Path, bounds: &[BoundId], dims: Option<&[usize]>, extra: &[GaussianMixtureField]) -> Result<CalibrationTable> {
    let existing = if path.exists() { Some(fs::read_to_string(path)?) } else { None };
    let mut table = match &existing {
        Some(text) => serde_json::from_str(text).map_err(|e| Error::Parse(format!("calibration table {}: {e}", path.display())))?,
        None => CalibrationTable::default(),
    };
    if bounds.is_empty() {
        return Ok(table);
    }
    let mut jobs = Vec::new();
    for &b in bounds {
        let ds: Vec<usize> = b.dims().iter().copied().filter(|d| dims.is_none_or(|ds| ds.contains(d))).collect();
        if ds.is_empty() {
            return Err(Error::Calibration(format!("{b} has no sweep in the requested dimensions")));
        }
        let matching: Vec<&GaussianMixtureField> = extra.iter().collect();
        for d in ds {
            let extra_d: Vec<GaussianMixtureField> = matching.iter().filter(|f| f.dim() == d).map(|f| (*f).clone()).collect();
            jobs.push((b, d, extra_d));
        }
    }
    let mut fitted = Vec::new();
    for (b, d, extra_d) in &jobs {
        fitted.push(calibrate_entry(*b, *d, extra_d)?);
    }
    if table.version != ARTIFACT_VERSION {
        table = CalibrationTable::default();
    }
    for e in fitted {
        table.entries.insert(key(e.dim, e.bound), e);
    }
    if let Some(text) = existing {
        let archived = archive_path(path, &text);
        fs::create_dir_all(archived.parent().expect("archive path has a parent"))?;
        fs::write(&archived, text)?;
    }
    table.save(path)?;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bound_ids_round_trip() {
        for b in BoundId::ALL {
            assert_eq!(b.as_str().parse::<BoundId>().unwrap(), b);
        }
        assert!("nope".parse::<BoundId>().is_err());
    }

    #[test]
    fn fingerprints_track_the_sweep() {
        let a = standard_fingerprint(BoundId::Residual, 1).unwrap();
        assert_eq!(a, standard_fingerprint(BoundId::Residual, 1).unwrap());
        assert_ne!(a, standard_fingerprint(BoundId::Residual, 2).unwrap());
        assert_ne!(a, standard_fingerprint(BoundId::SampleL2, 1).unwrap());
        let extra = [GaussianMixtureField::single(1.0, vec![0.0], 3.0).unwrap()];
        assert_ne!(a, fingerprint(BoundId::Residual, 1, &corpus_fields(1, &extra)).unwrap());
        assert!(standard_fingerprint(BoundId::ClosedLoop, 2).is_none());
    }

    #[test]
    fn sweep_sizes() {
        assert_eq!(sweep(BoundId::Residual, 1, 5).unwrap().len(), 60);
        assert_eq!(sweep(BoundId::ClosedLoop, 1, 5).unwrap().len(), 35);
        assert!(sweep(BoundId::HsResidual, 2, 1).unwrap().iter().all(|p| p.get("s") > 1.0));
    }

    #[test]
    fn stale_and_missing_entries_leave_reports_unasserted() {
        let report = BoundReport::with_form("residual", 1.0, 0.0, 2.0, "gaussian");
        let empty = CalibrationTable::default();
        let r = empty.apply(1, report.clone());
        assert!(!r.asserted);
        assert_eq!(r.labels["calibration"], "missing");
        let mut table = CalibrationTable::default();
        let entry = CalibrationEntry {
            dim: 1,
            bound: BoundId::Residual,
            constant: 3.0,
            max_ratio: 2.0,
            points: 1,
            fingerprint: "0000".into(),
            extra: BTreeMap::new(),
        };
        table.entries.insert(key(1, BoundId::Residual), entry.clone());
        assert_eq!(table.apply(1, report.clone()).labels["calibration"], "stale");
        table.entries.insert(key(1, BoundId::Residual), CalibrationEntry { fingerprint: standard_fingerprint(BoundId::Residual, 1).unwrap(), ..entry });
        let r = table.apply(1, report);
        assert!(r.asserted && r.holds());
        assert_eq!(r.bound_rhs, 6.0);
        assert_eq!(r.fingerprint, standard_fingerprint(BoundId::Residual, 1));
    }

    #[test]
    fn embedded_table_parses() {
        let t = CalibrationTable::embedded();
        assert_eq!(t.version, ARTIFACT_VERSION);
    }
}
