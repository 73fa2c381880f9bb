//! Experiment configuration, parameter sweeps and CSV output.
//!
//! A config names one command and lists of parameter values. The runner expands the
//! Cartesian product into tasks, runs them on a worker pool, applies calibrated
//! constants and returns rows in a deterministic order. A failing point becomes an
//! error row; the rest of the sweep still runs.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::CalibrationTable;
use crate::corpus;
use crate::error::{Error, Result};
use crate::gaussian_field::GaussianMixtureField;
use crate::hs_analysis::{commutator_inequality_check, heat_local_bounds, hs_residual, hs_residual_gaussian, local_sup_bound, perturbed_bandlimited_gap};
use crate::impulse_control::{closed_loop_final, control_sobolev_norm, feedback_gain, windowed_closed_loop, ClosedLoopRun, FeedbackPolicy, FieldRef};
use crate::observability::{perturbed_residual, perturbed_sample_gap, residual, sample_l2_report};
use crate::perturbation::PerturbationRule;
use crate::report::{BoundReport, Direction};
use crate::sinc_basis::{shannon_check, SampleEnvelope, SamplePolicy};
use crate::spectral_field::{Band, FrequencyGrid, GridSpec, SpectralGridField};
use crate::weak_window::{counterexample_gap, windowed_residual, GrowthFunction, WindowedExperiment};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Observe,
    Window,
    Counterexample,
    Control,
    Hs,
    Shannon,
    Calibrate,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Observe => "observe",
            Self::Window => "window",
            Self::Counterexample => "counterexample",
            Self::Control => "control",
            Self::Hs => "hs",
            Self::Shannon => "shannon",
            Self::Calibrate => "calibrate",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Command {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "observe" => Self::Observe,
            "window" => Self::Window,
            "counterexample" => Self::Counterexample,
            "control" => Self::Control,
            "hs" => Self::Hs,
            "shannon" => Self::Shannon,
            "calibrate" => Self::Calibrate,
            _ => return Err(Error::input(format!("unknown command `{s}`"))),
        })
    }
}

/// Sweep description, loadable from TOML. Every list field is swept as a Cartesian
/// product; an empty list means "not swept" for optional parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub command: Option<Command>,
    pub dim: usize,
    #[serde(rename = "T")]
    pub t: Vec<f64>,
    #[serde(rename = "N")]
    pub n: Vec<f64>,
    pub eps: Vec<f64>,
    pub r: Vec<f64>,
    pub s: Vec<f64>,
    pub k: Vec<u32>,
    pub tau: Vec<f64>,
    pub growth: Vec<String>,
    /// Field sources: `corpus`, `shape:NAME`, `random:COUNT`, `file:PATH` (one record per
    /// blank-line separated block) or `inline:RECORD` (lines separated by `;`).
    pub field: Vec<String>,
    pub rule: String,
    pub seed: u64,
    pub tol: f64,
    pub out: Option<PathBuf>,
    pub calibration: Option<PathBuf>,
    pub jobs: Option<usize>,
    /// Bound ids to calibrate, or for a sweep the bounds to report; `all` selects every bound.
    /// A sweep with no selection reports every bound of its command, except `observe`,
    /// which reports the reconstruction residual only.
    pub bounds: Vec<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            command: None,
            dim: 1,
            t: vec![1.0],
            n: vec![1.0],
            eps: Vec::new(),
            r: Vec::new(),
            s: Vec::new(),
            k: vec![1],
            tau: Vec::new(),
            growth: vec!["linear".into()],
            field: vec!["corpus".into()],
            rule: "alternating".into(),
            seed: 0,
            tol: 1e-6,
            out: None,
            calibration: None,
            jobs: None,
            bounds: Vec::new(),
        }
    }
}

fn field_error(field: &str, msg: impl fmt::Display) -> Error {
    Error::Input(format!("config field `{field}`: {msg}"))
}

fn check_list(name: &str, values: &[f64], allow_zero: bool) -> Result<()> {
    for &v in values {
        if !v.is_finite() || v < 0.0 || (!allow_zero && v == 0.0) {
            let need = if allow_zero { "finite and nonnegative" } else { "finite and positive" };
            return Err(field_error(name, format!("{v} is not {need}")));
        }
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Input(format!("config: {e}")))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Input(format!("config file {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Checks every field and names the first offending one.
    pub fn validate(&self) -> Result<()> {
        let command = self.command.ok_or_else(|| field_error("command", "no command given"))?;
        if !(1..=3).contains(&self.dim) {
            return Err(field_error("dim", format!("{} is outside 1..=3", self.dim)));
        }
        check_list("T", &self.t, false)?;
        check_list("N", &self.n, false)?;
        check_list("eps", &self.eps, true)?;
        check_list("r", &self.r, false)?;
        check_list("s", &self.s, false)?;
        check_list("tau", &self.tau, true)?;
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(field_error("tol", format!("{} is not positive", self.tol)));
        }
        if self.jobs == Some(0) {
            return Err(field_error("jobs", "must be at least 1"));
        }
        for g in &self.growth {
            g.parse::<GrowthFunction>().map_err(|e| field_error("growth", e))?;
        }
        if self.eps.iter().any(|&e| e > 0.0) {
            PerturbationRule::named(&self.rule, self.eps[0].max(1e-3), self.seed).map_err(|e| field_error("rule", e))?;
        }
        let needs_lists: &[(&str, bool)] = match command {
            Command::Window => &[("T", self.t.is_empty()), ("N", self.n.is_empty()), ("r", self.r.is_empty()), ("k", self.k.is_empty())],
            Command::Counterexample => &[("T", self.t.is_empty()), ("N", self.n.is_empty()), ("growth", self.growth.is_empty())],
            Command::Calibrate => &[],
            _ => &[("T", self.t.is_empty()), ("N", self.n.is_empty())],
        };
        if let Some((name, _)) = needs_lists.iter().find(|(_, empty)| *empty) {
            return Err(field_error(name, "needs at least one value"));
        }
        if command == Command::Window && self.r.iter().any(|&r| r < 1.0) {
            return Err(field_error("r", "window radii must be at least 1"));
        }
        if command == Command::Control {
            for &tau in &self.tau {
                if self.t.iter().any(|&t| tau >= t) {
                    return Err(field_error("tau", format!("impulse time {tau} must be below every final time T")));
                }
            }
        }
        if command != Command::Calibrate {
            if let Some(b) = self.bounds.iter().find(|b| *b != "all" && !Kind::ALL.iter().any(|k| k.bound() == b.as_str())) {
                return Err(field_error("bounds", format!("unknown bound `{b}`")));
            }
            self.fields().map_err(|e| field_error("field", e))?;
        }
        Ok(())
    }

    /// Resolves the field sources into named fields of dimension `dim`.
    pub fn fields(&self) -> Result<Vec<(String, GaussianMixtureField)>> {
        let d = self.dim;
        let mut out = Vec::new();
        for src in &self.field {
            let (kind, arg) = src.split_once(':').unwrap_or((src.as_str(), ""));
            match kind {
                "corpus" => out.extend(corpus::standard_shapes(d).into_iter().map(|(n, f)| (n.to_string(), f))),
                "shape" => {
                    let f = corpus::shape(arg, d)
                        .ok_or_else(|| Error::input(format!("unknown shape `{arg}`; expected one of {}", corpus::SHAPE_NAMES.join(", "))))?;
                    out.push((arg.to_string(), f));
                }
                "random" => {
                    let count: u64 = arg.parse().map_err(|_| Error::input(format!("`random:{arg}` needs a count")))?;
                    out.extend((0..count).map(|i| (format!("random{i}"), corpus::random_mixture(d, self.seed, i))));
                }
                "file" => {
                    let text = fs::read_to_string(arg).map_err(|e| Error::input(format!("field file {arg}: {e}")))?;
                    let blocks: Vec<&str> = text.split("\n\n").filter(|b| !b.trim().is_empty()).collect();
                    for (i, b) in blocks.iter().enumerate() {
                        out.push((format!("{arg}#{i}"), GaussianMixtureField::from_record(b)?));
                    }
                }
                "inline" => out.push((format!("inline{}", out.len()), GaussianMixtureField::from_record(arg)?)),
                _ => return Err(Error::input(format!("unknown field source `{src}`"))),
            }
        }
        if out.is_empty() {
            return Err(Error::input("no fields selected"));
        }
        if let Some((name, f)) = out.iter().find(|(_, f)| f.dim() != d) {
            return Err(Error::input(format!("field `{name}` has dimension {} but dim = {d}", f.dim())));
        }
        Ok(out)
    }
}

/// Parameter values of one sweep point. Absent values are `None`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Point {
    pub t: Option<f64>,
    pub n: Option<f64>,
    pub eps: Option<f64>,
    pub r: Option<f64>,
    pub s: Option<f64>,
    pub k: Option<u32>,
    pub tau: Option<f64>,
}

impl Point {
    fn key(&self) -> [f64; 7] {
        let v = |x: Option<f64>| x.unwrap_or(f64::NEG_INFINITY);
        [v(self.t), v(self.n), v(self.eps), v(self.r), v(self.s), v(self.k.map(f64::from)), v(self.tau)]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Residual,
    SampleL2,
    PerturbedResidual,
    PerturbedSampleGap,
    Window,
    Counterexample,
    ClosedLoop,
    WindowedClosedLoop,
    ControlSobolev,
    HsResidual,
    LocalSup,
    Commutator,
    HeatLocal,
    PerturbedBandlimited,
    Shannon,
}

impl Kind {
    const ALL: [Kind; 15] = [
        Self::Residual,
        Self::SampleL2,
        Self::PerturbedResidual,
        Self::PerturbedSampleGap,
        Self::Window,
        Self::Counterexample,
        Self::ClosedLoop,
        Self::WindowedClosedLoop,
        Self::ControlSobolev,
        Self::HsResidual,
        Self::LocalSup,
        Self::Commutator,
        Self::HeatLocal,
        Self::PerturbedBandlimited,
        Self::Shannon,
    ];

    fn bound(self) -> &'static str {
        match self {
            Self::Residual => "residual",
            Self::SampleL2 => "sample_l2",
            Self::PerturbedResidual => "perturbed_residual",
            Self::PerturbedSampleGap => "perturbed_sample_gap",
            Self::Window => "window",
            Self::Counterexample => "counterexample",
            Self::ClosedLoop => "closed_loop",
            Self::WindowedClosedLoop => "windowed_closed_loop",
            Self::ControlSobolev => "control_sobolev",
            Self::HsResidual => "hs_residual",
            Self::LocalSup => "local_sup",
            Self::Commutator => "commutator",
            Self::HeatLocal => "heat_local",
            Self::PerturbedBandlimited => "perturbed_bandlimited",
            Self::Shannon => "shannon",
        }
    }
}

struct Task {
    kind: Kind,
    field_name: String,
    field: Option<Arc<GaussianMixtureField>>,
    growth: Option<String>,
    point: Point,
}

/// One CSV row: a report, or the error a point raised.
#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub command: Command,
    pub field: String,
    pub d: usize,
    pub point: Point,
    pub bound: String,
    pub report: Option<BoundReport>,
    pub error: Option<String>,
}

impl Row {
    pub fn status(&self) -> &'static str {
        match &self.report {
            None => "error",
            Some(r) if !r.asserted => "unasserted",
            Some(r) if r.holds() => "pass",
            Some(_) => "fail",
        }
    }
}

/// Exit status of a finished sweep: 1 if an asserted inequality fails, else 3 if any
/// point raised an error, else 0.
pub fn exit_code(rows: &[Row]) -> i32 {
    if rows.iter().any(|r| r.status() == "fail") {
        1
    } else if rows.iter().any(|r| r.error.is_some()) {
        3
    } else {
        0
    }
}

fn opt_list(v: &[f64]) -> Vec<Option<f64>> {
    if v.is_empty() {
        vec![None]
    } else {
        v.iter().copied().map(Some).collect()
    }
}

fn default_orders(d: usize) -> Vec<f64> {
    vec![(d / 2 + 1) as f64]
}

fn tasks(cfg: &ExperimentConfig, command: Command) -> Result<Vec<Task>> {
    let d = cfg.dim;
    let mut out = Vec::new();
    let fields: Vec<(String, Arc<GaussianMixtureField>)> = match command {
        Command::Counterexample => Vec::new(),
        _ => cfg.fields()?.into_iter().map(|(n, f)| (n, Arc::new(f))).collect(),
    };
    let mut push = |kind: Kind, name: &str, field: Option<&Arc<GaussianMixtureField>>, point: Point| {
        out.push(Task { kind, field_name: name.to_string(), field: field.cloned(), growth: None, point });
    };
    let orders = if cfg.s.is_empty() { default_orders(d) } else { cfg.s.clone() };
    for (name, f) in &fields {
        for &t in &cfg.t {
            let p = |n: f64| Point { t: Some(t), n: Some(n), ..Point::default() };
            match command {
                Command::Observe => {
                    for &n in &cfg.n {
                        for eps in opt_list(&cfg.eps) {
                            match eps {
                                Some(e) if e > 0.0 => {
                                    push(Kind::PerturbedResidual, name, Some(f), Point { eps, ..p(n) });
                                    push(Kind::PerturbedSampleGap, name, Some(f), Point { eps, ..p(n) });
                                }
                                _ => {
                                    push(Kind::Residual, name, Some(f), Point { eps, ..p(n) });
                                    push(Kind::SampleL2, name, Some(f), Point { eps, ..p(n) });
                                }
                            }
                        }
                    }
                }
                Command::Window => {
                    for &n in &cfg.n {
                        for &r in &cfg.r {
                            for &k in &cfg.k {
                                push(Kind::Window, name, Some(f), Point { r: Some(r), k: Some(k), ..p(n) });
                            }
                        }
                    }
                }
                Command::Control => {
                    let taus = if cfg.tau.is_empty() { vec![t / 2.0] } else { cfg.tau.clone() };
                    for tau in taus {
                        for &n in &cfg.n {
                            let base = Point { tau: Some(tau), ..p(n) };
                            for eps in opt_list(&cfg.eps) {
                                push(Kind::ClosedLoop, name, Some(f), Point { eps, ..base.clone() });
                                for &r in &cfg.r {
                                    push(Kind::WindowedClosedLoop, name, Some(f), Point { eps, r: Some(r), ..base.clone() });
                                }
                            }
                            for &s in &cfg.s {
                                push(Kind::ControlSobolev, name, Some(f), Point { s: Some(s), ..base.clone() });
                            }
                        }
                    }
                }
                Command::Hs => {
                    for &n in &cfg.n {
                        for &e in cfg.eps.iter().filter(|&&e| e > 0.0) {
                            push(Kind::PerturbedBandlimited, name, Some(f), Point { eps: Some(e), ..p(n) });
                        }
                    }
                    for &s in &orders {
                        for &n in &cfg.n {
                            push(Kind::HsResidual, name, Some(f), Point { s: Some(s), ..p(n) });
                        }
                        for &r in &cfg.r {
                            push(Kind::LocalSup, name, Some(f), Point { t: Some(t), r: Some(r), s: Some(s), ..Point::default() });
                        }
                        if d <= 2 && s < 5.0 {
                            push(Kind::Commutator, name, Some(f), Point { t: Some(t), s: Some(s), ..Point::default() });
                        }
                    }
                    for &r in &cfg.r {
                        push(Kind::HeatLocal, name, Some(f), Point { t: Some(t), r: Some(r), ..Point::default() });
                    }
                }
                Command::Shannon => {
                    for &n in &cfg.n {
                        push(Kind::Shannon, name, Some(f), p(n));
                    }
                }
                Command::Counterexample | Command::Calibrate => unreachable!(),
            }
        }
    }
    if command == Command::Counterexample {
        for g in &cfg.growth {
            for &t in &cfg.t {
                for &n in &cfg.n {
                    out.push(Task {
                        kind: Kind::Counterexample,
                        field_name: format!("growth:{g}"),
                        field: None,
                        growth: Some(g.clone()),
                        point: Point { t: Some(t), n: Some(n), ..Point::default() },
                    });
                }
            }
        }
    }
    let selected = |k: Kind| match cfg.bounds.as_slice() {
        [] if command == Command::Observe => matches!(k, Kind::Residual | Kind::PerturbedResidual),
        [] => true,
        names => names.iter().any(|b| b == "all" || b == k.bound()),
    };
    out.retain(|t| selected(t.kind));
    Ok(out)
}

/// Grid for the low band part of `f` at density `n`, resolving phases out to `extent`.
fn low_band_field(f: &GaussianMixtureField, n: f64, extent: f64) -> Result<SpectralGridField> {
    let grid = Arc::new(FrequencyGrid::new(f.dim(), n, GridSpec::default().with_outer_cells(0).resolving(n, extent))?);
    SpectralGridField::from_gaussian(f, grid)?.band_project(n, Band::Low)
}

/// Lattice half-width that covers the bulk of `f` at density `n`.
fn covering_index(f: &GaussianMixtureField, n: f64) -> i64 {
    let reach = f.max_center_norm() + 12.0 * f.max_width().sqrt() + 1.0;
    (reach * n).ceil() as i64
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    table: &'a CalibrationTable,
}

impl Context<'_> {
    fn run(&self, task: &Task) -> Result<Vec<BoundReport>> {
        let tol = self.cfg.tol;
        let p = &task.point;
        let t = p.t.unwrap_or(0.0);
        let n = p.n.unwrap_or(1.0);
        let field = task.field.as_deref();
        let f = || field.expect("field tasks carry a field");
        let rule = |eps: f64| PerturbationRule::named(&self.cfg.rule, eps, self.cfg.seed);
        let one = |r: Result<BoundReport>| r.map(|r| vec![r]);
        match task.kind {
            Kind::Residual => one(residual(f(), t, n, tol)),
            Kind::SampleL2 => one(sample_l2_report(f(), t, n, tol)),
            Kind::PerturbedResidual => one(perturbed_residual(f(), t, n, &rule(p.eps.unwrap())?, tol)),
            Kind::PerturbedSampleGap => one(perturbed_sample_gap(f(), t, n, &rule(p.eps.unwrap())?, tol)),
            Kind::Window => {
                let exp = WindowedExperiment { u0: f().clone(), t, n, r: p.r.unwrap(), k: p.k.unwrap() };
                one(windowed_residual(&exp, tol))
            }
            Kind::Counterexample => {
                let g: GrowthFunction = task.growth.as_deref().unwrap().parse()?;
                one(counterexample_gap(self.cfg.dim, t, n, g))
            }
            Kind::ClosedLoop => {
                let run = ClosedLoopRun::new(f().clone(), t, p.tau.unwrap(), n);
                let target = match (p.eps, self.table.closed_loop_c1()) {
                    (Some(eps), Some((c1, _))) if eps > 0.0 => Some((eps, c1)),
                    _ => None,
                };
                let decay = closed_loop_final(&run, None, tol)?;
                match target {
                    Some(target) => {
                        let r = closed_loop_final(&run, Some(target), tol)?;
                        // below the threshold density only the decay row is meaningful
                        Ok(if r.bound == "closed_loop_target" { vec![decay, r] } else { vec![r] })
                    }
                    None if p.eps.is_some_and(|e| e > 0.0) => Ok(vec![decay.label("target", "uncalibrated")]),
                    None => Ok(vec![decay]),
                }
            }
            Kind::WindowedClosedLoop => {
                let run = ClosedLoopRun::new(f().clone(), t, p.tau.unwrap(), n).with_window(p.r.unwrap());
                let target = match (p.eps, self.table.windowed_thresholds()) {
                    (Some(eps), Some((cn, cr, _))) if eps > 0.0 => Some((eps, cn, cr)),
                    _ => None,
                };
                one(windowed_closed_loop(&run, target, tol))
            }
            Kind::ControlSobolev => {
                let run = ClosedLoopRun::new(f().clone(), t, p.tau.unwrap(), n);
                let w = run.pre_impulse()?;
                let v = feedback_gain(FieldRef::Gaussian(&w), n, FeedbackPolicy::default())?;
                one(control_sobolev_norm(&v, p.s.unwrap()).map(|r| r.param("T", t).param("tau", p.tau.unwrap())))
            }
            Kind::HsResidual => {
                let ut = f().heat_evolve(t)?;
                let s = p.s.unwrap();
                let r = if s.fract() == 0.0 && s <= 16.0 {
                    hs_residual_gaussian(&ut, n, s as u32)?
                } else {
                    let w = ut.min_width();
                    let spec = GridSpec::for_heat(w, n).resolving(n, 2.0 * ut.max_center_norm() + 2.0).resolving_decay(n, w);
                    let grid = Arc::new(FrequencyGrid::new(ut.dim(), n, spec)?);
                    hs_residual(&SpectralGridField::from_gaussian(&ut, grid)?, n, s)?
                };
                Ok(vec![r.param("T", t)])
            }
            Kind::LocalSup => {
                let ut = f().heat_evolve(t)?;
                one(local_sup_bound(&ut, p.r.unwrap(), p.s.unwrap(), None).map(|(_, r)| r.param("T", t)))
            }
            Kind::Commutator => one(commutator_inequality_check(&f().heat_evolve(t)?, p.s.unwrap()).map(|r| r.param("T", t))),
            Kind::HeatLocal => heat_local_bounds(f(), t, p.r.unwrap(), tol),
            Kind::PerturbedBandlimited => {
                let ut = f().heat_evolve(t)?;
                let m = covering_index(&ut, n);
                let low = low_band_field(&ut, n, m as f64 * (self.cfg.dim as f64).sqrt() / n)?;
                one(perturbed_bandlimited_gap(&low, n, &rule(p.eps.unwrap())?, Some(m)).map(|r| r.param("T", t)))
            }
            Kind::Shannon => {
                let ut = f().heat_evolve(t)?;
                let m = covering_index(&ut, n);
                let low = low_band_field(&ut, n, m as f64 / n)?;
                let env = SampleEnvelope::BandLimitedGaussian(ut.clone());
                one(shannon_check(&low, n, SamplePolicy::Cube(m), &env).map(|r| r.param("T", t)))
            }
        }
    }
}

/// Runs the sweep described by `cfg` and returns rows in sorted order.
pub fn run(cfg: &ExperimentConfig) -> Result<Vec<Row>> {
    cfg.validate()?;
    let command = cfg.command.expect("validated");
    if command == Command::Calibrate {
        return Err(Error::input("`calibrate` is not a sweep; use calibration::calibrate"));
    }
    let table = match &cfg.calibration {
        Some(p) => CalibrationTable::load(p)?,
        None => CalibrationTable::embedded(),
    };
    let tasks = tasks(cfg, command)?;
    let ctx = Context { cfg, table: &table };
    let d = cfg.dim;
    let work = || -> Vec<Vec<Row>> {
        tasks
            .par_iter()
            .map(|task| {
                let row = |bound: String, report: Option<BoundReport>, error: Option<String>| Row {
                    command,
                    field: task.field_name.clone(),
                    d,
                    point: task.point.clone(),
                    bound,
                    report,
                    error,
                };
                match ctx.run(task) {
                    Ok(reports) => reports.into_iter().map(|r| row(r.bound.clone(), Some(table.apply(d, r)), None)).collect(),
                    Err(e) => vec![row(task.kind.bound().to_string(), None, Some(e.to_string()))],
                }
            })
            .collect()
    };
    let nested = with_jobs(cfg.jobs, work)?;
    let mut rows: Vec<Row> = nested.into_iter().flatten().collect();
    rows.sort_by(compare_rows);
    Ok(rows)
}

/// Runs `f` on a pool of `jobs` worker threads, or on the global pool when `None`.
pub fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        Some(j) => Ok(rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build()
            .map_err(|e| Error::input(format!("worker pool: {e}")))?
            .install(f)),
        None => Ok(f()),
    }
}

fn compare_rows(a: &Row, b: &Row) -> Ordering {
    let (ka, kb) = (a.point.key(), b.point.key());
    ka[..3]
        .iter()
        .zip(&kb[..3])
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.bound.cmp(&b.bound))
        .then_with(|| a.field.cmp(&b.field))
        .then_with(|| ka[3..].iter().zip(&kb[3..]).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal))
}

pub const CSV_HEADER: [&str; 28] = [
    "command",
    "field",
    "bound",
    "d",
    "T",
    "N",
    "eps",
    "r",
    "s",
    "k",
    "tau",
    "measured",
    "certificate",
    "bound_form",
    "constant",
    "bound_rhs",
    "ratio",
    "asserted",
    "holds",
    "direction",
    "backbone",
    "fingerprint",
    "status",
    "labels",
    "params",
    "extras",
    "error",
    "calibration",
];

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn joined<V>(m: &BTreeMap<String, V>, f: impl Fn(&V) -> String) -> String {
    m.iter().map(|(k, v)| format!("{k}={}", f(v))).collect::<Vec<_>>().join(";")
}

/// Writes rows as CSV with a header.
pub fn write_csv<W: Write>(rows: &[Row], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for row in rows {
        let p = &row.point;
        let mut rec: Vec<String> = vec![
            row.command.to_string(),
            row.field.clone(),
            row.bound.clone(),
            row.d.to_string(),
            opt(p.t),
            opt(p.n),
            opt(p.eps),
            opt(p.r),
            opt(p.s),
            p.k.map(|k| k.to_string()).unwrap_or_default(),
            opt(p.tau),
        ];
        match &row.report {
            Some(r) => rec.extend([
                num(r.measured),
                num(r.certificate),
                num(r.bound_form),
                opt(r.constant),
                num(r.bound_rhs),
                opt(r.ratio),
                r.asserted.to_string(),
                r.holds().to_string(),
                match r.direction {
                    Direction::Upper => "upper".to_string(),
                    Direction::Lower => "lower".to_string(),
                },
                r.backbone.clone(),
                r.fingerprint.clone().unwrap_or_default(),
                row.status().to_string(),
                joined(&r.labels, |v| v.clone()),
                joined(&r.params, |v| num(*v)),
                joined(&r.extras, |v| num(*v)),
                String::new(),
                r.labels.get("calibration").cloned().unwrap_or_else(|| if r.fingerprint.is_some() { "applied".into() } else { String::new() }),
            ]),
            None => {
                rec.extend(std::iter::repeat_n(String::new(), 11));
                rec.push(row.status().to_string());
                rec.extend([String::new(), String::new(), String::new()]);
                rec.push(row.error.clone().unwrap_or_default());
                rec.push(String::new());
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes rows to `path`, or to standard output when `path` is `None` or `-`.
pub fn write_rows(rows: &[Row], path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) if p != Path::new("-") => {
            let file = fs::File::create(p)?;
            write_csv(rows, std::io::BufWriter::new(file))
        }
        _ => write_csv(rows, std::io::stdout().lock()),
    }
}
