use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};
use heat_sampling::calibration::{self, BoundId};
use heat_sampling::runner::{self, Command, ExperimentConfig};

/// Sampling, observability and control experiments for heat-evolved fields.
#[derive(Parser, Debug)]
#[command(name = "heatsample", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    #[command(flatten)]
    common: Common,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Cmd {
    /// Reconstruction residual and sample norms, optionally with perturbed nodes
    Observe,
    /// Windowed reconstruction against the weighted-norm bound
    Window,
    /// Lower bound for windows that grow too slowly
    Counterexample,
    /// Impulse feedback: closed-loop decay, windowed control and control norms
    Control,
    /// Sobolev residual, local sup bounds and the commutator inequality
    Hs,
    /// Shannon reconstruction of band-limited fields
    Shannon,
    /// Fit bound constants over the standard sweeps and update the table
    Calibrate,
}

impl Cmd {
    fn command(self) -> Command {
        match self {
            Cmd::Observe => Command::Observe,
            Cmd::Window => Command::Window,
            Cmd::Counterexample => Command::Counterexample,
            Cmd::Control => Command::Control,
            Cmd::Hs => Command::Hs,
            Cmd::Shannon => Command::Shannon,
            Cmd::Calibrate => Command::Calibrate,
        }
    }
}

#[derive(Args, Debug)]
struct Common {
    /// Spatial dimension
    #[arg(long, global = true)]
    dim: Option<usize>,
    /// Target accuracy for certified quantities
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Seed for random perturbations and random fields
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output CSV (or calibration table for `calibrate`); `-` is standard output
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// TOML file with sweep settings; flags override it
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Calibration table to read instead of the built-in one
    #[arg(long, global = true)]
    calibration: Option<PathBuf>,
    /// Final times
    #[arg(long = "t", global = true, value_delimiter = ',')]
    t: Vec<f64>,
    /// Sampling densities
    #[arg(long = "n", global = true, value_delimiter = ',')]
    n: Vec<f64>,
    /// Perturbation sizes
    #[arg(long, global = true, value_delimiter = ',')]
    eps: Vec<f64>,
    /// Window or cube radii
    #[arg(long, global = true, value_delimiter = ',')]
    r: Vec<f64>,
    /// Smoothness orders
    #[arg(long, global = true, value_delimiter = ',')]
    s: Vec<f64>,
    /// Weight exponents for windowed reconstruction
    #[arg(long, global = true, value_delimiter = ',')]
    k: Vec<u32>,
    /// Impulse times
    #[arg(long, global = true, value_delimiter = ',')]
    tau: Vec<f64>,
    /// Window growth functions, e.g. `linear:2`
    #[arg(long, global = true, value_delimiter = ',')]
    growth: Vec<String>,
    /// Field sources: corpus, shape:NAME, random:COUNT, file:PATH, inline:RECORD
    #[arg(long, global = true)]
    field: Vec<String>,
    /// Perturbation rule: alternating or random
    #[arg(long, global = true)]
    rule: Option<String>,
    /// Bound ids to calibrate, or `all`
    #[arg(long, global = true, value_delimiter = ',')]
    bounds: Vec<String>,
}

fn set_list<T>(target: &mut Vec<T>, values: Vec<T>) {
    if !values.is_empty() {
        *target = values;
    }
}

fn build_config(cli: Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.common.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    let c = cli.common;
    cfg.command = Some(cli.command.command());
    if let Some(d) = c.dim {
        cfg.dim = d;
    }
    if let Some(t) = c.tol {
        cfg.tol = t;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(r) = c.rule {
        cfg.rule = r;
    }
    cfg.out = c.out.or(cfg.out);
    cfg.jobs = c.jobs.or(cfg.jobs);
    cfg.calibration = c.calibration.or(cfg.calibration);
    set_list(&mut cfg.t, c.t);
    set_list(&mut cfg.n, c.n);
    set_list(&mut cfg.eps, c.eps);
    set_list(&mut cfg.r, c.r);
    set_list(&mut cfg.s, c.s);
    set_list(&mut cfg.k, c.k);
    set_list(&mut cfg.tau, c.tau);
    set_list(&mut cfg.growth, c.growth);
    set_list(&mut cfg.field, c.field);
    set_list(&mut cfg.bounds, c.bounds);
    cfg.validate()?;
    Ok(cfg)
}

fn calibrate(cfg: &ExperimentConfig, dim_given: bool) -> Result<()> {
    let bounds: Vec<BoundId> = if cfg.bounds.iter().any(|b| b == "all") {
        BoundId::ALL.to_vec()
    } else {
        cfg.bounds.iter().map(|b| b.parse()).collect::<Result<_, _>>()?
    };
    let path = cfg.out.clone().unwrap_or_else(|| PathBuf::from("calibration.json"));
    // corpus fields are always part of the sweep; other sources add to it
    let extra = if cfg.field.iter().all(|f| f == "corpus") {
        Vec::new()
    } else {
        let probe = ExperimentConfig { field: cfg.field.iter().filter(|f| *f != "corpus").cloned().collect(), ..cfg.clone() };
        probe.fields()?.into_iter().map(|(_, f)| f).collect()
    };
    let dims = [cfg.dim];
    let table = runner::with_jobs(cfg.jobs, || calibration::calibrate(&path, &bounds, dim_given.then_some(&dims[..]), &extra))??;
    for b in &bounds {
        for d in b.dims() {
            if let Some(e) = table.get(*d, *b) {
                eprintln!("d{d}/{b}: constant {:.6e} (max ratio {:.6e}, {} points)", e.constant, e.max_ratio, e.points);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let dim_given = cli.common.dim.is_some();
    let cfg = match build_config(cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let result = if cfg.command == Some(Command::Calibrate) { calibrate(&cfg, dim_given).map(|_| 0) } else { sweep(&cfg) };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn sweep(cfg: &ExperimentConfig) -> Result<i32> {
    let rows = runner::run(cfg)?;
    if rows.is_empty() {
        bail!("the sweep selected no points");
    }
    runner::write_rows(&rows, cfg.out.as_deref())?;
    let failed = rows.iter().filter(|r| r.status() == "fail").count();
    let errors = rows.iter().filter(|r| r.error.is_some()).count();
    if failed + errors > 0 {
        eprintln!("{} rows: {failed} failed, {errors} errors", rows.len());
    }
    Ok(runner::exit_code(&rows))
}
