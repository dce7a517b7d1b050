//! Experiment harness for `coulomb-lab`: configuration, subcommands, q-sweeps
//! and artifacts on disk.
//!
//! Every run directory gets a `manifest.json` with the resolved configuration.
//! CSV files carry no timings, so identical configurations give identical bytes.

pub mod config;
pub mod output;

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use coulomb_lab::coulomb::{coulomb_energy, CoulombKernel};
use coulomb_lab::counterexamples::{base_energy, decay_report, scaling_sequence};
use coulomb_lab::diagnostics::{shape_report, ShapeReport};
use coulomb_lab::field::{write_snapshot, read_snapshot, DomainMask, ScalarField};
use coulomb_lab::ground_state::{solve_ground_state, solve_ground_state_from};
use coulomb_lab::penalized::{minimize_from_mask, EnergyParts};
use coulomb_lab::radial_oracle::ball_ground_state;
use coulomb_lab::surgery::{self, trichotomy_scan, ScanOptions};
use coulomb_lab::{Grid, UNIT_BALL_VOLUME};
use serde::{Deserialize, Serialize};

pub use config::{ConfigError, InitShape, RunConfig, Weight};

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "COULOMB_LAB_THREADS";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Solver(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }

    fn csv(path: &Path, e: csv::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Solver(m) => write!(f, "solver failure: {m}"),
            CliError::Io(m) => write!(f, "I/O error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<coulomb_lab::Error> for CliError {
    fn from(e: coulomb_lab::Error) -> Self {
        use coulomb_lab::Error as E;
        match e {
            E::Io { .. } | E::Format { .. } | E::LengthMismatch { .. } => CliError::Io(e.to_string()),
            E::InvalidGrid(_) | E::InvalidArgument { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Solver(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "coulomb-lab", version, about = "Ground states and shape optimization for the spectral-Coulomb functional")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Settings shared by the numerical subcommands. Applied in order: defaults,
/// `--config` file, `--set` pairs, then the named flags.
#[derive(Debug, Args, Default, Clone)]
pub struct Common {
    /// Config file of `section.key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override any config key, e.g. `--set penalty.eta=0.4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub grid_n: Option<String>,
    /// Half-width of the box `[-R, R]³`.
    #[arg(long)]
    pub grid_r: Option<String>,
    #[arg(long)]
    pub q: Option<String>,
    /// Charge; converted to `q`.
    #[arg(long)]
    pub mass: Option<String>,
    /// Penalty weight, a number or `auto`.
    #[arg(long = "penalty-m")]
    pub penalty_m: Option<String>,
    #[arg(long)]
    pub eta: Option<String>,
    #[arg(long)]
    pub tau_supp: Option<String>,
    #[arg(long)]
    pub tol: Option<String>,
    #[arg(long)]
    pub max_iters: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    /// `project` or `penalize`.
    #[arg(long)]
    pub mode: Option<String>,
    /// `tabulated` or `spectral`.
    #[arg(long)]
    pub kernel: Option<String>,
    /// ball | ellipsoid(a,b,c) | dumbbell(bulb,neck,len) | two_balls(sep) | preset name.
    #[arg(long)]
    pub shape: Option<String>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ground state on a fixed domain.
    GroundState {
        #[command(flatten)]
        common: Common,
    },
    /// Penalized shape minimization from an initial domain.
    Optimize {
        #[command(flatten)]
        common: Common,
    },
    /// One optimization per coupling value.
    SweepQ {
        #[command(flatten)]
        common: Common,
        /// Comma-separated coupling values.
        #[arg(long)]
        list: String,
        /// Runs in flight at once.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Tail-surgery trichotomy scan on a preset domain.
    SurgeryCheck {
        #[command(flatten)]
        common: Common,
        /// dumbbell | long_neck | fat_neck | ball
        #[arg(long, default_value = "dumbbell")]
        preset: String,
        /// Axis of the scan, 0-based.
        #[arg(long, default_value_t = 0)]
        axis: usize,
    },
    /// Coulomb energies of the scaling and multibump sequences.
    Counterexample {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "1,2,4")]
        n_list: String,
        /// Bump spacing in units of the bump radius.
        #[arg(long, default_value = "8,4,2.2")]
        separations: String,
        /// Scales of the single-bump sequence, computed on `[-1.5, 1.5]³`.
        #[arg(long, default_value = "0.5,0.25")]
        eps_list: String,
    },
    /// Ball ground states from the radial solver.
    Radial {
        #[arg(long, default_value = "0,0.01,0.02,0.05,0.1,0.2,0.5,1")]
        list: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Cross-section SVGs and q-curves from finished runs.
    Plot {
        /// Run directories, or sweep directories holding them.
        runs: Vec<PathBuf>,
        #[arg(long, default_value = "plots")]
        out: PathBuf,
    },
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match configure_threads().and_then(|_| execute(cli.command)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("coulomb-lab: {e}");
            e.exit_code()
        }
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV}: expected a positive integer, got `{v}`")))?;
    // Fails only if the pool already exists, e.g. on a second call in-process.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::GroundState { common } => ground_state_cmd(&resolve(RunConfig::default(), &common)?),
        Command::Optimize { common } => optimize_cmd(&resolve(RunConfig::default(), &common)?),
        Command::SweepQ { common, list, jobs } => {
            let qs = parse_list::<f64>("list", &list)?;
            if qs.iter().any(|q| !(q.is_finite() && *q >= 0.0)) {
                return Err(CliError::Usage("list: couplings must be finite and nonnegative".into()));
            }
            if jobs == 0 {
                return Err(CliError::Usage("jobs: must be positive".into()));
            }
            sweep_cmd(&resolve(RunConfig::default(), &common)?, &qs, jobs)
        }
        Command::SurgeryCheck { common, preset, axis } => {
            let mut base = RunConfig::default();
            let g = surgery::preset_grid();
            base.grid_n = g.n();
            base.grid_r = g.half_width();
            if axis > 2 {
                return Err(CliError::Usage("axis: must be 0, 1 or 2".into()));
            }
            surgery_cmd(&resolve(base, &common)?, &preset, axis)
        }
        Command::Counterexample {
            common,
            n_list,
            separations,
            eps_list,
        } => {
            let mut base = RunConfig::default();
            base.grid_n = 80;
            base.grid_r = 4.5;
            let ns = parse_list::<usize>("n-list", &n_list)?;
            let seps = parse_list::<f64>("separations", &separations)?;
            let eps = parse_list::<f64>("eps-list", &eps_list)?;
            counterexample_cmd(&resolve(base, &common)?, &ns, &seps, &eps)
        }
        Command::Radial { list, out } => radial_cmd(&parse_list::<f64>("list", &list)?, &out),
        Command::Plot { runs, out } => plot_cmd(&runs, &out),
    }
}

fn parse_list<T: std::str::FromStr>(name: &str, s: &str) -> Result<Vec<T>, CliError> {
    let v = s
        .split(',')
        .map(|t| t.trim())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<T>())
        .collect::<Result<Vec<T>, _>>()
        .map_err(|_| CliError::Usage(format!("{name}: cannot parse `{s}`")))?;
    if v.is_empty() {
        return Err(CliError::Usage(format!("{name}: empty list")));
    }
    Ok(v)
}

/// Builds the effective configuration on top of `base`.
pub fn resolve(base: RunConfig, common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = base;
    if let Some(path) = &common.config {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        cfg.apply_text(&text)?;
    }
    for pair in &common.set {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set: expected KEY=VALUE, got `{pair}`")))?;
        cfg.set(k.trim(), v)?;
    }
    let flags = [
        ("grid.n", &common.grid_n),
        ("grid.R", &common.grid_r),
        ("coupling.q", &common.q),
        ("coupling.mass", &common.mass),
        ("penalty.M", &common.penalty_m),
        ("penalty.eta", &common.eta),
        ("penalty.tau_supp", &common.tau_supp),
        ("solver.tol", &common.tol),
        ("solver.max_iters", &common.max_iters),
        ("solver.seed", &common.seed),
        ("solver.mode", &common.mode),
        ("solver.kernel", &common.kernel),
        ("init.shape", &common.shape),
        ("output.dir", &common.out),
    ];
    if common.q.is_some() && common.mass.is_some() {
        return Err(CliError::Usage("coupling: give exactly one of q or mass".into()));
    }
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    Ok(cfg)
}

/// Summary of one run, stored as `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub q: f64,
    /// `E_q` of the domain for `ground-state`; the penalized energy for `optimize`.
    pub energy: f64,
    pub lambda: f64,
    pub dirichlet: f64,
    pub coulomb: f64,
    pub iterations: usize,
    pub converged: bool,
    pub volume: f64,
    pub support_volume: Option<f64>,
    pub parts: Option<EnergyParts>,
    pub shape: ShapeReport,
}

/// One row of `sweep.csv` and of the plotted curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub q: f64,
    pub energy: f64,
    pub asymmetry: f64,
    pub phi_sup: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct NegMassRow {
    q: f64,
    neg_mass_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ResidualRow {
    iteration: usize,
    rayleigh: f64,
}

/// One row of `surgery.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurgeryRow {
    pub t: f64,
    pub eps: f64,
    pub delta: f64,
    pub mu: f64,
    pub m: f64,
    pub condition: String,
    #[serde(rename = "E_before")]
    pub e_before: f64,
    #[serde(rename = "E_after")]
    pub e_after: Option<f64>,
    pub sigma: f64,
    pub c4_ratio: f64,
    pub energy_drop: Option<f64>,
}

/// One row of `decay.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayCsvRow {
    pub n: usize,
    pub separation: f64,
    #[serde(rename = "D")]
    pub d: f64,
    pub self_term_prediction: f64,
    pub bound: f64,
    pub newton: f64,
    pub cross_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ScalingRow {
    eps: f64,
    #[serde(rename = "D")]
    d: f64,
    ratio_over_eps2: f64,
}

/// One row of `radial.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialRow {
    pub q: f64,
    pub energy: f64,
    pub lambda: f64,
    pub dirichlet: f64,
    #[serde(rename = "D")]
    pub coulomb: f64,
}

fn write_manifest(
    dir: &Path,
    command: &str,
    cfg: Option<&RunConfig>,
    resolved: serde_json::Value,
    started: Instant,
    outputs: &[&str],
) -> Result<(), CliError> {
    let manifest = serde_json::json!({
        "command": command,
        "config": cfg.map(|c| c.to_text()),
        "resolved": resolved,
        "versions": {
            "coulomb-lab": env!("CARGO_PKG_VERSION"),
            "coulomb-lab-cli": env!("CARGO_PKG_VERSION"),
        },
        "threads": rayon::current_num_threads(),
        "timings": { "wall_seconds": started.elapsed().as_secs_f64() },
        "outputs": outputs,
    });
    output::write_json(&dir.join("manifest.json"), &manifest)
}

fn save_fields(dir: &Path, u: &ScalarField, mask: &DomainMask) -> Result<(), CliError> {
    write_snapshot(u, "u", dir.join("u.scf"))?;
    write_snapshot(&mask.indicator(), "mask", dir.join("mask.scf"))?;
    if let Some(phi) = mask.level_set() {
        let phi = ScalarField::from_values(*mask.grid(), phi.to_vec())?;
        write_snapshot(&phi, "phi", dir.join("phi.scf"))?;
    }
    Ok(())
}

fn ground_state_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let started = Instant::now();
    let grid = cfg.grid()?;
    let q = cfg.coupling()?;
    let opts = cfg.solver_options()?;
    let kernel = CoulombKernel::new(grid, cfg.kernel);
    let mask = cfg.shape.shape().mask(grid);
    let gs = solve_ground_state(&mask, q, &kernel, &opts)?;
    let shape = shape_report(&mask, &gs, &opts)?;
    let report = RunReport {
        q,
        energy: gs.energy(),
        lambda: gs.lambda,
        dirichlet: gs.dirichlet,
        coulomb: gs.coulomb,
        iterations: gs.iterations,
        converged: true,
        volume: shape.volume,
        support_volume: None,
        parts: None,
        shape,
    };
    let dir = &cfg.out_dir;
    output::ensure_dir(dir)?;
    let trace: Vec<ResidualRow> = gs
        .history
        .iter()
        .enumerate()
        .map(|(i, &r)| ResidualRow {
            iteration: i + 1,
            rayleigh: r,
        })
        .collect();
    output::write_csv(&dir.join("trace.csv"), &trace)?;
    output::write_json(&dir.join("report.json"), &report)?;
    save_fields(dir, &gs.u, &mask)?;
    write_manifest(
        dir,
        "ground-state",
        Some(cfg),
        serde_json::json!({ "q": q }),
        started,
        &["trace.csv", "report.json", "u.scf", "mask.scf"],
    )?;
    println!(
        "lambda {} dirichlet {} coulomb {} volume {} iterations {}",
        report.lambda, report.dirichlet, report.coulomb, report.volume, report.iterations
    );
    Ok(())
}

/// Minimizes from the configured shape scaled to `|B₁|` and writes the run into `dir`.
pub fn optimize_run(cfg: &RunConfig, q: f64, kernel: &CoulombKernel, dir: &Path) -> Result<RunReport, CliError> {
    let grid = cfg.grid()?;
    let spec = cfg.penalty()?;
    let opts = cfg.minimize_options()?;
    let mask0 = cfg.shape.shape().normalized_to(grid, UNIT_BALL_VOLUME)?.mask(grid);
    let r = minimize_from_mask(&mask0, q, &spec, &opts, kernel)?;
    let gs = solve_ground_state_from(&r.mask, q, kernel, &opts.solver, Some(&r.u))?;
    let shape = shape_report(&r.mask, &gs, &opts.solver)?;
    let report = RunReport {
        q,
        energy: r.energy,
        lambda: gs.lambda,
        dirichlet: gs.dirichlet,
        coulomb: gs.coulomb,
        iterations: r.iterations,
        converged: r.converged,
        volume: r.volume,
        support_volume: Some(r.support_volume),
        parts: Some(r.parts),
        shape,
    };
    output::ensure_dir(dir)?;
    output::write_csv(&dir.join("trace.csv"), &r.history)?;
    output::write_json(&dir.join("report.json"), &report)?;
    save_fields(dir, &r.u, &r.mask)?;
    Ok(report)
}

fn optimize_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let started = Instant::now();
    let q = cfg.coupling()?;
    let spec = cfg.penalty()?;
    let kernel = CoulombKernel::new(cfg.grid()?, cfg.kernel);
    let report = optimize_run(cfg, q, &kernel, &cfg.out_dir)?;
    write_manifest(
        &cfg.out_dir,
        "optimize",
        Some(cfg),
        serde_json::json!({ "q": q, "M": spec.m }),
        started,
        &["trace.csv", "report.json", "u.scf", "mask.scf", "phi.scf"],
    )?;
    println!(
        "energy {} lambda {} volume {} asymmetry {} iterations {} converged {}",
        report.energy, report.lambda, report.volume, report.shape.asymmetry, report.iterations, report.converged
    );
    Ok(())
}

/// Directory name of a sweep member.
pub fn sweep_run_dir(q: f64) -> String {
    format!("q_{q}")
}

fn sweep_cmd(cfg: &RunConfig, qs: &[f64], jobs: usize) -> Result<(), CliError> {
    let started = Instant::now();
    let spec = cfg.penalty()?;
    let kernel = CoulombKernel::new(cfg.grid()?, cfg.kernel);
    output::ensure_dir(&cfg.out_dir)?;
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<RunReport, CliError>>>> = Mutex::new((0..qs.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs.min(qs.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= qs.len() {
                    break;
                }
                let dir = cfg.out_dir.join(sweep_run_dir(qs[i]));
                let r = optimize_run(cfg, qs[i], &kernel, &dir);
                if let Ok(rep) = &r {
                    eprintln!("finished q {}", rep.q);
                }
                results.lock().expect("no panics while holding the lock")[i] = Some(r);
            });
        }
    });
    let mut rows = Vec::with_capacity(qs.len());
    for r in results.into_inner().expect("workers joined") {
        let rep = r.expect("every run visited")?;
        rows.push(SweepRow {
            q: rep.q,
            energy: rep.energy,
            asymmetry: rep.shape.asymmetry,
            phi_sup: rep.shape.phi_sup,
        });
    }
    output::write_csv(&cfg.out_dir.join("sweep.csv"), &rows)?;
    write_manifest(
        &cfg.out_dir,
        "sweep-q",
        Some(cfg),
        serde_json::json!({ "list": qs, "jobs": jobs, "M": spec.m }),
        started,
        &["sweep.csv"],
    )?;
    for r in &rows {
        println!("q {} energy {} asymmetry {}", r.q, r.energy, r.asymmetry);
    }
    Ok(())
}

fn surgery_cmd(cfg: &RunConfig, preset: &str, axis: usize) -> Result<(), CliError> {
    let started = Instant::now();
    let grid = cfg.grid()?;
    let q = cfg.coupling()?;
    let opts = cfg.solver_options()?;
    let shape = surgery::preset(preset).ok_or_else(|| CliError::Usage(format!("preset: unknown `{preset}`")))?;
    let mask = shape.normalized_to(grid, UNIT_BALL_VOLUME)?.mask(grid);
    let kernel = CoulombKernel::new(grid, cfg.kernel);
    let gs = solve_ground_state(&mask, q, &kernel, &opts)?;
    let scan = ScanOptions {
        solver: opts,
        ..ScanOptions::default()
    };
    let outcomes = trichotomy_scan(&mask, &gs.u, q, axis, &kernel, &scan)?;
    let rows: Vec<SurgeryRow> = outcomes
        .iter()
        .map(|o| SurgeryRow {
            t: o.t_cut,
            eps: o.eps,
            delta: o.delta,
            mu: o.mu,
            m: o.m,
            condition: o.condition.to_string(),
            e_before: o.energy_before,
            e_after: o.energy_after,
            sigma: o.sigma,
            c4_ratio: o.c4_ratio,
            energy_drop: o.energy_drop,
        })
        .collect();
    let dir = &cfg.out_dir;
    output::ensure_dir(dir)?;
    output::write_csv(&dir.join("surgery.csv"), &rows)?;
    output::write_json(&dir.join("surgery.json"), &outcomes)?;
    let cond3 = rows.iter().filter(|r| r.condition == "COND3").count();
    write_manifest(
        dir,
        "surgery-check",
        Some(cfg),
        serde_json::json!({ "q": q, "preset": preset, "axis": axis, "cuts": rows.len(), "cond3": cond3 }),
        started,
        &["surgery.csv", "surgery.json"],
    )?;
    println!("{} cuts, {cond3} COND3", rows.len());
    Ok(())
}

/// Half-width of the box used for the scaling sequence.
pub const SCALING_HALF_WIDTH: f64 = 1.5;

fn counterexample_cmd(cfg: &RunConfig, ns: &[usize], seps: &[f64], eps: &[f64]) -> Result<(), CliError> {
    let started = Instant::now();
    let grid = cfg.grid()?;
    let kernel = CoulombKernel::new(grid, cfg.kernel);
    let d0 = base_energy(&kernel)?;
    // A single bump of radius ε ≤ 1 fits a tighter box, which keeps small ε resolved.
    let fine = Grid::new(grid.n(), SCALING_HALF_WIDTH)?;
    let fine_kernel = CoulombKernel::new(fine, cfg.kernel);
    let d0_fine = base_energy(&fine_kernel)?;
    let mut scaling = Vec::new();
    for &e in eps {
        let d = coulomb_energy(&scaling_sequence(fine, e, [0.0; 3])?, &fine_kernel)?;
        scaling.push(ScalingRow {
            eps: e,
            d,
            ratio_over_eps2: d / d0_fine / (e * e),
        });
    }
    let rows: Vec<DecayCsvRow> = decay_report(&kernel, ns, seps)?
        .into_iter()
        .map(|r| DecayCsvRow {
            n: r.n,
            separation: r.separation,
            d: r.d,
            self_term_prediction: r.self_term,
            bound: r.bound,
            newton: r.newton,
            cross_share: r.cross_share,
        })
        .collect();
    let dir = &cfg.out_dir;
    output::ensure_dir(dir)?;
    output::write_csv(&dir.join("decay.csv"), &rows)?;
    output::write_csv(&dir.join("scaling.csv"), &scaling)?;
    write_manifest(
        dir,
        "counterexample",
        Some(cfg),
        serde_json::json!({ "D_base": d0 }),
        started,
        &["decay.csv", "scaling.csv"],
    )?;
    for r in &rows {
        println!("n {} separation {} D {} bound {}", r.n, r.separation, r.d, r.bound);
    }
    Ok(())
}

fn radial_cmd(qs: &[f64], out: &Path) -> Result<(), CliError> {
    let started = Instant::now();
    let mut rows = Vec::new();
    for &q in qs {
        let s = ball_ground_state(q)?;
        rows.push(RadialRow {
            q,
            energy: s.energy,
            lambda: s.lambda,
            dirichlet: s.dirichlet,
            coulomb: s.coulomb,
        });
    }
    output::ensure_dir(out)?;
    output::write_csv(&out.join("radial.csv"), &rows)?;
    write_manifest(out, "radial", None, serde_json::json!({ "list": qs }), started, &["radial.csv"])?;
    for r in &rows {
        println!("q {} energy {}", r.q, r.energy);
    }
    Ok(())
}

/// Run directories among `paths`: each path itself if it holds `report.json`,
/// otherwise its immediate subdirectories that do, in name order.
fn collect_runs(paths: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut runs = Vec::new();
    for p in paths {
        if p.join("report.json").is_file() {
            runs.push(p.clone());
            continue;
        }
        let entries = std::fs::read_dir(p).map_err(|e| CliError::io(p, e))?;
        let mut subs: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|d| d.join("report.json").is_file())
            .collect();
        subs.sort();
        if subs.is_empty() {
            return Err(CliError::Io(format!("{}: no report.json found", p.display())));
        }
        runs.extend(subs);
    }
    Ok(runs)
}

/// Writes `section_<run>.svg` per run plus `curves.csv` and `neg_mass.csv` over all runs.
pub fn emit_plotdata(paths: &[PathBuf], out: &Path) -> Result<(), CliError> {
    if paths.is_empty() {
        return Err(CliError::Usage("plot: no runs given".into()));
    }
    let runs = collect_runs(paths)?;
    output::ensure_dir(out)?;
    let mut reports = Vec::new();
    for (i, dir) in runs.iter().enumerate() {
        let report: RunReport = output::read_json(&dir.join("report.json"))?;
        let (u, _) = read_snapshot(dir.join("u.scf"))?;
        let name = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("run{i}"));
        let svg = output::section_svg(&u, 0.5);
        let path = out.join(format!("section_{name}.svg"));
        std::fs::write(&path, svg).map_err(|e| CliError::io(&path, e))?;
        reports.push(report);
    }
    reports.sort_by(|a, b| a.q.total_cmp(&b.q));
    let curves: Vec<SweepRow> = reports
        .iter()
        .map(|r| SweepRow {
            q: r.q,
            energy: r.energy,
            asymmetry: r.shape.asymmetry,
            phi_sup: r.shape.phi_sup,
        })
        .collect();
    let neg: Vec<NegMassRow> = reports
        .iter()
        .map(|r| NegMassRow {
            q: r.q,
            neg_mass_fraction: r.shape.neg_mass_fraction,
        })
        .collect();
    output::write_csv(&out.join("curves.csv"), &curves)?;
    output::write_csv(&out.join("neg_mass.csv"), &neg)?;
    Ok(())
}

fn plot_cmd(paths: &[PathBuf], out: &Path) -> Result<(), CliError> {
    emit_plotdata(paths, out)?;
    println!("plots written to {}", out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_set_and_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "grid.n = 40\ncoupling.q = 0.3\n").unwrap();
        let common = Common {
            config: Some(path),
            set: vec!["grid.n=50".into(), "penalty.eta = 0.4".into()],
            grid_n: Some("60".into()),
            mass: Some("1.0".into()),
            ..Common::default()
        };
        let cfg = resolve(RunConfig::default(), &common).unwrap();
        assert_eq!(cfg.grid_n, 60);
        assert_eq!(cfg.eta, 0.4);
        // The mass flag replaces the q from the file.
        assert_eq!(cfg.q, None);
        assert_eq!(cfg.mass, Some(1.0));
    }

    #[test]
    fn error_kinds_map_to_exit_codes() {
        let usage: CliError = ConfigError::new("grid.n", "bad").into();
        assert_eq!(usage.exit_code(), 2);
        let solver: CliError = coulomb_lab::Error::NotConverged {
            what: "x",
            iterations: 1,
            residual: 1.0,
        }
        .into();
        assert_eq!(solver.exit_code(), 3);
        let io: CliError = coulomb_lab::Error::Io {
            path: "/nope".into(),
            source: std::io::Error::other("x"),
        }
        .into();
        assert_eq!(io.exit_code(), 4);
    }

    #[test]
    fn lists_parse() {
        assert_eq!(parse_list::<f64>("l", "0.2, 0.1,0.05").unwrap(), vec![0.2, 0.1, 0.05]);
        assert!(parse_list::<f64>("l", "").is_err());
        assert!(parse_list::<usize>("l", "1,x").is_err());
    }

    #[test]
    fn section_svg_is_well_formed() {
        let g = coulomb_lab::Grid::new(16, 1.5).unwrap();
        let u = ScalarField::from_fn(g, |p| (1.0 - (p[0] * p[0] + p[1] * p[1] + p[2] * p[2])).max(0.0));
        let svg = output::section_svg(&u, 0.5);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert!(svg.contains("<path"));
    }
}
