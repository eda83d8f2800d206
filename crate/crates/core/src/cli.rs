//! Command-line experiment runner: config merging, the seven experiments,
//! JSON/CSV output and exit codes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bifurcation::{sweep, BifurcationPoint, MIN_TOL};
use crate::field::{
    boundary_degree_k, dichotomy_check, escape_metric, gl_descent, lift_pair, mode_purity,
    random_init, sign_normalize, BoundaryKind, DescentOptions, Dichotomy, DiskGrid,
    EnergyBreakdown, VectorField, DEFAULT_DESCENT_TOL, DEFAULT_MAX_ITERS, DEFAULT_NR,
    DEFAULT_NTHETA,
};
use crate::harmonic::{
    equator_hm_margin_experiment, hm_descent, horizontal_init, SphereField, StabilityVerdict,
};
use crate::potential::PotentialSpec;
use crate::radial::{
    escaping_seed, radial_energy, solve_flat, solve_pair_with, NewtonOptions, PairSolution,
    ProfilePair, RadialGrid, DEFAULT_MAX_NEWTON, DEFAULT_NODES, DEFAULT_TOL, MIN_PAIR_NODES,
};
use crate::spectral::{first_eigenvalue, LinearizedOperator};

pub const THREADS_ENV: &str = "GL_DICHOTOMY_THREADS";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Scan used by `horizontal` when no `--horizontal-a` is given.
pub const DEFAULT_SCAN: [f64; 6] = [1.5, 2.0, 2.2, 2.4048, 2.6, 3.0];
/// The scan straddles `a^2 = λ_1` within `10^-4`, so it runs on a finer
/// grid and to a tighter tolerance than the other field experiments.
pub const SCAN_NR: usize = 256;
pub const SCAN_NTHETA: usize = 1024;
pub const SCAN_TOL: f64 = 1e-11;
/// Amplitude of the first-eigenfunction kick in the horizontal init.
pub const SCAN_PERTURBATION: f64 = 0.01;

#[derive(Debug, Parser)]
#[command(name = "gl-dichotomy", version, about = "Ginzburg-Landau and harmonic-map experiments on the disk")]
pub struct Cli {
    /// TOML or JSON file with experiment settings; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Radial profile pair (f, g), or the flat profile when none escapes.
    Profile(ExperimentConfig),
    /// First eigenvalue of the flat branch linearisation.
    Eigen(ExperimentConfig),
    /// Bifurcation thresholds eps_1 .. eps_kmax.
    Bifurcate(ExperimentConfig),
    /// Full-field Ginzburg-Landau minimisation on the disk.
    Minimize2d(ExperimentConfig),
    /// Sphere-valued Dirichlet minimisation.
    Harmonic(ExperimentConfig),
    /// Stability of the equator map in dimension m.
    Equator(ExperimentConfig),
    /// Escape scan over horizontal boundary data.
    Horizontal(ExperimentConfig),
}

impl Command {
    fn split(self) -> (Experiment, ExperimentConfig) {
        match self {
            Command::Profile(c) => (Experiment::Profile, c),
            Command::Eigen(c) => (Experiment::Eigen, c),
            Command::Bifurcate(c) => (Experiment::Bifurcate, c),
            Command::Minimize2d(c) => (Experiment::Minimize2d, c),
            Command::Harmonic(c) => (Experiment::Harmonic, c),
            Command::Equator(c) => (Experiment::Equator, c),
            Command::Horizontal(c) => (Experiment::Horizontal, c),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Profile,
    Eigen,
    Bifurcate,
    Minimize2d,
    Harmonic,
    Equator,
    Horizontal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum InitKind {
    /// Lift of the escaping radial seed (degree data) or the kicked
    /// horizontal map (horizontal data).
    Escaping,
    /// Seeded uniform draw from the unit ball.
    Random,
}

/// Every setting of every experiment; each experiment reads the ones it needs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, Args)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[arg(skip)]
    pub experiment: Option<Experiment>,
    /// quartic | exponential
    #[arg(long)]
    pub potential: Option<String>,
    /// One or more values, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub epsilon: Option<Vec<f64>>,
    #[arg(long, visible_alias = "k", allow_hyphen_values = true)]
    pub degree: Option<i32>,
    /// One or more values, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub horizontal_a: Option<Vec<f64>>,
    /// Target dimension n of u: Ω -> R^n.
    #[arg(long)]
    pub n_target: Option<usize>,
    /// Radial grid nodes for profile, eigen and bifurcate.
    #[arg(long)]
    pub nodes: Option<usize>,
    #[arg(long)]
    pub nr: Option<usize>,
    #[arg(long)]
    pub ntheta: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub kmax: Option<i32>,
    #[arg(long, visible_alias = "equator-m")]
    pub m: Option<usize>,
    /// Sign of the third component of the initial guess.
    #[arg(long, allow_hyphen_values = true)]
    pub sign: Option<f64>,
    #[arg(long, value_enum)]
    pub init: Option<InitKind>,
    /// Output path stem; writes `<out>.json` and CSV tables next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Fields set in `self` win over `base`.
    pub fn overlay(self, base: ExperimentConfig) -> ExperimentConfig {
        ExperimentConfig {
            experiment: self.experiment.or(base.experiment),
            potential: self.potential.or(base.potential),
            epsilon: self.epsilon.or(base.epsilon),
            degree: self.degree.or(base.degree),
            horizontal_a: self.horizontal_a.or(base.horizontal_a),
            n_target: self.n_target.or(base.n_target),
            nodes: self.nodes.or(base.nodes),
            nr: self.nr.or(base.nr),
            ntheta: self.ntheta.or(base.ntheta),
            seed: self.seed.or(base.seed),
            tol: self.tol.or(base.tol),
            max_iters: self.max_iters.or(base.max_iters),
            kmax: self.kmax.or(base.kmax),
            m: self.m.or(base.m),
            sign: self.sign.or(base.sign),
            init: self.init.or(base.init),
            out: self.out.or(base.out),
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Solver(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Solver(_) | CliError::Io(_) => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Solver(_) => "solver",
            CliError::Io(_) => "io",
        }
    }

    /// Machine-readable error record for stderr.
    pub fn record(&self) -> String {
        serde_json::json!({
            "error": self.kind(),
            "message": self.to_string(),
            "exit_code": self.exit_code(),
            "version": VERSION,
        })
        .to_string()
    }
}

fn solver<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Solver(e.to_string())
}

fn config(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// Reads a config file, by extension.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| config(format!("cannot read {}: {e}", path.display())))?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => toml::from_str(&text).map_err(|e| config(format!("{}: {e}", path.display()))),
        Some("json") => {
            serde_json::from_str(&text).map_err(|e| config(format!("{}: {e}", path.display())))
        }
        _ => Err(config(format!("{}: config must end in .toml or .json", path.display()))),
    }
}

/// Resolves the subcommand and config file into one config.
pub fn resolve(cli: Cli) -> Result<ExperimentConfig, CliError> {
    let file = match &cli.config {
        Some(p) => load_config(p)?,
        None => ExperimentConfig::default(),
    };
    let flags = match cli.command {
        Some(cmd) => {
            let (exp, mut c) = cmd.split();
            c.experiment = Some(exp);
            c
        }
        None => ExperimentConfig::default(),
    };
    let merged = flags.overlay(file);
    if merged.experiment.is_none() {
        return Err(config("no experiment: give a subcommand or `experiment` in the config file"));
    }
    Ok(merged)
}

/// Caps the global worker pool from the environment.
pub fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
    // a pool may already exist when called twice in one process
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Settings every summary records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunMeta {
    pub version: String,
    pub potential: String,
    pub grid: GridMeta,
    pub tol: f64,
    pub max_iters: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridMeta {
    pub radial_nodes: Option<usize>,
    pub nr: Option<usize>,
    pub ntheta: Option<usize>,
    pub n_target: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Summary {
    pub meta: RunMeta,
    pub result: ExperimentResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "lowercase")]
pub enum ExperimentResult {
    Profile { runs: Vec<ProfileRun> },
    Eigen { runs: Vec<EigenRun> },
    Bifurcate { points: Vec<BifurcationPoint>, strictly_increasing: bool },
    Minimize2d { runs: Vec<FieldRun> },
    Harmonic(HarmonicResult),
    Equator(StabilityVerdict),
    Horizontal { lambda1_disk: f64, rows: Vec<HorizontalRow> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Escaping,
    Flat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileRun {
    pub epsilon: f64,
    pub k: i32,
    pub branch: Branch,
    pub newton_iterations: usize,
    pub f_boundary: f64,
    pub g_boundary: f64,
    pub g_max: f64,
    pub energy: f64,
    pub csv: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EigenRun {
    pub k: i32,
    pub epsilon: f64,
    pub lambda1: f64,
    pub residual: f64,
    pub iterations: usize,
    pub csv: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldRun {
    pub epsilon: f64,
    pub boundary: BoundaryKind,
    pub init: InitKind,
    pub iterations: usize,
    pub grad_norm: f64,
    pub energy: EnergyBreakdown,
    pub energy_total: f64,
    pub escape_metric: f64,
    pub max_norm: f64,
    pub mode_purity: Option<f64>,
    pub dichotomy: Option<Dichotomy>,
    pub csv: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarmonicResult {
    pub boundary: BoundaryKind,
    pub init: InitKind,
    pub iterations: usize,
    pub grad_norm: f64,
    pub energy: f64,
    pub escape_metric: f64,
    pub unit_defect: f64,
    pub mode_purity: Option<f64>,
    pub csv: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizontalRow {
    pub a: f64,
    pub a_squared: f64,
    pub hm_escape: f64,
    pub hm_iterations: usize,
    pub gl: Vec<GlEscape>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlEscape {
    pub epsilon: f64,
    pub escape_metric: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct ExitReport {
    pub summary: Summary,
    /// Files written, JSON summary last.
    pub files: Vec<PathBuf>,
}

/// Resolved settings with defaults filled in.
struct Plan {
    experiment: Experiment,
    spec: PotentialSpec,
    c: ExperimentConfig,
    tol: f64,
    max_iters: usize,
    seed: u64,
}

impl Plan {
    fn new(c: ExperimentConfig) -> Result<Self, CliError> {
        let experiment = c.experiment.ok_or_else(|| config("no experiment given"))?;
        let spec = PotentialSpec::by_name(c.potential.as_deref().unwrap_or("quartic"))
            .map_err(|e| config(e.to_string()))?;
        let (tol, max_iters) = match experiment {
            Experiment::Profile | Experiment::Eigen => (DEFAULT_TOL, DEFAULT_MAX_NEWTON),
            Experiment::Bifurcate => (MIN_TOL, 0),
            Experiment::Minimize2d | Experiment::Harmonic => (DEFAULT_DESCENT_TOL, DEFAULT_MAX_ITERS),
            Experiment::Horizontal => (SCAN_TOL, DEFAULT_MAX_ITERS),
            Experiment::Equator => (0.0, 0),
        };
        let tol = c.tol.unwrap_or(tol);
        let max_iters = c.max_iters.unwrap_or(max_iters);
        if !(tol.is_finite() && tol >= 0.0) {
            return Err(config(format!("tol must be nonnegative, got {tol}")));
        }
        if let Some(eps) = &c.epsilon {
            if eps.is_empty() || eps.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
                return Err(config("epsilon values must be positive"));
            }
        }
        if let Some(a) = &c.horizontal_a {
            if a.is_empty() || a.iter().any(|x| !x.is_finite()) {
                return Err(config("horizontal-a values must be finite"));
            }
        }
        if let Some(s) = c.sign {
            if s != 1.0 && s != -1.0 {
                return Err(config(format!("sign must be 1 or -1, got {s}")));
            }
        }
        let seed = c.seed.unwrap_or(0);
        Ok(Self { experiment, spec, c, tol, max_iters, seed })
    }

    fn epsilons(&self) -> Result<Vec<f64>, CliError> {
        let mut e = self.c.epsilon.clone().ok_or_else(|| config("--epsilon is required"))?;
        e.sort_by(f64::total_cmp);
        e.dedup();
        Ok(e)
    }

    fn degree(&self) -> Result<i32, CliError> {
        match self.c.degree {
            Some(0) => Err(config("degree must be nonzero")),
            Some(k) => Ok(k),
            None => Err(config("--degree is required")),
        }
    }

    fn radial_grid(&self) -> Result<RadialGrid, CliError> {
        let n = self.c.nodes.unwrap_or(DEFAULT_NODES);
        if n < MIN_PAIR_NODES {
            return Err(config(format!("nodes must be >= {MIN_PAIR_NODES}, got {n}")));
        }
        RadialGrid::disk(n).map_err(|e| config(e.to_string()))
    }

    fn disk_grid(&self, nr: usize, ntheta: usize) -> Result<DiskGrid, CliError> {
        DiskGrid::new(self.c.nr.unwrap_or(nr), self.c.ntheta.unwrap_or(ntheta))
            .map_err(|e| config(e.to_string()))
    }

    fn n_target(&self) -> Result<usize, CliError> {
        let n = self.c.n_target.unwrap_or(3);
        if n < 3 {
            return Err(config(format!("n-target must be >= 3, got {n}")));
        }
        Ok(n)
    }

    fn descent(&self) -> DescentOptions {
        DescentOptions { tol: self.tol, max_iters: self.max_iters }
    }

    fn meta(&self, grid: GridMeta) -> RunMeta {
        RunMeta {
            version: VERSION.to_string(),
            potential: self.spec.name().to_string(),
            grid,
            tol: self.tol,
            max_iters: self.max_iters,
            seed: self.seed,
        }
    }
}

/// Output files for `count` CSV tables under the `out` stem.
fn csv_paths(out: Option<&Path>, count: usize) -> Vec<Option<PathBuf>> {
    (0..count)
        .map(|i| {
            out.map(|p| {
                if count == 1 {
                    with_suffix(p, ".csv")
                } else {
                    with_suffix(p, &format!("-{i}.csv"))
                }
            })
        })
        .collect()
}

fn with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn name_of(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

/// Runs one experiment and writes its outputs.
pub fn run(c: ExperimentConfig) -> Result<ExitReport, CliError> {
    let plan = Plan::new(c)?;
    let out = plan.c.out.clone();
    let mut tables: Vec<(PathBuf, String)> = Vec::new();
    let summary = match plan.experiment {
        Experiment::Profile => run_profile(&plan, out.as_deref(), &mut tables)?,
        Experiment::Eigen => run_eigen(&plan, out.as_deref(), &mut tables)?,
        Experiment::Bifurcate => run_bifurcate(&plan)?,
        Experiment::Minimize2d => run_minimize(&plan, out.as_deref(), &mut tables)?,
        Experiment::Harmonic => run_harmonic(&plan, out.as_deref(), &mut tables)?,
        Experiment::Equator => run_equator(&plan)?,
        Experiment::Horizontal => run_horizontal(&plan)?,
    };
    let mut files = Vec::new();
    if let Some(stem) = &out {
        if let Some(dir) = stem.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        for (path, body) in tables {
            std::fs::write(&path, body)?;
            files.push(path);
        }
        let json = with_suffix(stem, ".json");
        std::fs::write(&json, to_json(&summary))?;
        files.push(json);
    }
    Ok(ExitReport { summary, files })
}

pub fn to_json(summary: &Summary) -> String {
    let mut s = serde_json::to_string_pretty(summary).expect("summary serialises");
    s.push('\n');
    s
}

fn run_profile(plan: &Plan, out: Option<&Path>, tables: &mut Vec<(PathBuf, String)>) -> Result<Summary, CliError> {
    let eps = plan.epsilons()?;
    let k = plan.degree()?;
    let grid = plan.radial_grid()?;
    let opts = NewtonOptions { tol: plan.tol, max_iter: plan.max_iters };
    let paths = csv_paths(out, eps.len());
    let solved: Vec<Result<(ProfilePair, Branch), CliError>> = eps
        .par_iter()
        .map(|&e| match solve_pair_with(e, k, &plan.spec, &grid, None, opts).map_err(solver)? {
            PairSolution::Escaping(p) => Ok((p, Branch::Escaping)),
            PairSolution::NoEscapingSolution => {
                let flat = solve_flat(e, k, &plan.spec, &grid).map_err(solver)?;
                let pair = ProfilePair {
                    grid,
                    g: vec![0.0; flat.vals.len()],
                    f: flat.vals,
                    epsilon: e,
                    k,
                    newton_iterations: flat.newton_iterations,
                };
                Ok((pair, Branch::Flat))
            }
        })
        .collect();
    let mut runs = Vec::new();
    for (res, path) in solved.into_iter().zip(paths) {
        let (pair, branch) = res?;
        let last = pair.f.len() - 1;
        runs.push(ProfileRun {
            epsilon: pair.epsilon,
            k,
            branch,
            newton_iterations: pair.newton_iterations,
            f_boundary: pair.f[last],
            g_boundary: pair.g[last],
            g_max: pair.g.iter().fold(0.0f64, |m, v| m.max(v.abs())),
            energy: radial_energy(&pair, &plan.spec).total(),
            csv: name_of(&path),
        });
        if let Some(p) = path {
            tables.push((p, pair.to_csv()));
        }
    }
    let grid_meta = GridMeta { radial_nodes: Some(grid.count()), nr: None, ntheta: None, n_target: None };
    Ok(Summary { meta: plan.meta(grid_meta), result: ExperimentResult::Profile { runs } })
}

fn run_eigen(plan: &Plan, out: Option<&Path>, tables: &mut Vec<(PathBuf, String)>) -> Result<Summary, CliError> {
    let eps = plan.epsilons()?;
    let k = plan.degree()?;
    let grid = plan.radial_grid()?;
    let paths = csv_paths(out, eps.len());
    let solved: Vec<Result<_, CliError>> = eps
        .par_iter()
        .map(|&e| {
            let flat = solve_flat(e, k, &plan.spec, &grid).map_err(solver)?;
            first_eigenvalue(&LinearizedOperator::from_scalar(&flat, &plan.spec)).map_err(solver)
        })
        .collect();
    let mut runs = Vec::new();
    for (res, path) in solved.into_iter().zip(paths) {
        let r = res?;
        if let Some(p) = &path {
            let mut s = String::from("r,val\n");
            for (x, v) in grid.nodes().iter().zip(&r.eigenfunction) {
                let _ = writeln!(s, "{x:.16e},{v:.16e}");
            }
            tables.push((p.clone(), s));
        }
        runs.push(EigenRun {
            k: r.k,
            epsilon: r.epsilon,
            lambda1: r.lambda1,
            residual: r.residual,
            iterations: r.iterations,
            csv: name_of(&path),
        });
    }
    let grid_meta = GridMeta { radial_nodes: Some(grid.count()), nr: None, ntheta: None, n_target: None };
    Ok(Summary { meta: plan.meta(grid_meta), result: ExperimentResult::Eigen { runs } })
}

fn run_bifurcate(plan: &Plan) -> Result<Summary, CliError> {
    let grid = plan.radial_grid()?;
    let kmax = plan.c.kmax.unwrap_or(3);
    if kmax < 1 {
        return Err(config(format!("kmax must be >= 1, got {kmax}")));
    }
    if plan.tol < MIN_TOL {
        return Err(config(format!("tol must be >= {MIN_TOL} for bisection, got {}", plan.tol)));
    }
    let points = sweep(kmax, &plan.spec, &grid, plan.tol).map_err(solver)?;
    let strictly_increasing = points.windows(2).all(|w| w[0].epsilon_k < w[1].epsilon_k);
    let grid_meta = GridMeta { radial_nodes: Some(grid.count()), nr: None, ntheta: None, n_target: None };
    Ok(Summary {
        meta: plan.meta(grid_meta),
        result: ExperimentResult::Bifurcate { points, strictly_increasing },
    })
}

/// Boundary data requested by `--degree` or a single `--horizontal-a`.
enum Data {
    Degree(i32),
    Horizontal(f64),
}

fn field_data(plan: &Plan) -> Result<Data, CliError> {
    match (plan.c.degree, &plan.c.horizontal_a) {
        (Some(_), Some(_)) => Err(config("give either --degree or --horizontal-a, not both")),
        (Some(_), None) => Ok(Data::Degree(plan.degree()?)),
        (None, Some(a)) if a.len() == 1 => Ok(Data::Horizontal(a[0])),
        (None, Some(_)) => Err(config("a single --horizontal-a value is expected here")),
        (None, None) => Err(config("--degree or --horizontal-a is required")),
    }
}

fn initial_field(plan: &Plan, data: &Data, grid: &DiskGrid, n: usize) -> Result<VectorField, CliError> {
    let sign = plan.c.sign.unwrap_or(1.0);
    let init = plan.c.init.unwrap_or(InitKind::Escaping);
    match (data, init) {
        (Data::Degree(k), InitKind::Escaping) => {
            if n != 3 {
                return Err(config("the escaping degree-k init needs n-target = 3; use --init random"));
            }
            let seed = escaping_seed(*k, &grid.radial_grid());
            lift_pair(&seed, sign, grid).map_err(solver)
        }
        (Data::Degree(k), InitKind::Random) => {
            let b = boundary_degree_k(*k, n, grid).map_err(solver)?;
            Ok(random_init(grid, &b, plan.seed))
        }
        (Data::Horizontal(a), InitKind::Escaping) => {
            let mut f = horizontal_init(*a, n, grid, sign * SCAN_PERTURBATION).map_err(solver)?.into_field();
            f.boundary = crate::field::boundary_horizontal(*a, n, grid).map_err(solver)?;
            Ok(f)
        }
        (Data::Horizontal(a), InitKind::Random) => {
            let b = crate::field::boundary_horizontal(*a, n, grid).map_err(solver)?;
            Ok(random_init(grid, &b, plan.seed))
        }
    }
}

fn run_minimize(plan: &Plan, out: Option<&Path>, tables: &mut Vec<(PathBuf, String)>) -> Result<Summary, CliError> {
    let eps = plan.epsilons()?;
    let data = field_data(plan)?;
    let n = plan.n_target()?;
    let grid = plan.disk_grid(DEFAULT_NR, DEFAULT_NTHETA)?;
    let init = initial_field(plan, &data, &grid, n)?;
    let paths = csv_paths(out, eps.len());
    let solved: Vec<Result<_, CliError>> = eps
        .par_iter()
        .map(|&e| gl_descent(&init, e, &plan.spec, plan.descent()).map_err(solver))
        .collect();
    let mut runs = Vec::new();
    for ((res, path), &e) in solved.into_iter().zip(paths).zip(&eps) {
        let r = res?;
        let (purity, dichotomy) = match data {
            Data::Degree(k) => {
                let normalized = sign_normalize(&r.field, n).map_err(solver)?;
                (
                    Some(mode_purity(&r.field, k).map_err(solver)?),
                    Some(dichotomy_check(&normalized, n).map_err(solver)?),
                )
            }
            Data::Horizontal(_) => (None, None),
        };
        runs.push(FieldRun {
            epsilon: e,
            boundary: r.field.boundary.kind,
            init: plan.c.init.unwrap_or(InitKind::Escaping),
            iterations: r.iterations,
            grad_norm: r.grad_norm,
            energy: r.energy,
            energy_total: r.energy.total(),
            escape_metric: escape_metric(&r.field, n).map_err(solver)?,
            max_norm: r.field.max_norm(),
            mode_purity: purity,
            dichotomy,
            csv: name_of(&path),
        });
        if let Some(p) = path {
            tables.push((p, r.field.to_csv()));
        }
    }
    let grid_meta = GridMeta { radial_nodes: None, nr: Some(grid.n_r()), ntheta: Some(grid.n_theta()), n_target: Some(n) };
    Ok(Summary { meta: plan.meta(grid_meta), result: ExperimentResult::Minimize2d { runs } })
}

fn run_harmonic(plan: &Plan, out: Option<&Path>, tables: &mut Vec<(PathBuf, String)>) -> Result<Summary, CliError> {
    if plan.c.m.is_some() {
        if plan.c.degree.is_some() || plan.c.horizontal_a.is_some() {
            return Err(config("give exactly one of --degree, --horizontal-a, --equator-m"));
        }
        return run_equator(plan);
    }
    let data = field_data(plan)?;
    let n = plan.n_target()?;
    let grid = plan.disk_grid(DEFAULT_NR, DEFAULT_NTHETA)?;
    let init = SphereField::project(initial_field(plan, &data, &grid, n)?).map_err(solver)?;
    let r = hm_descent(&init, plan.descent()).map_err(solver)?;
    let path = csv_paths(out, 1).pop().flatten();
    let field = r.field.field();
    let purity = match data {
        Data::Degree(k) => Some(mode_purity(field, k).map_err(solver)?),
        Data::Horizontal(_) => None,
    };
    let result = HarmonicResult {
        boundary: field.boundary.kind,
        init: plan.c.init.unwrap_or(InitKind::Escaping),
        iterations: r.iterations,
        grad_norm: r.grad_norm,
        energy: r.energy,
        escape_metric: escape_metric(field, n).map_err(solver)?,
        unit_defect: r.max_unit_defect,
        mode_purity: purity,
        csv: name_of(&path),
    };
    if let Some(p) = path {
        tables.push((p, field.to_csv()));
    }
    let grid_meta = GridMeta { radial_nodes: None, nr: Some(grid.n_r()), ntheta: Some(grid.n_theta()), n_target: Some(n) };
    Ok(Summary { meta: plan.meta(grid_meta), result: ExperimentResult::Harmonic(result) })
}

fn run_equator(plan: &Plan) -> Result<Summary, CliError> {
    let m = plan.c.m.ok_or_else(|| config("--m is required"))?;
    if !(2..=10).contains(&m) {
        return Err(config(format!("m must be in 2..=10, got {m}")));
    }
    let verdict = equator_hm_margin_experiment(m).map_err(solver)?;
    let grid_meta = GridMeta { radial_nodes: None, nr: None, ntheta: None, n_target: None };
    Ok(Summary { meta: plan.meta(grid_meta), result: ExperimentResult::Equator(verdict) })
}

fn run_horizontal(plan: &Plan) -> Result<Summary, CliError> {
    let mut scan = plan.c.horizontal_a.clone().unwrap_or_else(|| DEFAULT_SCAN.to_vec());
    scan.sort_by(f64::total_cmp);
    scan.dedup();
    let eps = match &plan.c.epsilon {
        Some(_) => plan.epsilons()?,
        None => Vec::new(),
    };
    let n = plan.n_target()?;
    let grid = plan.disk_grid(SCAN_NR, SCAN_NTHETA)?;
    let lambda1 = first_eigenvalue(&LinearizedOperator::laplacian(grid.radial_grid()))
        .map_err(solver)?
        .lambda1;
    let opts = plan.descent();
    let rows: Vec<Result<HorizontalRow, CliError>> = scan
        .par_iter()
        .map(|&a| {
            let init = horizontal_init(a, n, &grid, SCAN_PERTURBATION).map_err(solver)?;
            let hm = hm_descent(&init, opts).map_err(solver)?;
            let mut gl = Vec::with_capacity(eps.len());
            for &e in &eps {
                let r = gl_descent(init.field(), e, &plan.spec, opts).map_err(solver)?;
                gl.push(GlEscape {
                    epsilon: e,
                    escape_metric: escape_metric(&r.field, n).map_err(solver)?,
                    iterations: r.iterations,
                });
            }
            Ok(HorizontalRow {
                a,
                a_squared: a * a,
                hm_escape: escape_metric(hm.field.field(), n).map_err(solver)?,
                hm_iterations: hm.iterations,
                gl,
            })
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>, _>>()?;
    let grid_meta = GridMeta { radial_nodes: None, nr: Some(grid.n_r()), ntheta: Some(grid.n_theta()), n_target: Some(n) };
    Ok(Summary {
        meta: plan.meta(grid_meta),
        result: ExperimentResult::Horizontal { lambda1_disk: lambda1, rows },
    })
}

/// Entry point for the binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let err = config(e.to_string().trim().to_string());
            eprintln!("{}", err.record());
            return err.exit_code();
        }
    };
    let result = init_threads().and_then(|_| resolve(cli)).and_then(run);
    match result {
        Ok(report) => {
            print!("{}", to_json(&report.summary));
            0
        }
        Err(e) => {
            eprintln!("{}", e.record());
            e.exit_code()
        }
    }
}
