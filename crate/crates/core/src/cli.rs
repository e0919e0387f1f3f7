//! Command-line driver: single solves, uniform convergence studies and
//! adaptive studies.
//!
//! Settings come from flags, then an optional flat `key = value` file, then
//! built-in defaults. Result files are written to a temporary name and
//! renamed once complete, so a failed run leaves no partial CSV behind.
//! Exit codes: 0 success, 1 invalid arguments, 2 IO failure, 3 solver
//! failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use crate::adapt::{adaptive_loop, AdaptParams, Column, ConvergenceHistory, Refinement};
use crate::assembly::{Method, MethodConfig};
use crate::error::{invalid, Error, Result};
use crate::estimator::estimate;
use crate::mesh::{generate_unit_square, Grid, Triangulation};
use crate::optctrl::{cost, solve_optimality_with, Discretization, OptimalitySolution, ProblemSpec};
use crate::probes::{coercivity_probe, inf_sup_constant, w_norm_constant};
use crate::spaces::{Bounds, FeFunction, FeSpace};
use crate::verify::{
    error_norms, error_table_csv, error_table_text, example1_bounded, example2_bounded, neumann_smooth_bounded,
    uniform_study, ManufacturedCase, RateBase, StudyRow, DEFAULT_BOUNDS,
};

/// Default output directory when neither `--output` nor the config file names one.
pub const OUTPUT_ENV: &str = "STOKES_OPTCTRL_OUTPUT";

pub const EXIT_INVALID: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;

/// Dense probes refuse larger velocity spaces.
pub const PROBE_MAX_COEFFS: usize = 4000;

#[derive(Debug, Parser)]
#[command(
    name = "stokes-optctrl",
    version,
    about = "Optimal control of Stokes flow with CR and DG finite elements"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve once and write indicators, optionally dumping mesh, matrices and solution.
    Solve(RunArgs),
    /// Uniform study on n = 4, 8, ..., 4 * 2^(levels-1) with an error table.
    Study(RunArgs),
    /// Adaptive and uniform refinement histories with a plot script.
    Adapt(RunArgs),
}

#[derive(Clone, Debug, Default, Args)]
pub struct RunArgs {
    /// Flat key = value file; flags override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// ex1 (unit square), ex2 (L-shape corner singularity) or neumann (boundary control).
    #[arg(long)]
    pub problem: Option<String>,
    /// Mesh file in the text format written by --dump-mesh (solve and adapt).
    #[arg(long)]
    pub mesh: Option<PathBuf>,
    /// cr or dg.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Lower control bound, both components.
    #[arg(long, allow_negative_numbers = true)]
    pub lower: Option<f64>,
    /// Upper control bound, both components.
    #[arg(long, allow_negative_numbers = true)]
    pub upper: Option<f64>,
    /// Structured mesh subdivisions (solve and the adaptive initial mesh).
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub levels: Option<usize>,
    #[arg(long)]
    pub max_ndof: Option<usize>,
    #[arg(long)]
    pub theta: Option<f64>,
    /// adapt: run uniform refinement only.
    #[arg(long)]
    pub uniform: bool,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Seed of the randomized probes.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub dump_mesh: bool,
    #[arg(long)]
    pub dump_matrices: bool,
    #[arg(long)]
    pub dump_solution: bool,
    /// study: solve the levels concurrently.
    #[arg(long)]
    pub parallel: bool,
    /// Write 0 in the seconds column so outputs are reproducible byte for byte.
    #[arg(long)]
    pub no_timing: bool,
    /// solve: run the dense coercivity, inf-sup and W-norm probes.
    #[arg(long)]
    pub probes: bool,
}

const CONFIG_KEYS: [&str; 20] = [
    "problem",
    "mesh",
    "method",
    "sigma",
    "lambda",
    "lower",
    "upper",
    "n",
    "levels",
    "max-ndof",
    "theta",
    "uniform",
    "output",
    "seed",
    "dump-mesh",
    "dump-matrices",
    "dump-solution",
    "parallel",
    "no-timing",
    "probes",
];

/// Parses `key = value` lines; `#` starts a comment and `_` in keys reads as `-`.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| invalid(format!("config line {}: expected key = value", k + 1)))?;
        let key = key.trim().replace('_', "-");
        if !CONFIG_KEYS.contains(&key.as_str()) {
            return Err(invalid(format!("config line {}: unknown key {key:?}", k + 1)));
        }
        if out.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(invalid(format!("config line {}: duplicate key {key:?}", k + 1)));
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Problem {
    Ex1,
    Ex2,
    Neumann,
}

impl FromStr for Problem {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ex1" => Ok(Problem::Ex1),
            "ex2" => Ok(Problem::Ex2),
            "neumann" => Ok(Problem::Neumann),
            other => Err(invalid(format!(
                "unknown problem {other:?} (expected ex1, ex2 or neumann)"
            ))),
        }
    }
}

impl Problem {
    pub fn name(self) -> &'static str {
        match self {
            Problem::Ex1 => "ex1",
            Problem::Ex2 => "ex2",
            Problem::Neumann => "neumann",
        }
    }
}

/// Fully resolved settings of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub problem: Problem,
    pub mesh: Option<PathBuf>,
    pub method: MethodConfig,
    pub lambda: f64,
    pub bounds: Bounds,
    pub n: Option<usize>,
    pub levels: usize,
    pub max_ndof: usize,
    pub theta: f64,
    pub uniform: bool,
    pub output: PathBuf,
    pub seed: u64,
    pub dump_mesh: bool,
    pub dump_matrices: bool,
    pub dump_solution: bool,
    pub parallel: bool,
    pub timing: bool,
    pub probes: bool,
}

fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| invalid(format!("cannot parse {key} = {v:?}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(invalid(format!("cannot parse {key} = {v:?} as a boolean"))),
    }
}

impl RunConfig {
    /// Flags first, then `file`, then `env_output` for the directory, then defaults.
    pub fn resolve(args: &RunArgs, file: &BTreeMap<String, String>, env_output: Option<&str>) -> Result<Self> {
        fn pick<T: FromStr>(flag: Option<T>, file: &BTreeMap<String, String>, key: &str) -> Result<Option<T>> {
            match flag {
                Some(v) => Ok(Some(v)),
                None => file.get(key).map(|v| parse_value(key, v)).transpose(),
            }
        }
        let flag = |set: bool, key: &str| -> Result<bool> {
            Ok(set || file.get(key).map(|v| parse_bool(key, v)).transpose()?.unwrap_or(false))
        };
        let problem: Problem = pick(args.problem.clone(), file, "problem")?
            .unwrap_or_else(|| "ex1".into())
            .parse()?;
        let method_name: String = pick(args.method.clone(), file, "method")?.unwrap_or_else(|| "cr".into());
        let sigma = pick(args.sigma, file, "sigma")?;
        let method = match method_name.as_str() {
            "cr" => MethodConfig::cr(),
            "dg" => MethodConfig::dg(sigma.unwrap_or(MethodConfig::dg(10.0).sigma)),
            other => return Err(invalid(format!("unknown method {other:?} (expected cr or dg)"))),
        };
        if method.method == Method::Cr && sigma.is_some() {
            return Err(invalid("sigma applies to the dg method only"));
        }
        method.validate()?;
        let lambda = pick(args.lambda, file, "lambda")?.unwrap_or(1.0);
        if !(lambda > 0.0) {
            return Err(invalid(format!("lambda must be positive, got {lambda}")));
        }
        let lower = pick(args.lower, file, "lower")?.unwrap_or(DEFAULT_BOUNDS.0);
        let upper = pick(args.upper, file, "upper")?.unwrap_or(DEFAULT_BOUNDS.1);
        let bounds = Bounds::scalar(lower, upper)?;
        let n = pick(args.n, file, "n")?;
        if n == Some(0) {
            return Err(invalid("n must be positive"));
        }
        let levels = pick(args.levels, file, "levels")?.unwrap_or(6);
        if levels == 0 {
            return Err(invalid("levels must be positive"));
        }
        let theta = pick(args.theta, file, "theta")?.unwrap_or(0.3);
        if !(theta > 0.0 && theta <= 1.0) {
            return Err(invalid(format!("theta must lie in (0, 1], got {theta}")));
        }
        let output = match pick(args.output.clone(), file, "output")? {
            Some(p) => p,
            None => PathBuf::from(env_output.filter(|s| !s.is_empty()).unwrap_or("out")),
        };
        Ok(Self {
            problem,
            mesh: pick(args.mesh.clone(), file, "mesh")?,
            method,
            lambda,
            bounds,
            n,
            levels,
            max_ndof: pick(args.max_ndof, file, "max-ndof")?.unwrap_or(100_000),
            theta,
            uniform: flag(args.uniform, "uniform")?,
            output,
            seed: pick(args.seed, file, "seed")?.unwrap_or(0),
            dump_mesh: flag(args.dump_mesh, "dump-mesh")?,
            dump_matrices: flag(args.dump_matrices, "dump-matrices")?,
            dump_solution: flag(args.dump_solution, "dump-solution")?,
            parallel: flag(args.parallel, "parallel")?,
            timing: !flag(args.no_timing, "no-timing")?,
            probes: flag(args.probes, "probes")?,
        })
    }

    /// Problem data and, for the manufactured examples, the exact solution.
    pub fn problem_data(&self) -> Result<(ProblemSpec, Option<ManufacturedCase>)> {
        match self.problem {
            Problem::Ex1 => {
                let case = example1_bounded(self.lambda, self.bounds)?;
                Ok((case.spec()?, Some(case)))
            }
            Problem::Ex2 => {
                let (case, checks) = example2_bounded(self.lambda, self.bounds)?;
                for c in &checks {
                    eprintln!(
                        "profile {:?}: momentum {:.2e} divergence {:.2e} corner trace {:.2e}{}",
                        c.profile,
                        c.momentum,
                        c.divergence,
                        c.corner_trace,
                        if c.passes() { " (selected)" } else { "" }
                    );
                }
                Ok((case.spec()?, Some(case)))
            }
            Problem::Neumann => Ok((neumann_smooth_bounded(self.lambda, self.bounds)?, None)),
        }
    }

    fn initial_mesh(&self, case: Option<&ManufacturedCase>, default_n: usize) -> Result<Triangulation> {
        if let Some(path) = &self.mesh {
            return Triangulation::from_text(&fs::read_to_string(path)?);
        }
        let n = self.n.unwrap_or(default_n);
        match case {
            Some(c) => c.mesh(n),
            None => generate_unit_square(n),
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e.root() {
        Error::Io(_) => EXIT_IO,
        Error::SolverFailure { .. } | Error::ConvergenceFailure { .. } | Error::IterationFailure { .. } => EXIT_SOLVER,
        _ => EXIT_INVALID,
    }
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| invalid(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, contents)?;
    if let Err(e) = fs::rename(&tmp, path) {
        let _ = fs::remove_file(&tmp);
        return Err(e.into());
    }
    Ok(())
}

/// Buffered outputs, written only after the whole command succeeded.
struct Outputs {
    dir: PathBuf,
    files: Vec<(String, String)>,
}

impl Outputs {
    fn new(dir: &Path) -> Self {
        Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        }
    }

    fn add(&mut self, name: impl Into<String>, contents: String) {
        self.files.push((name.into(), contents));
    }

    fn commit(self) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(&self.dir)?;
        let mut written = Vec::new();
        for (name, contents) in &self.files {
            let path = self.dir.join(name);
            write_atomic(&path, contents)?;
            written.push(path);
        }
        Ok(written)
    }
}

/// `field,index,value` rows for the free coefficients of `fields`.
fn coefficient_csv(fields: &[(&str, &FeSpace, &FeFunction)]) -> String {
    let mut s = String::from("field,index,value\n");
    for (name, space, f) in fields {
        for (i, v) in f.coeffs.iter().enumerate() {
            if let Some(k) = space.free_index(i) {
                let _ = writeln!(s, "{name},{k},{v:.16e}");
            }
        }
    }
    s
}

fn solution_dumps(out: &mut Outputs, disc: &Discretization, sol: &OptimalitySolution) {
    out.add(
        "solution.csv",
        coefficient_csv(&[
            ("u", &disc.vel, &sol.u),
            ("p", &disc.pres, &sol.p),
            ("y", &disc.control, &sol.y),
        ]),
    );
    out.add(
        "adjoint.csv",
        coefficient_csv(&[("phi", &disc.vel, &sol.phi), ("r", &disc.pres, &sol.r)]),
    );
}

fn matrix_dumps(out: &mut Outputs, disc: &Discretization) {
    for (name, m) in [("A", &disc.a), ("B", &disc.b), ("M", &disc.m), ("C", &disc.c)] {
        out.add(format!("matrix_{name}.txt"), m.to_coordinate_text());
    }
}

pub fn cmd_solve(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let (spec, case) = cfg.problem_data()?;
    let grid = Grid::new(cfg.initial_mesh(case.as_ref(), 8)?);
    let disc = Discretization::new(&grid, &spec, &cfg.method)?;
    let sol = solve_optimality_with(&grid, &disc, &spec, &cfg.method)?;
    let ind = estimate(&grid, &disc, &spec, &sol, &cfg.method)?;
    let j = cost(&grid, &disc, &spec, &sol.u, &sol.y, cfg.method.error_order)?;
    println!(
        "{} {:?}: {} triangles, Ndof {}, {} active-set iterations, cost {:.10e}, eta {:.6e}",
        cfg.problem.name(),
        cfg.method.method,
        grid.n_triangles(),
        disc.ndof(),
        sol.iterations,
        j,
        ind.total()
    );
    if let Some(c) = &case {
        let e = error_norms(&grid, &disc, &sol, c, &cfg.method)?;
        println!(
            "errors: u {:.6e} p {:.6e} phi {:.6e} r {:.6e} y {:.6e} total {:.6e}",
            e.u_energy,
            e.p_l2,
            e.phi_energy,
            e.r_l2,
            e.y,
            e.total()
        );
    }
    let mut out = Outputs::new(&cfg.output);
    out.add("indicators.csv", ind.to_csv());
    if cfg.dump_mesh {
        out.add("mesh.txt", grid.mesh.to_text());
    }
    if cfg.dump_matrices {
        matrix_dumps(&mut out, &disc);
    }
    if cfg.dump_solution {
        solution_dumps(&mut out, &disc, &sol);
    }
    if cfg.probes {
        out.add("probes.csv", probe_csv(cfg, &grid, &spec, &disc)?);
    }
    out.commit()
}

fn probe_csv(cfg: &RunConfig, grid: &Grid, spec: &ProblemSpec, disc: &Discretization) -> Result<String> {
    if disc.vel.n_coeffs() > PROBE_MAX_COEFFS {
        return Err(invalid(format!(
            "probes are dense; the velocity space has {} coefficients (limit {PROBE_MAX_COEFFS})",
            disc.vel.n_coeffs()
        )));
    }
    let mut s = String::from("probe,value\n");
    if cfg.method.method == Method::Dg {
        let c = coercivity_probe(grid, spec.kind, cfg.method.sigma, 100, cfg.seed)?;
        let _ = writeln!(s, "coercivity_min_eigenvalue,{:.12e}", c.min_eigenvalue);
        let _ = writeln!(s, "coercivity_min_sampled,{:.12e}", c.min_sampled);
        let _ = writeln!(s, "coercivity_passes,{}", c.passes());
    }
    let _ = writeln!(s, "inf_sup,{:.12e}", inf_sup_constant(grid, spec, &cfg.method)?);
    let _ = writeln!(
        s,
        "w_norm_constant,{:.12e}",
        w_norm_constant(grid, spec.kind, &cfg.method)?
    );
    Ok(s)
}

fn study_rows(case: &ManufacturedCase, cfg: &RunConfig) -> Result<Vec<StudyRow>> {
    const N0: usize = 4;
    if !cfg.parallel {
        return uniform_study(case, &cfg.method, N0, cfg.levels);
    }
    let results: Vec<Result<Vec<StudyRow>>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..cfg.levels)
            .map(|k| s.spawn(move || uniform_study(case, &cfg.method, N0 << k, 1).map_err(|e| e.at_level(k))))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(invalid("study worker panicked"))))
            .collect()
    });
    let mut rows = Vec::with_capacity(cfg.levels);
    for r in results {
        rows.extend(r?);
    }
    Ok(rows)
}

pub fn cmd_study(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let (_, case) = cfg.problem_data()?;
    let case = case.ok_or_else(|| invalid(format!("{} has no exact solution to study", cfg.problem.name())))?;
    let rows = study_rows(&case, cfg)?;
    print!("{}", error_table_text(&rows));
    let mut out = Outputs::new(&cfg.output);
    let method = match cfg.method.method {
        Method::Cr => "cr",
        Method::Dg => "dg",
    };
    out.add(
        format!("study_{}_{method}.csv", cfg.problem.name()),
        error_table_csv(&rows),
    );
    out.commit()
}

/// Log-log plot of the estimator and total error against Ndof.
pub const PLOT_SCRIPT: &str = r#"#!/usr/bin/env python3
"""Plot convergence histories written by `stokes-optctrl adapt`."""
import csv
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

here = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).parent
fig, ax = plt.subplots(figsize=(6, 4.5))
for name, marker in (("uniform", "s"), ("adaptive", "o")):
    path = here / f"history_{name}.csv"
    if not path.exists():
        continue
    rows = list(csv.DictReader(path.open()))
    ndof = [float(r["Ndof"]) for r in rows]
    ax.loglog(ndof, [float(r["eta_total"]) for r in rows], marker + "-", label=f"eta ({name})")
    if rows[0]["err_u_energy"]:
        cols = ("err_u_energy", "err_p_l2", "err_phi_energy", "err_r_l2", "err_y")
        err = [sum(float(r[c]) for c in cols) for r in rows]
        ax.loglog(ndof, err, marker + "--", label=f"total error ({name})")
n0, n1 = 1e3, 1e5
for rate, style in ((0.25, ":"), (0.5, "-.")):
    ax.loglog([n0, n1], [1.0, (n1 / n0) ** -rate], "k" + style, label=f"Ndof^-{rate}")
ax.set_xlabel("Ndof")
ax.legend()
fig.tight_layout()
fig.savefig(here / "convergence.png", dpi=150)
"#;

fn history_summary(name: &str, h: &ConvergenceHistory) -> String {
    let last = h.levels.len().min(5);
    let rate = |col| {
        h.fitted_rate(col, RateBase::Ndof, last)
            .map_or_else(|_| "-".to_string(), |r| format!("{r:.3}"))
    };
    let mut s = format!(
        "{name}: {} levels, final Ndof {}",
        h.levels.len(),
        h.levels.last().map_or(0, |l| l.ndof)
    );
    let _ = write!(s, ", eta rate {}", rate(Column::Eta));
    if h.levels.first().is_some_and(|l| l.errors.is_some()) {
        let _ = write!(s, ", total error rate {}", rate(Column::ErrTotal));
    }
    let _ = write!(s, " (wrt Ndof, last {last} levels)");
    s
}

pub fn cmd_adapt(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let (spec, case) = cfg.problem_data()?;
    let initial = cfg.initial_mesh(case.as_ref(), 2)?;
    let mut out = Outputs::new(&cfg.output);
    let modes: &[(Refinement, &str)] = if cfg.uniform {
        &[(Refinement::Uniform, "uniform")]
    } else {
        &[(Refinement::Uniform, "uniform"), (Refinement::Adaptive, "adaptive")]
    };
    for &(refinement, name) in modes {
        let params = AdaptParams {
            theta: cfg.theta,
            max_ndof: cfg.max_ndof,
            refinement,
            ..AdaptParams::default()
        };
        let run = adaptive_loop(initial.clone(), &spec, case.as_ref(), &cfg.method, &params)?;
        println!("{}", history_summary(name, &run.history));
        out.add(format!("history_{name}.csv"), run.history.to_csv(cfg.timing));
        if cfg.dump_mesh {
            out.add(format!("mesh_{name}.txt"), run.grid.mesh.to_text());
        }
        if cfg.dump_solution {
            out.add(format!("indicators_{name}.csv"), run.indicators.to_csv());
        }
    }
    out.add("plot_history.py", PLOT_SCRIPT.to_string());
    out.commit()
}

type CommandFn = fn(&RunConfig) -> Result<Vec<PathBuf>>;

pub fn run(cli: Cli) -> Result<Vec<PathBuf>> {
    let (args, cmd): (&RunArgs, CommandFn) = match &cli.command {
        Command::Solve(a) => (a, cmd_solve),
        Command::Study(a) => (a, cmd_study),
        Command::Adapt(a) => (a, cmd_adapt),
    };
    let file = match &args.config {
        Some(p) => parse_config_text(&fs::read_to_string(p)?)?,
        None => BTreeMap::new(),
    };
    let env = std::env::var(OUTPUT_ENV).ok();
    cmd(&RunConfig::resolve(args, &file, env.as_deref())?)
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(paths) => {
            for p in paths {
                println!("wrote {}", p.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
