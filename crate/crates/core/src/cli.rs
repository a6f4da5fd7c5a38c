//! Command-line driver: `solve`, `sweep`, `simulate` and `verify`.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | I/O or numerical failure (e.g. an inner block not PD) |
//! | 2 | no bracketing multiplier found |
//! | 3 | invalid problem file or invalid arguments |
//! | 4 | `verify` ran but the KKT certificate failed |

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dual::{self, KktReport, SolveOptions, SolveResult, SweepTable};
use crate::error::Error;
use crate::moments::{self, GapReport};
use crate::montecarlo::{self, EmpiricalStats, TrajectoryRecord};
use crate::problem::{self, LqgProblem, ValidationReport};
use crate::riccati;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_BRACKET: i32 = 2;
pub const EXIT_INVALID: i32 = 3;
pub const EXIT_UNCERTIFIED: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "clqg",
    version,
    about = "Energy-constrained finite-horizon LQG solver"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: CommandKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum CommandName {
    Solve,
    Sweep,
    Simulate,
    Verify,
}

#[derive(Debug, Subcommand)]
pub enum CommandKind {
    /// Find the optimal multiplier and gains; writes result.json.
    Solve(CommonArgs),
    /// Tabulate f(λ), J_p and C over a grid; writes sweep.csv.
    Sweep(CommonArgs),
    /// Monte Carlo rollouts; writes trajectory.csv and histogram.csv.
    Simulate(CommonArgs),
    /// Solve and certify KKT residuals; writes verify.json.
    Verify(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Problem file (JSON).
    #[arg(long)]
    pub problem: PathBuf,
    /// Bisection accuracy on λ.
    #[arg(long, default_value_t = 1e-6)]
    pub eps: f64,
    /// Initial upper bracket for λ.
    #[arg(long = "lambda-bar", default_value_t = 100.0)]
    pub lambda_bar: f64,
    /// Fail instead of doubling λ̄ when f(λ̄) ≥ 0.
    #[arg(long = "no-auto-bracket")]
    pub no_auto_bracket: bool,
    /// λ grid for `sweep`, as START:STEP:END.
    #[arg(long, default_value = "0:0.05:5")]
    pub grid: String,
    /// Number of Monte Carlo samples.
    #[arg(long, default_value_t = 3000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Override the constraint level from the problem file.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Gains for `simulate` from an earlier result.json instead of solving.
    #[arg(long)]
    pub result: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: CommandName,
    pub problem_path: PathBuf,
    pub eps: f64,
    pub lambda_bar: f64,
    pub auto_bracket: bool,
    pub grid: (f64, f64, f64),
    pub samples: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub gamma: Option<f64>,
    pub result_path: Option<PathBuf>,
}

/// Parses `START:STEP:END`.
pub fn parse_grid(spec: &str) -> Result<(f64, f64, f64), Error> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || Error::InvalidArgument(format!("grid must be START:STEP:END, got `{spec}`"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let nums = parts
        .iter()
        .map(|s| s.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((nums[0], nums[1], nums[2]))
}

impl RunConfig {
    pub fn from_cli(cli: Cli) -> Result<Self, Error> {
        let (command, args) = match cli.command {
            CommandKind::Solve(a) => (CommandName::Solve, a),
            CommandKind::Sweep(a) => (CommandName::Sweep, a),
            CommandKind::Simulate(a) => (CommandName::Simulate, a),
            CommandKind::Verify(a) => (CommandName::Verify, a),
        };
        let cfg = RunConfig {
            command,
            problem_path: args.problem,
            eps: args.eps,
            lambda_bar: args.lambda_bar,
            auto_bracket: !args.no_auto_bracket,
            grid: parse_grid(&args.grid)?,
            samples: args.samples,
            seed: args.seed,
            out_dir: args.out,
            gamma: args.gamma,
            result_path: args.result,
        };
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<(), Error> {
        if !(self.eps > 0.0) {
            return Err(Error::InvalidArgument("--eps must be positive".into()));
        }
        if !(self.lambda_bar > 0.0) {
            return Err(Error::InvalidArgument(
                "--lambda-bar must be positive".into(),
            ));
        }
        if self.samples == 0 {
            return Err(Error::InvalidArgument(
                "--samples must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn solve_options(&self) -> SolveOptions {
        SolveOptions {
            eps: self.eps,
            lambda_bar: self.lambda_bar,
            auto_bracket: self.auto_bracket,
            f_tol: None,
        }
    }
}

/// Maps an error to its documented exit code.
pub fn exit_code(err: &Error) -> i32 {
    match err.root() {
        Error::BracketFailure { .. } => EXIT_BRACKET,
        Error::Parse(_)
        | Error::MissingField(_)
        | Error::DimensionMismatch { .. }
        | Error::Invalid(_)
        | Error::InvalidArgument(_) => EXIT_INVALID,
        _ => EXIT_FAILURE,
    }
}

/// Decimal text with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Contents of `result.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultFile {
    #[serde(flatten)]
    pub result: SolveResult,
    pub wall_clock_seconds: f64,
    pub kkt: KktReport,
}

/// Contents of `verify.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyFile {
    pub validation: ValidationReport,
    pub lambda_star: f64,
    pub f_residual: f64,
    pub gamma_effective: f64,
    pub kkt: KktReport,
    pub certified: bool,
}

fn load_validated(cfg: &RunConfig) -> Result<(LqgProblem, ValidationReport), Error> {
    let text = fs::read_to_string(&cfg.problem_path)?;
    let mut p = problem::load_problem(&text)?;
    if let Some(g) = cfg.gamma {
        p.gamma = g;
    }
    let report = problem::validate(&p).into_result()?;
    Ok((p, report))
}

pub fn load_result(path: &Path) -> Result<ResultFile, Error> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

pub fn sweep_csv(table: &SweepTable) -> String {
    let mut out = String::from("lambda,f,Jp,C\n");
    for row in &table.rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            fmt_f64(row.lambda),
            fmt_f64(row.f),
            fmt_f64(row.jp),
            fmt_f64(row.c)
        ));
    }
    out
}

/// `k, x_1..x_n, u_1..u_m`; the final row (`k = N`) has empty input cells.
pub fn trajectory_csv(rec: &TrajectoryRecord) -> String {
    let n = rec.states.first().map_or(0, Vec::len);
    let m = rec.inputs.first().map_or(0, Vec::len);
    let mut header = vec!["k".to_string()];
    header.extend((1..=n).map(|i| format!("x_{i}")));
    header.extend((1..=m).map(|i| format!("u_{i}")));
    let mut out = header.join(",") + "\n";
    for (k, x) in rec.states.iter().enumerate() {
        let mut cells = vec![k.to_string()];
        cells.extend(x.iter().map(|v| fmt_f64(*v)));
        match rec.inputs.get(k) {
            Some(u) => cells.extend(u.iter().map(|v| fmt_f64(*v))),
            None => cells.extend(std::iter::repeat_n(String::new(), m)),
        }
        out.push_str(&(cells.join(",") + "\n"));
    }
    out
}

pub fn histogram_csv(stats: &EmpiricalStats) -> String {
    let mut out = String::from("sample,objective,constraint\n");
    for (i, (o, c)) in stats
        .objective_samples
        .iter()
        .zip(&stats.constraint_samples)
        .enumerate()
    {
        out.push_str(&format!("{i},{},{}\n", fmt_f64(*o), fmt_f64(*c)));
    }
    out
}

fn solve_with_report(p: &LqgProblem, cfg: &RunConfig) -> Result<ResultFile, Error> {
    let started = Instant::now();
    let result = dual::solve(p, &cfg.solve_options())?;
    let wall_clock_seconds = started.elapsed().as_secs_f64();
    let kkt = dual::kkt_residuals(p, &result)?;
    Ok(ResultFile {
        result,
        wall_clock_seconds,
        kkt,
    })
}

pub fn run_solve(cfg: &RunConfig) -> Result<ResultFile, Error> {
    let (p, _) = load_validated(cfg)?;
    let file = solve_with_report(&p, cfg)?;
    fs::create_dir_all(&cfg.out_dir)?;
    write_json(&cfg.out_dir.join("result.json"), &file)?;
    println!(
        "lambda_star = {}  scenario = {:?}  C = {}  Jp = {}  iterations = {}",
        file.result.lambda_star,
        file.result.scenario,
        file.result.c,
        file.result.jp,
        file.result.iterations
    );
    Ok(file)
}

pub fn run_sweep(cfg: &RunConfig) -> Result<SweepTable, Error> {
    let (p, _) = load_validated(cfg)?;
    let (start, step, end) = cfg.grid;
    let grid = dual::linear_grid(start, step, end)?;
    let table = dual::lambda_sweep(&p, &grid)?;
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join("sweep.csv"), sweep_csv(&table))?;
    println!("wrote {} rows to sweep.csv", table.rows.len());
    Ok(table)
}

#[derive(Debug, Clone)]
pub struct SimulateOutput {
    pub stats: EmpiricalStats,
    pub trajectory: TrajectoryRecord,
    pub gap: GapReport,
}

pub fn run_simulate(cfg: &RunConfig) -> Result<SimulateOutput, Error> {
    let (p, _) = load_validated(cfg)?;
    let gains: Vec<DMatrix<f64>> = match &cfg.result_path {
        Some(path) => load_result(path)?.result.gains,
        None => dual::solve(&p, &cfg.solve_options())?.gains,
    };
    if gains.len() != p.horizon {
        return Err(Error::InvalidArgument(format!(
            "result holds {} gains but the problem horizon is {}",
            gains.len(),
            p.horizon
        )));
    }
    let analytic = moments::costs(&p, &moments::moment_forward(&p, &gains));
    let stats = montecarlo::simulate(&p, &gains, cfg.samples, cfg.seed)?;
    let trajectory = montecarlo::trajectory(&p, &gains, cfg.seed)?;
    let gap = moments::analytic_vs_empirical_gap(&analytic, &stats);

    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(
        cfg.out_dir.join("trajectory.csv"),
        trajectory_csv(&trajectory),
    )?;
    fs::write(cfg.out_dir.join("histogram.csv"), histogram_csv(&stats))?;
    println!(
        "objective: mean {} (se {}), analytic {}",
        stats.objective_mean, stats.objective_std_error, analytic.jp
    );
    println!(
        "constraint: mean {} (se {}), analytic {}",
        stats.constraint_mean, stats.constraint_std_error, analytic.c
    );
    Ok(SimulateOutput {
        stats,
        trajectory,
        gap,
    })
}

pub fn run_verify(cfg: &RunConfig) -> Result<VerifyFile, Error> {
    let text = fs::read_to_string(&cfg.problem_path)?;
    let mut p = problem::load_problem(&text)?;
    if let Some(g) = cfg.gamma {
        p.gamma = g;
    }
    let validation = problem::validate(&p);
    let out = if validation.ok {
        let file = solve_with_report(&p, cfg)?;
        let certified = file.kkt.certifies(&file.result)
            && file.kkt.riccati_resid <= 1e-10
            && riccati::riccati_backward(&p, file.result.lambda_star).is_ok();
        VerifyFile {
            validation,
            lambda_star: file.result.lambda_star,
            f_residual: file.result.f_residual,
            gamma_effective: file.result.gamma_effective,
            kkt: file.kkt,
            certified,
        }
    } else {
        let msg = validation.clone().into_result().unwrap_err();
        fs::create_dir_all(&cfg.out_dir)?;
        write_json(&cfg.out_dir.join("verify.json"), &validation)?;
        return Err(msg);
    };
    fs::create_dir_all(&cfg.out_dir)?;
    write_json(&cfg.out_dir.join("verify.json"), &out)?;
    println!(
        "certified = {}  stationarity = {:e}  slackness = {:e}",
        out.certified, out.kkt.stationarity_resid, out.kkt.slackness_resid
    );
    Ok(out)
}

/// Runs one command and returns its exit code. Failures print a single
/// message to standard error.
pub fn run(cfg: &RunConfig) -> i32 {
    let outcome = match cfg.command {
        CommandName::Solve => run_solve(cfg).map(|_| EXIT_OK),
        CommandName::Sweep => run_sweep(cfg).map(|_| EXIT_OK),
        CommandName::Simulate => run_simulate(cfg).map(|_| EXIT_OK),
        CommandName::Verify => run_verify(cfg).map(|v| {
            if v.certified {
                EXIT_OK
            } else {
                EXIT_UNCERTIFIED
            }
        }),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
