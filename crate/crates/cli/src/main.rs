//! `consensus-lp`: generate instances, solve them, and check results against
//! the reference oracle.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success (`solve`: converged; `check`: within tolerance) |
//! | 1 | usage, I/O or parse error, invalid parameters, oracle cap exceeded |
//! | 2 | `solve`: iteration limit reached |
//! | 3 | `solve`: an inequality row cannot hold on the box |
//! | 4 | `solve`: inner box-QP failed to converge |
//! | 5 | `check`: gap or violation over tolerance |

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use consensus_lp::trace::{NullSink, TraceSink};
use consensus_lp::{
    generate_instance, parse_problem, partition, run_with, solve_reference, CsvTraceWriter,
    GeneratorOptions, OracleError, OracleStatus, PenaltyMode, ProblemSpec, ProxSchedule,
    RunOptions, SolveReport, SolveStatus, SolverConfig, Workers,
};

const THREADS_ENV: &str = "CONSENSUS_LP_THREADS";
const CHECK_GAP_REL: f64 = 1e-4;
const CHECK_VIOLATION: f64 = 1e-6;

const EXIT_ERROR: u8 = 1;
const EXIT_MAX_ITERS: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;
const EXIT_INNER_FAILURE: u8 = 4;
const EXIT_CHECK_FAILED: u8 = 5;

#[derive(Parser)]
#[command(name = "consensus-lp", version, about = "Consensus-block LP solver")]
#[command(after_help = "Exit codes: 0 success, 1 error, 2 max_iters, 3 infeasible_flagged, \
4 inner failure, 5 check over tolerance.\nCONSENSUS_LP_THREADS sets the worker count (0 = one per block).")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the solver on a problem file.
    Solve(SolveArgs),
    /// Write a random feasible instance.
    Gen(GenArgs),
    /// Compare a solve report with the reference oracle.
    Check(CheckArgs),
}

#[derive(Args)]
struct SolveArgs {
    /// Problem JSON file.
    #[arg(long)]
    problem: PathBuf,
    /// Number of consensus blocks.
    #[arg(long = "N", default_value_t = 1)]
    blocks: usize,
    /// Number of subvectors per block.
    #[arg(long = "M", default_value_t = 1)]
    subvectors: usize,
    /// Report JSON output (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-iteration trace CSV output.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Certify the merit rate bound after the run (consensus-only, constant schedule).
    #[arg(long)]
    rate_check: bool,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScheduleArg {
    Constant,
    Normalized,
}

#[derive(Clone, Copy, ValueEnum)]
enum PenaltyArg {
    Full,
    ConsensusOnly,
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long, default_value_t = 1.0)]
    rho: f64,
    #[arg(long, default_value_t = 0.5)]
    alpha_w: f64,
    #[arg(long, default_value_t = 0.5)]
    alpha_mu: f64,
    #[arg(long, default_value_t = 0.5)]
    alpha_nu: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma0: f64,
    #[arg(long, default_value_t = 1.0)]
    tau0: f64,
    #[arg(long, default_value_t = 1.0)]
    gamma0: f64,
    #[arg(long, value_enum, default_value = "constant")]
    prox_schedule: ScheduleArg,
    #[arg(long, value_enum, default_value = "full")]
    penalty_mode: PenaltyArg,
    #[arg(long, default_value_t = 1e6)]
    dual_bound: f64,
    /// Iterations at the start that use ascent multiplier steps.
    #[arg(long, default_value_t = 0)]
    ascent_phase_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol_residual: f64,
    #[arg(long, default_value_t = 1e-9)]
    tol_merit: f64,
    #[arg(long, default_value_t = 50_000)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-12)]
    subqp_tol: f64,
    #[arg(long, default_value_t = 10_000)]
    subqp_max_sweeps: usize,
}

impl ConfigArgs {
    fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            rho: self.rho,
            alpha_w: self.alpha_w,
            alpha_mu: self.alpha_mu,
            alpha_nu: self.alpha_nu,
            sigma0: self.sigma0,
            tau0: self.tau0,
            gamma0: self.gamma0,
            block_params: Vec::new(),
            prox_schedule: match self.prox_schedule {
                ScheduleArg::Constant => ProxSchedule::Constant,
                ScheduleArg::Normalized => ProxSchedule::Normalized,
            },
            penalty_mode: match self.penalty_mode {
                PenaltyArg::Full => PenaltyMode::Full,
                PenaltyArg::ConsensusOnly => PenaltyMode::ConsensusOnly,
            },
            dual_bound: self.dual_bound,
            ascent_phase_iters: self.ascent_phase_iters,
            tol_residual: self.tol_residual,
            tol_merit: self.tol_merit,
            max_iters: self.max_iters,
            subqp_tol: self.subqp_tol,
            subqp_max_sweeps: self.subqp_max_sweeps,
        }
    }
}

#[derive(Args)]
struct GenArgs {
    /// Number of variables.
    #[arg(long)]
    n: usize,
    /// Inequality rows.
    #[arg(long, default_value_t = 0)]
    p: usize,
    /// Equality rows (at most n).
    #[arg(long, default_value_t = 0)]
    q: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Problem JSON output.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long)]
    problem: PathBuf,
    /// Report JSON written by `solve`.
    #[arg(long)]
    report: PathBuf,
}

/// Error reported on stderr with exit code 1.
struct Failure(String);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string())
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure(format!("{}: {e}", path.display())))
}

fn load_problem(path: &Path) -> Result<ProblemSpec, Failure> {
    parse_problem(&read(path)?).map_err(|e| Failure(format!("{}: {e}", path.display())))
}

fn workers() -> Result<Workers, Failure> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Workers::Threads)
            .map_err(|_| Failure(format!("{THREADS_ENV}={v:?} is not a thread count"))),
        Err(_) => Ok(Workers::Threads(0)),
    }
}

fn solve(args: SolveArgs) -> Result<u8, Failure> {
    let spec = load_problem(&args.problem)?;
    let plan = partition(&spec, args.blocks, args.subvectors)?;
    let cfg = args.config.solver_config();
    let opts = RunOptions {
        workers: workers()?,
        rate_check: args.rate_check,
    };
    let report = match &args.trace {
        Some(path) => {
            let file = File::create(path).map_err(|e| Failure(format!("{}: {e}", path.display())))?;
            let mut sink = CsvTraceWriter::new(BufWriter::new(file));
            let report = run_with(&spec, &plan, &cfg, &opts, &mut sink as &mut dyn TraceSink)?;
            sink.into_inner()?;
            report
        }
        None => run_with(&spec, &plan, &cfg, &opts, &mut NullSink)?,
    };
    let json = report.to_json();
    match &args.out {
        Some(path) => fs::write(path, json + "\n").map_err(|e| Failure(format!("{}: {e}", path.display())))?,
        None => println!("{json}"),
    }
    Ok(match report.status {
        SolveStatus::Converged => 0,
        SolveStatus::MaxIters => EXIT_MAX_ITERS,
        SolveStatus::InfeasibleFlagged => EXIT_INFEASIBLE,
        SolveStatus::InnerFailure => EXIT_INNER_FAILURE,
    })
}

fn gen(args: GenArgs) -> Result<u8, Failure> {
    let inst = generate_instance(args.seed, args.n, args.p, args.q, &GeneratorOptions::default())?;
    fs::write(&args.out, inst.spec.to_json() + "\n").map_err(|e| Failure(format!("{}: {e}", args.out.display())))?;
    println!("x0 = {}", serde_json::to_string(&inst.x0)?);
    println!("margin = {}", serde_json::to_string(&inst.margin)?);
    Ok(0)
}

fn check(args: CheckArgs) -> Result<u8, Failure> {
    let spec = load_problem(&args.problem)?;
    let report = SolveReport::from_json(&read(&args.report)?)
        .map_err(|e| Failure(format!("{}: {e}", args.report.display())))?;
    if report.z.len() != spec.n {
        return Err(Failure(format!("report has {} variables, problem has {}", report.z.len(), spec.n)));
    }
    let cert = solve_reference(&spec).map_err(|e| match e {
        OracleError::OverCap { .. } => Failure(e.to_string()),
        other => Failure(format!("oracle failed: {other}")),
    })?;
    if cert.status == OracleStatus::Infeasible {
        println!("oracle: problem is infeasible");
        return Ok(EXIT_CHECK_FAILED);
    }
    let f_z = spec.objective(&report.z);
    let gap = (f_z - cert.f_star).abs();
    let gap_tol = CHECK_GAP_REL * cert.f_star.abs().max(1.0);
    let violation = spec.max_violation(&report.z);
    println!("f* = {:.12e}", cert.f_star);
    println!("f(Z) = {f_z:.12e}");
    println!("gap = {gap:.3e} (tolerance {gap_tol:.3e}, {})", if gap <= gap_tol { "within" } else { "exceeded" });
    println!("violation = {violation:.3e} (tolerance {CHECK_VIOLATION:.0e})");
    println!("kkt residual at x* = {:.3e}", cert.kkt_residual);
    Ok(if gap <= gap_tol && violation <= CHECK_VIOLATION { 0 } else { EXIT_CHECK_FAILED })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Command::Solve(a) => solve(a),
        Command::Gen(a) => gen(a),
        Command::Check(a) => check(a),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(Failure(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
