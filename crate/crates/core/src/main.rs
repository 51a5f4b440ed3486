use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use conicsqp::diagnostics::{DiagnosticsConfig, ProbeConfig};
use conicsqp::error::{Error, Result};
use conicsqp::harness::{self, RunReport};
use conicsqp::problem::{KKTPair, ProblemSpec};
use conicsqp::sqp::SQPConfig;

#[derive(Parser)]
#[command(name = "conicsqp", version, about = "Basic SQP and second-order stability diagnostics for conic programs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Seed for every randomized component.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads for parallel probes (defaults to all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Also write the machine-readable report here.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct Point {
    /// Primal point, comma separated.
    #[arg(long = "x0", visible_alias = "x", allow_hyphen_values = true)]
    x: Option<String>,
    /// Multiplier, comma separated.
    #[arg(long = "lam0", visible_alias = "lam", allow_hyphen_values = true)]
    lam: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the basic SQP method.
    Solve {
        /// Registry name or problem file.
        problem: String,
        #[command(flatten)]
        point: Point,
        #[arg(long, default_value_t = 50)]
        max_iters: usize,
        /// Localization radius.
        #[arg(long, default_value_t = 1.0)]
        delta: f64,
        /// Stopping tolerance on the KKT residual.
        #[arg(long, default_value_t = 1e-12)]
        tol: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Classify a KKT point.
    Diagnose {
        problem: String,
        #[command(flatten)]
        point: Point,
        /// Skip the empirical calmness probe.
        #[arg(long)]
        no_probe: bool,
        /// KKT residual gate.
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Empirical isolated-calmness probe at a KKT point.
    ProbeCalmness {
        problem: String,
        #[command(flatten)]
        point: Point,
        /// Random directions per radius on top of the coordinate axes.
        #[arg(long, default_value_t = 8)]
        directions: usize,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Compare the closed-form second subderivative with the numerical oracle.
    OracleCheck {
        /// Cone kinds such as soc3, orthant4, zero2 (repeatable).
        #[arg(long, required = true, value_delimiter = ',')]
        cone: Vec<String>,
        /// Samples per cone.
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[command(flatten)]
        common: Common,
    },
    /// List the built-in problems.
    ListProblems,
}

fn point_or(p: &ProblemSpec, point: &Point, fallback: Option<KKTPair>) -> Result<KKTPair> {
    let x = point.x.as_deref().map(harness::parse_vector).transpose()?;
    let lam = point.lam.as_deref().map(harness::parse_vector).transpose()?;
    let (x, lam) = match (x, lam, fallback) {
        (Some(x), Some(l), _) => (x, l),
        (x, l, Some(f)) => (x.unwrap_or(f.x), l.unwrap_or(f.lam)),
        (x, l, None) => (x.unwrap_or_else(|| vec![0.0; p.n]), l.unwrap_or_else(|| vec![0.0; p.m()])),
    };
    if x.len() != p.n {
        return Err(Error::DimensionMismatch { expected: p.n, got: x.len() });
    }
    if lam.len() != p.m() {
        return Err(Error::DimensionMismatch { expected: p.m(), got: lam.len() });
    }
    Ok(KKTPair::new(x, lam))
}

/// Registry known point (first one) or the problem's reference pair.
fn default_point(name: &str, p: &ProblemSpec) -> Result<KKTPair> {
    harness::registry_entry(name)
        .and_then(|e| e.known_points.first().map(|k| k.point.clone()))
        .or_else(|| p.reference.clone())
        .ok_or_else(|| Error::InsufficientData("no point given and the problem has no reference; pass --x and --lam".into()))
}

fn emit(report: &RunReport, json: &Option<PathBuf>) -> Result<()> {
    if let Some(path) = json {
        std::fs::write(path, report.to_json() + "\n").map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Solve { problem, point, max_iters, delta, tol, common } => {
            let p = harness::load_problem(&problem)?;
            let z0 = point_or(&p, &point, None)?;
            let cfg = SQPConfig { max_iters, stop_tol: tol, delta, seed: common.seed, ..SQPConfig::default() };
            let (report, conv) = harness::cmd_solve(&p, &z0, &cfg)?;
            print!("{}", harness::format_convergence_table(&p, &conv));
            emit(&report, &common.json)?;
            Ok(report.exit_code())
        }
        Command::Diagnose { problem, point, no_probe, tol, common } => {
            let p = harness::load_problem(&problem)?;
            let z = point_or(&p, &point, Some(default_point(&problem, &p)?))?;
            let probe = (!no_probe).then(|| ProbeConfig { seed: common.seed, jobs: common.jobs, ..ProbeConfig::default() });
            let cfg = DiagnosticsConfig { gate_tol: tol, seed: common.seed, probe, ..DiagnosticsConfig::default() };
            let (report, diag) = harness::cmd_diagnose(&p, &z, &cfg)?;
            print!("{}", harness::format_diagnostics(&diag));
            emit(&report, &common.json)?;
            Ok(report.exit_code())
        }
        Command::ProbeCalmness { problem, point, directions, tol, common } => {
            let p = harness::load_problem(&problem)?;
            let z = point_or(&p, &point, Some(default_point(&problem, &p)?))?;
            let cfg = ProbeConfig { random_directions: directions, seed: common.seed, jobs: common.jobs, ..ProbeConfig::default() };
            let (report, probe) = harness::cmd_probe(&p, &z, &cfg, tol)?;
            print!("{}", harness::format_probe(&probe));
            emit(&report, &common.json)?;
            Ok(report.exit_code())
        }
        Command::OracleCheck { cone, n, common } => {
            let (report, checks) = harness::cmd_oracle_check(&cone, n, common.seed)?;
            print!("{}", harness::format_oracle(&checks));
            emit(&report, &common.json)?;
            Ok(report.exit_code())
        }
        Command::ListProblems => {
            print!("{}", harness::format_registry());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
