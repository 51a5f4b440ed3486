//! Problem registry, problem loading, command drivers and report plumbing for
//! the command-line front end.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::cone::{
    self, dq_oracle_second_subderivative, ConeBlock, ConeKind, ConeSpec, CriticalCone, OracleParams,
};
use crate::diagnostics::{
    classify_stationary_point, probe_isolated_calmness, CalmVerdict, DiagnosticsConfig, DiagnosticsReport,
    ProbeConfig, ProbeResult,
};
use crate::error::{Error, Result};
use crate::problem::{problem_from_json, problem_to_json, KKTPair, ProblemSpec};
use crate::sqp::{run_basic_sqp, ConvergenceReport, ConvergenceStatus, SQPConfig};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
/// Largest closed-form vs. oracle deviation accepted by `oracle-check`.
pub const ORACLE_TOL: f64 = 1e-3;

/// Expected verdicts at a known KKT point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ExpectedSummary {
    pub ssoc: bool,
    pub srcq: bool,
    pub noncritical: bool,
    pub lambda_unique: bool,
    pub calm: CalmVerdict,
}

#[derive(Debug, Clone)]
pub struct KnownPoint {
    pub point: KKTPair,
    pub expected: ExpectedSummary,
}

#[derive(Debug, Clone)]
pub struct RegistryEntry {
    pub name: &'static str,
    pub description: &'static str,
    pub problem: ProblemSpec,
    pub known_points: Vec<KnownPoint>,
}

fn pt(x: &[f64], lam: &[f64], ssoc: bool, srcq: bool, noncritical: bool, unique: bool, calm: CalmVerdict) -> KnownPoint {
    KnownPoint {
        point: KKTPair::new(x.to_vec(), lam.to_vec()),
        expected: ExpectedSummary { ssoc, srcq, noncritical, lambda_unique: unique, calm },
    }
}

fn entry(
    name: &'static str,
    description: &'static str,
    n: usize,
    objective: &str,
    constraints: &[&str],
    blocks: Vec<ConeBlock>,
    reference: Option<KKTPair>,
    known_points: Vec<KnownPoint>,
) -> RegistryEntry {
    let cone = ConeSpec::new(blocks).expect("registry cone");
    let problem = ProblemSpec::new(name, n, objective, constraints, cone, reference).expect("registry problem");
    RegistryEntry { name, description, problem, known_points }
}

/// The built-in problems.
pub fn registry() -> Vec<RegistryEntry> {
    use CalmVerdict::{Calm, Inconclusive};
    vec![
        entry(
            "ex55",
            "min -x^2/2 + x^3/6 s.t. x >= 0; the subproblem at x = 0.1 has no KKT point",
            1,
            "-0.5*x1^2 + x1^3/6",
            &["x1"],
            vec![ConeBlock::orthant(1)],
            Some(KKTPair::new(vec![2.0], vec![0.0])),
            vec![
                pt(&[0.0], &[0.0], false, true, true, true, Calm),
                pt(&[2.0], &[0.0], true, true, true, true, Calm),
            ],
        ),
        entry(
            "critical_toy",
            "min x^2 s.t. x^2 = 0; the multiplier -1 is critical",
            1,
            "x1^2",
            &["x1^2"],
            vec![ConeBlock::zero(1)],
            None,
            vec![
                pt(&[0.0], &[-1.0], false, false, false, false, Calm),
                pt(&[0.0], &[0.0], true, false, true, false, Calm),
            ],
        ),
        entry(
            "qp_orthant",
            "min |x - (1,-1)|^2/2 s.t. x >= 0",
            2,
            "0.5*(x1 - 1)^2 + 0.5*(x2 + 1)^2",
            &["x1", "x2"],
            vec![ConeBlock::orthant(2)],
            Some(KKTPair::new(vec![1.0, 0.0], vec![0.0, -1.0])),
            vec![pt(&[1.0, 0.0], &[0.0, -1.0], true, true, true, true, Calm)],
        ),
        entry(
            "soc_toy",
            "min x1 s.t. (x1, x2, 1 - x2^2) in SOC(3); strictly complementary",
            2,
            "x1",
            &["x1", "x2", "1 - x2^2"],
            vec![ConeBlock::second_order(3)],
            Some(KKTPair::new(vec![-1.0, 0.0], vec![-1.0, 0.0, -1.0])),
            vec![pt(&[-1.0, 0.0], &[-1.0, 0.0, -1.0], true, true, true, true, Calm)],
        ),
        entry(
            "soc_degenerate",
            "min |x - (1,0,1)|^2/2 s.t. x in SOC(3); zero multiplier at a boundary point",
            3,
            "0.5*(x1 - 1)^2 + 0.5*x2^2 + 0.5*(x3 - 1)^2",
            &["x1", "x2", "x3"],
            vec![ConeBlock::second_order(3)],
            Some(KKTPair::new(vec![1.0, 0.0, 1.0], vec![0.0; 3])),
            vec![pt(&[1.0, 0.0, 1.0], &[0.0; 3], true, true, true, true, Inconclusive)],
        ),
    ]
}

pub fn registry_entry(name: &str) -> Option<RegistryEntry> {
    registry().into_iter().find(|e| e.name == name)
}

/// A registry name, or the path of a JSON problem file.
pub fn load_problem(source: &str) -> Result<ProblemSpec> {
    if let Some(e) = registry_entry(source) {
        return Ok(e.problem);
    }
    let path = Path::new(source);
    if !path.exists() {
        return Err(Error::UnknownProblem(source.to_string()));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{source}: {e}")))?;
    problem_from_json(&text)
}

/// Parses a comma-separated list of reals.
pub fn parse_vector(text: &str) -> Result<Vec<f64>> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    text.split(',')
        .map(|s| {
            s.trim().parse::<f64>().map_err(|_| Error::Schema {
                path: "vector".into(),
                message: format!("`{}` is not a number", s.trim()),
            })
        })
        .collect()
}

/// Hex SHA-256 of the canonical JSON encoding (object keys sorted).
pub fn inputs_digest(inputs: &Value) -> String {
    let bytes = serde_json::to_vec(inputs).expect("json values serialize");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub inputs_digest: String,
    pub inputs: Value,
    pub result: Value,
    pub failures: Vec<String>,
}

impl RunReport {
    fn new(command: &str, seed: u64, inputs: Value, result: Value, failures: Vec<String>) -> Self {
        Self {
            command: command.into(),
            version: VERSION.into(),
            seed,
            inputs_digest: inputs_digest(&inputs),
            inputs,
            result,
            failures,
        }
    }

    /// 0 without failure artifacts, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() {
            0
        } else {
            1
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report serializes")
}

pub fn cmd_solve(p: &ProblemSpec, z0: &KKTPair, cfg: &SQPConfig) -> Result<(RunReport, ConvergenceReport)> {
    let rep = run_basic_sqp(p, z0, cfg)?;
    let inputs = json!({
        "problem": problem_to_json(p),
        "x0": z0.x,
        "lam0": z0.lam,
        "max_iters": cfg.max_iters,
        "delta": cfg.delta,
        "tol": cfg.stop_tol,
    });
    Ok((RunReport::new("solve", cfg.seed, inputs, to_value(&rep), Vec::new()), rep))
}

pub fn cmd_diagnose(p: &ProblemSpec, z: &KKTPair, cfg: &DiagnosticsConfig) -> Result<(RunReport, DiagnosticsReport)> {
    let rep = classify_stationary_point(p, z, cfg)?;
    let inputs = json!({
        "problem": problem_to_json(p),
        "x": z.x,
        "lam": z.lam,
        "gate_tol": cfg.gate_tol,
        "probe": cfg.probe.is_some(),
    });
    Ok((RunReport::new("diagnose", cfg.seed, inputs, to_value(&rep), rep.failures.clone()), rep))
}

pub fn cmd_probe(p: &ProblemSpec, z: &KKTPair, cfg: &ProbeConfig, gate_tol: f64) -> Result<(RunReport, ProbeResult)> {
    let r = p.kkt_residual(z)?.total();
    if !(r <= gate_tol) {
        return Err(Error::NotKktPoint { residual: r, gate: gate_tol });
    }
    let rep = probe_isolated_calmness(p, z, cfg)?;
    let inputs = json!({
        "problem": problem_to_json(p),
        "x": z.x,
        "lam": z.lam,
        "radii": cfg.radii,
        "random_directions": cfg.random_directions,
        "eps": cfg.eps,
    });
    Ok((RunReport::new("probe-calmness", cfg.seed, inputs, to_value(&rep), Vec::new()), rep))
}

/// A random `(y, λ, w)` with `λ ∈ N_Θ(y)` and `w ∈ K_Θ(y, λ)`.
#[derive(Debug, Clone, Serialize)]
pub struct OracleTriple {
    pub y: Vec<f64>,
    pub lam: Vec<f64>,
    pub w: Vec<f64>,
}

/// Parses cone flags such as `soc3`, `orthant4`, `zero2`.
pub fn parse_cone_flag(flag: &str) -> Result<ConeSpec> {
    let split = flag.find(|c: char| c.is_ascii_digit()).unwrap_or(flag.len());
    let (kind, dim) = flag.split_at(split);
    let bad = || Error::Schema { path: "cone".into(), message: format!("expected e.g. soc3, orthant4 or zero2, got `{flag}`") };
    let dim: usize = dim.parse().map_err(|_| bad())?;
    let kind = match kind {
        "soc" | "second_order" => ConeKind::SecondOrder,
        "orthant" => ConeKind::Orthant,
        "zero" => ConeKind::Zero,
        _ => return Err(bad()),
    };
    ConeSpec::single(kind, dim)
}

fn gaussian(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

/// Random triples on the boundary of a single-block cone.
pub fn oracle_triples(cone: &ConeSpec, count: usize, seed: u64) -> Result<Vec<OracleTriple>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = cone.blocks()[0];
    if cone.blocks().len() != 1 {
        return Err(Error::InvalidCone("oracle triples use a single block".into()));
    }
    let d = b.dim;
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let (y, lam) = match b.kind {
            ConeKind::Zero => (vec![0.0; d], gaussian(&mut rng, d)),
            ConeKind::Orthant => {
                let mut y = vec![0.0; d];
                let mut lam = vec![0.0; d];
                for i in 0..d {
                    match rng.random_range(0..3) {
                        0 => y[i] = rng.random_range(0.2..2.0),
                        1 => lam[i] = -rng.random_range(0.2..2.0),
                        _ => {}
                    }
                }
                (y, lam)
            }
            ConeKind::SecondOrder => {
                let ybar = gaussian(&mut rng, d - 1);
                let nb = cone::norm(&ybar);
                if nb < 0.1 {
                    continue;
                }
                let scale = rng.random_range(0.5..2.0) / nb;
                let mut y: Vec<f64> = ybar.iter().map(|v| v * scale).collect();
                y.push(nb * scale);
                let mu = rng.random_range(0.2..2.0);
                let mut lam: Vec<f64> = ybar.iter().map(|v| mu * v / nb).collect();
                lam.push(-mu);
                (y, lam)
            }
        };
        let k = CriticalCone::new(cone, &y, &lam, cone::DEFAULT_TOL)?;
        // unit length keeps the recovery offset O(t‖w‖²/y_m) inside the oracle box
        let w = k.project(&gaussian(&mut rng, d));
        let nw = cone::norm(&w);
        let w = if nw > 1e-12 { w.iter().map(|v| v / nw).collect() } else { w };
        out.push(OracleTriple { y, lam, w });
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleCheck {
    pub cone: String,
    pub samples: usize,
    pub max_deviation: f64,
    pub mean_deviation: f64,
    pub worst: Option<OracleTriple>,
    pub passed: bool,
}

/// Closed-form second subderivative against the difference-quotient oracle;
/// deviations are `|closed − oracle| / (1 + |closed|)`.
pub fn oracle_check(flag: &str, samples: usize, seed: u64) -> Result<OracleCheck> {
    let cone = parse_cone_flag(flag)?;
    let triples = oracle_triples(&cone, samples, seed)?;
    let params = OracleParams::default();
    let mut max_dev = 0.0f64;
    let mut sum = 0.0;
    let mut worst = None;
    for t in &triples {
        let closed = cone::second_subderivative(&cone, &t.y, &t.lam, &t.w)?
            .finite()
            .ok_or_else(|| Error::InvalidCone("sampled direction left the critical cone".into()))?;
        let numeric = dq_oracle_second_subderivative(&cone, &t.y, &t.lam, &t.w, &params)?;
        let dev = (closed - numeric).abs() / (1.0 + closed.abs());
        sum += dev;
        if dev > max_dev || worst.is_none() {
            max_dev = max_dev.max(dev);
            worst = Some(t.clone());
        }
    }
    let n = triples.len().max(1) as f64;
    Ok(OracleCheck {
        cone: flag.to_string(),
        samples: triples.len(),
        max_deviation: max_dev,
        mean_deviation: sum / n,
        worst,
        passed: max_dev <= ORACLE_TOL,
    })
}

pub fn cmd_oracle_check(flags: &[String], samples: usize, seed: u64) -> Result<(RunReport, Vec<OracleCheck>)> {
    let checks = flags.iter().map(|f| oracle_check(f, samples, seed)).collect::<Result<Vec<_>>>()?;
    let failures = checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| format!("{}: max deviation {:.3e} exceeds {:.0e}", c.cone, c.max_deviation, ORACLE_TOL))
        .collect();
    let inputs = json!({ "cones": flags, "samples": samples });
    Ok((RunReport::new("oracle-check", seed, inputs, to_value(&checks), failures), checks))
}

/// `x` to three significant digits in scientific notation.
pub fn sig3(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.2e}")
    } else {
        format!("{x}")
    }
}

pub fn format_convergence_table(p: &ProblemSpec, rep: &ConvergenceReport) -> String {
    let mut s = String::new();
    let errors = rep.errors_to_reference.as_deref();
    let _ = writeln!(s, "problem {}  (n = {}, m = {}, cone {})", p.name, p.n, p.m(), p.cone);
    let _ = writeln!(
        s,
        "{:>3}  {:>10}  {:>10}  {:>10}  {:>10}  {:>10}  {:>10}",
        "k", "step", "stat", "compl", "feas", "error", "ratio"
    );
    for (k, r) in rep.residuals.iter().enumerate() {
        let step = if k == 0 { "-".to_string() } else { sig3(rep.step_norms[k - 1]) };
        let (err, ratio) = match errors {
            Some(e) => {
                let ratio = if k == 0 || e[k - 1] == 0.0 { "-".to_string() } else { sig3(e[k] / e[k - 1]) };
                (sig3(e[k]), ratio)
            }
            None => ("-".into(), "-".into()),
        };
        let _ = writeln!(
            s,
            "{:>3}  {:>10}  {:>10}  {:>10}  {:>10}  {:>10}  {:>10}",
            k,
            step,
            sig3(r.stationarity),
            sig3(r.complementarity),
            sig3(r.feasibility),
            err,
            ratio
        );
    }
    match rep.status {
        ConvergenceStatus::SolvabilityFailure => {
            let _ = writeln!(
                s,
                "*** SOLVABILITY FAILURE at k = {}: subproblem status {} ***",
                rep.failed_at.unwrap_or(0),
                rep.subproblem_status.map(|s| format!("{s:?}")).unwrap_or_else(|| "unknown".into())
            );
        }
        status => {
            let _ = writeln!(s, "status: {status:?} after {} step(s)", rep.step_norms.len());
        }
    }
    let _ = writeln!(s, "final residual: {}", sig3(rep.final_residual()));
    match &rep.rate {
        Some(r) => {
            let _ = writeln!(s, "rate: {:?} ({})", r.classification, rep.rate_note.as_deref().unwrap_or(""));
        }
        None => {
            let _ = writeln!(s, "rate: n/a ({})", rep.rate_note.as_deref().unwrap_or(""));
        }
    }
    s
}

fn verdict(holds: bool, conclusive: bool) -> &'static str {
    match (holds, conclusive) {
        (true, true) => "holds",
        (false, true) => "fails",
        (true, false) => "holds (sampled)",
        (false, false) => "fails (sampled)",
    }
}

pub fn format_diagnostics(rep: &DiagnosticsReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "problem {} at x = {:?}, lam = {:?}", rep.problem, rep.point.x, rep.point.lam);
    let _ = writeln!(s, "KKT residual: {}", sig3(rep.kkt_residual.total()));
    let _ = writeln!(s, "SSOC: {} (min value {})", verdict(rep.ssoc.holds, rep.ssoc.conclusive), rep.ssoc.min_value);
    let _ = writeln!(s, "SRCQ: {}", verdict(rep.srcq.holds, rep.srcq.conclusive));
    let nc = if rep.noncritical.holds { "noncritical" } else { "critical" };
    let _ = write!(s, "multiplier: {nc}{}", if rep.noncritical.conclusive { "" } else { " (sampled)" });
    if let Some(w) = &rep.noncritical.witness {
        let _ = write!(s, ", witness w = {:?}, u = {:?}", w.w, w.u);
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "multiplier map: {:?} ({})", rep.multiplier_calm.verdict, rep.multiplier_calm.reason);
    let _ = writeln!(s, "lambda unique: {}{}", rep.lambda_unique, if rep.multiplier_set.exact { "" } else { " (sampled)" });
    if let Some(pr) = &rep.calmness_probe {
        let _ = write!(s, "{}", format_probe(pr));
    }
    let _ = writeln!(s, "isolated calmness characterization consistent: {}", rep.isolated_calmness_consistent);
    for f in &rep.failures {
        let _ = writeln!(s, "FAILURE: {f}");
    }
    s
}

pub fn format_probe(pr: &ProbeResult) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:>10}  {:>10}  {:>8}", "radius", "max ratio", "solved");
    for m in &pr.modulus_samples {
        let ratio = m.max_ratio.map(sig3).unwrap_or_else(|| "-".into());
        let _ = writeln!(s, "{:>10}  {:>10}  {:>4}/{:<3}", sig3(m.radius), ratio, m.solved, m.perturbations);
    }
    let profile = match pr.bounded {
        Some(true) => "bounded",
        Some(false) => "growing",
        None => "undetermined",
    };
    let growth = pr.growth.map(sig3).unwrap_or_else(|| "-".into());
    let _ = writeln!(s, "profile: {profile} (growth {growth})");
    s
}

pub fn format_oracle(checks: &[OracleCheck]) -> String {
    let mut s = String::new();
    for c in checks {
        let _ = writeln!(
            s,
            "{:<10} samples {:>5}  max deviation {}  mean {}  {}",
            c.cone,
            c.samples,
            sig3(c.max_deviation),
            sig3(c.mean_deviation),
            if c.passed { "ok" } else { "FAIL" }
        );
    }
    s
}

pub fn format_registry() -> String {
    let mut s = String::new();
    for e in registry() {
        let _ = writeln!(s, "{:<16} n={} m={} {:<16} {}", e.name, e.problem.n, e.problem.m(), e.problem.cone.to_string(), e.description);
    }
    s
}
