//! The basic SQP method: Newton's method on the KKT generalized equation with
//! the exact Lagrangian Hessian `H_k = ∇²ₓₓL(x_k, λ_k)` in every subproblem.
//! There is no globalization; the localization radius is a hard stop.

use serde::Serialize;

use crate::conic_qp::{solve_subproblem, Engine, SolverConfig, SubproblemData, SubproblemStatus};
use crate::error::{Error, Result};
use crate::problem::{KKTPair, KKTResidual, ProblemSpec};

#[derive(Debug, Clone, Copy)]
pub struct SQPConfig {
    pub max_iters: usize,
    /// Stop once the KKT residual total drops to this level.
    pub stop_tol: f64,
    /// Localization radius on `‖(x_{k+1} − x_k, λ_{k+1} − λ_k)‖`.
    pub delta: f64,
    pub seed: u64,
    pub solver: SolverConfig,
}

impl Default for SQPConfig {
    fn default() -> Self {
        Self { max_iters: 50, stop_tol: 1e-12, delta: 1.0, seed: 0, solver: SolverConfig::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ConvergenceStatus {
    Converged,
    SolvabilityFailure,
    LocalizationViolated,
    IterLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RateClass {
    Quadratic,
    Superlinear,
    Linear,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateEstimate {
    pub classification: RateClass,
    pub ratios: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub status: ConvergenceStatus,
    pub iterates: Vec<KKTPair>,
    pub residuals: Vec<KKTResidual>,
    /// `‖(x_{k+1} − x_k, λ_{k+1} − λ_k)‖` per accepted step.
    pub step_norms: Vec<f64>,
    pub engines: Vec<Engine>,
    /// Iteration at which the run stopped without converging.
    pub failed_at: Option<usize>,
    /// Status of the subproblem that had no KKT point, if any.
    pub subproblem_status: Option<SubproblemStatus>,
    pub errors_to_reference: Option<Vec<f64>>,
    pub rate: Option<RateEstimate>,
    pub rate_note: Option<String>,
}

impl ConvergenceReport {
    pub fn final_iterate(&self) -> &KKTPair {
        self.iterates.last().expect("at least the starting point")
    }

    pub fn final_residual(&self) -> f64 {
        self.residuals.last().map(|r| r.total()).unwrap_or(f64::NAN)
    }
}

/// Subproblem data at `z`: `H = ∇²ₓₓL(z)`, `g = ∇φ0(x)`, `A = ∇f(x)`, `c = f(x)`.
pub fn subproblem_at(p: &ProblemSpec, z: &KKTPair) -> Result<SubproblemData> {
    let d = p.lagrangian_data(z)?;
    SubproblemData::new(d.hess_xx, d.obj_grad, d.jac_f, d.f_val, p.cone.clone())
}

pub fn run_basic_sqp(p: &ProblemSpec, z0: &KKTPair, cfg: &SQPConfig) -> Result<ConvergenceReport> {
    Error::check_dim(p.n, z0.x.len())?;
    Error::check_dim(p.m(), z0.lam.len())?;
    if z0.x.iter().chain(&z0.lam).any(|v| !v.is_finite()) {
        return Err(Error::Schema { path: "z0".into(), message: "starting point must be finite".into() });
    }
    let solver = SolverConfig { seed: cfg.seed, ..cfg.solver };
    let mut z = z0.clone();
    let mut report = ConvergenceReport {
        status: ConvergenceStatus::IterLimit,
        iterates: vec![z.clone()],
        residuals: vec![p.kkt_residual(&z)?],
        step_norms: Vec::new(),
        engines: Vec::new(),
        failed_at: None,
        subproblem_status: None,
        errors_to_reference: None,
        rate: None,
        rate_note: None,
    };
    for k in 0..=cfg.max_iters {
        if report.residuals[k].total() <= cfg.stop_tol {
            report.status = ConvergenceStatus::Converged;
            break;
        }
        if k == cfg.max_iters {
            report.failed_at = Some(k);
            break;
        }
        let data = subproblem_at(p, &z)?;
        let hint = KKTPair::new(vec![0.0; p.n], z.lam.clone());
        let sol = solve_subproblem(&data, Some(&hint), &solver)?;
        report.engines.push(sol.engine);
        let (Some(d), Some(lam)) = (sol.d, sol.lam) else {
            report.status = ConvergenceStatus::SolvabilityFailure;
            report.failed_at = Some(k);
            report.subproblem_status = Some(sol.status);
            break;
        };
        let next = KKTPair::new(z.x.iter().zip(&d).map(|(a, b)| a + b).collect(), lam);
        let step = next.distance(&z);
        report.step_norms.push(step);
        report.residuals.push(p.kkt_residual(&next)?);
        report.iterates.push(next.clone());
        z = next;
        // A step that lands on a KKT point ends the run before localization matters.
        if step > cfg.delta && report.residuals[k + 1].total() > cfg.stop_tol {
            report.status = ConvergenceStatus::LocalizationViolated;
            report.failed_at = Some(k);
            break;
        }
    }
    attach_rate(p, &mut report);
    Ok(report)
}

/// Errors below this level (relative to the reference size) are rounding noise.
const NOISE_FLOOR: f64 = 1e-13;

fn attach_rate(p: &ProblemSpec, report: &mut ConvergenceReport) {
    let (reference, source) = match &p.reference {
        Some(r) => (r.clone(), "reference solution"),
        None if report.status == ConvergenceStatus::Converged => (report.final_iterate().clone(), "final iterate"),
        None => {
            report.rate_note = Some("no reference solution".into());
            return;
        }
    };
    let errors: Vec<f64> = report.iterates.iter().map(|z| z.distance(&reference)).collect();
    let floor = NOISE_FLOOR * (1.0 + reference.stacked().norm());
    let usable: Vec<f64> = errors.iter().copied().take_while(|&e| e > floor).collect();
    report.errors_to_reference = Some(errors);
    match estimate_rate(&usable) {
        Ok(r) => {
            report.rate = Some(r);
            report.rate_note = Some(format!("errors measured against the {source}"));
        }
        Err(e) => report.rate_note = Some(e.to_string()),
    }
}

/// Classify a sequence of error norms by its ratios `e_{k+1}/e_k`.
///
/// * Quadratic: superlinear, at least three ratios, and `e_{k+1}/e_k²` never
///   grows by more than a factor 2 between consecutive steps.
/// * Superlinear: ratios strictly decreasing, the last at most a tenth of the
///   first and at most `1e-2`.
/// * Linear: every ratio within 20% of their mean, which lies in `(0, 1)`.
pub fn estimate_rate(errors: &[f64]) -> Result<RateEstimate> {
    let mut e: Vec<f64> = errors.to_vec();
    while e.last() == Some(&0.0) {
        e.pop();
    }
    if e.len() < 3 {
        return Err(Error::InsufficientData(format!("{} positive errors, need at least 3", e.len())));
    }
    if e.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::InsufficientData("errors must be positive and finite".into()));
    }
    let ratios: Vec<f64> = e.windows(2).map(|w| w[1] / w[0]).collect();
    let first = ratios[0];
    let last = *ratios.last().expect("at least two ratios");
    let decreasing = ratios.windows(2).all(|w| w[1] < w[0]);
    let superlinear = decreasing && last <= 0.1 * first && last <= 1e-2;
    let quadratic = superlinear && ratios.len() >= 3 && {
        let q: Vec<f64> = e.windows(2).map(|w| w[1] / (w[0] * w[0])).collect();
        q.windows(2).all(|w| w[1] <= 2.0 * w[0])
    };
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let linear = mean > 0.0 && mean < 1.0 && ratios.iter().all(|r| (r - mean).abs() <= 0.2 * mean);
    let classification = if quadratic {
        RateClass::Quadratic
    } else if superlinear {
        RateClass::Superlinear
    } else if linear {
        RateClass::Linear
    } else {
        RateClass::None
    };
    Ok(RateEstimate { classification, ratios })
}
