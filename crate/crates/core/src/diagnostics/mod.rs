//! Second-order stability diagnostics at a KKT point `(x, λ)`: SSOC, strict
//! Robinson CQ, noncriticality, calmness of the multiplier map, an empirical
//! isolated-calmness probe, and cross-checks between them.
//!
//! Every verdict carries a `conclusive` flag. Sampled or multi-start answers
//! never count as proofs, and consistency checks only use conclusive ones.

pub mod noncritical;
pub mod probe;
pub mod srcq;
pub mod ssoc;
mod system;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::cone::CriticalCone;
use crate::cone::{self, norm, soc_position, ConeKind, ConeSpec, SocPosition};
use crate::error::{Error, Result};
use crate::problem::{KKTPair, KKTResidual, MultiplierSet, ProblemSpec};

pub use noncritical::{CriticalWitness, NoncriticalResult};
pub use probe::{probe_isolated_calmness, ModulusSample, ProbeConfig, ProbeResult};
pub use srcq::{SrcqCertificate, SrcqResult};
pub use ssoc::SsocResult;

#[derive(Debug, Clone)]
pub struct DiagnosticsConfig {
    /// Points whose KKT residual exceeds this are rejected.
    pub gate_tol: f64,
    pub seed: u64,
    /// Multi-starts for sampled SSOC and SRCQ searches.
    pub multistarts: usize,
    /// Random Newton solves backing up the criticality enumeration.
    pub safety_starts: usize,
    pub probe: Option<ProbeConfig>,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self { gate_tol: 1e-8, seed: 0, multistarts: 50, safety_starts: 100, probe: Some(ProbeConfig::default()) }
    }
}

/// Derivative data at the point, shared by the checks.
#[derive(Debug, Clone)]
pub struct PointData {
    pub cone: ConeSpec,
    pub y: DVector<f64>,
    pub lam: Vec<f64>,
    /// `∇²ₓₓL(x, λ)`.
    pub hess: DMatrix<f64>,
    /// `∇f(x)`.
    pub jac: DMatrix<f64>,
    pub k: CriticalCone,
    /// Curvature matrix of `½ d²δ_Θ(f(x), λ)`.
    pub curv: DMatrix<f64>,
    /// `∇²ₓₓL + ∇f(x)ᵀ C ∇f(x)`.
    pub q: DMatrix<f64>,
}

impl PointData {
    pub fn new(p: &ProblemSpec, z: &KKTPair) -> Result<Self> {
        let d = p.lagrangian_data(z)?;
        let y = d.f_val.clone();
        let k = CriticalCone::new(&p.cone, y.as_slice(), &z.lam, cone::DEFAULT_TOL)?;
        let curv = cone::curvature_matrix(&p.cone, y.as_slice(), &z.lam)?;
        let q = &d.hess_xx + d.jac_f.transpose() * &curv * &d.jac_f;
        Ok(Self { cone: p.cone.clone(), y, lam: z.lam.clone(), hess: d.hess_xx, jac: d.jac_f, k, curv, q })
    }
}

fn gate(p: &ProblemSpec, z: &KKTPair, tol: f64) -> Result<KKTResidual> {
    let r = p.kkt_residual(z)?;
    if !(r.total() <= tol) {
        return Err(Error::NotKktPoint { residual: r.total(), gate: tol });
    }
    Ok(r)
}

pub fn check_ssoc(p: &ProblemSpec, z: &KKTPair, cfg: &DiagnosticsConfig) -> Result<SsocResult> {
    gate(p, z, cfg.gate_tol)?;
    ssoc::check(&PointData::new(p, z)?, cfg.multistarts, cfg.seed)
}

pub fn check_noncriticality(p: &ProblemSpec, z: &KKTPair, cfg: &DiagnosticsConfig) -> Result<NoncriticalResult> {
    gate(p, z, cfg.gate_tol)?;
    noncritical::check(&PointData::new(p, z)?, cfg.safety_starts, cfg.seed)
}

pub fn check_srcq(p: &ProblemSpec, z: &KKTPair, cfg: &DiagnosticsConfig) -> Result<SrcqResult> {
    gate(p, z, cfg.gate_tol)?;
    srcq::check(&PointData::new(p, z)?, cfg.multistarts, cfg.seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CalmVerdict {
    Calm,
    Inconclusive,
}

#[derive(Debug, Clone, Serialize)]
pub struct MultiplierCalmness {
    pub verdict: CalmVerdict,
    pub reason: String,
}

/// Calmness of the multiplier map at `x`: automatic for polyhedral `Θ`, and
/// guaranteed on second-order blocks by strict complementarity
/// (`λ ∈ ri N_Θ(f(x))` blockwise).
pub fn check_multiplier_calmness(p: &ProblemSpec, z: &KKTPair, cfg: &DiagnosticsConfig) -> Result<MultiplierCalmness> {
    gate(p, z, cfg.gate_tol)?;
    Ok(multiplier_calmness(&p.cone, p.constraint_values(&z.x)?.as_slice(), &z.lam))
}

fn multiplier_calmness(cone: &ConeSpec, y: &[f64], lam: &[f64]) -> MultiplierCalmness {
    if cone.is_polyhedral() {
        return MultiplierCalmness { verdict: CalmVerdict::Calm, reason: "Hoffman/polyhedrality".into() };
    }
    let tol = cone::DEFAULT_TOL;
    let lscale = tol * (1.0 + norm(lam));
    for (r, b) in cone.ranges() {
        if b.kind != ConeKind::SecondOrder {
            continue;
        }
        let (yb, lb) = (&y[r.clone()], &lam[r.clone()]);
        let d = b.dim;
        let strict = match soc_position(yb, tol) {
            SocPosition::Interior => true,
            SocPosition::Boundary => -lb[d - 1] > lscale,
            SocPosition::Apex => norm(&lb[..d - 1]) < -lb[d - 1] - lscale,
        };
        if !strict {
            return MultiplierCalmness { verdict: CalmVerdict::Inconclusive, reason: "strict complementarity fails".into() };
        }
    }
    MultiplierCalmness { verdict: CalmVerdict::Calm, reason: "strict complementarity".into() }
}

/// Outcomes of the cross-checks; `None` when a sub-verdict was inconclusive.
#[derive(Debug, Clone, Serialize)]
pub struct ConsistencyChecks {
    /// `(λ unique ∧ multiplier map calm) ⟺ SRCQ`.
    pub multipliers_vs_srcq: Option<bool>,
    /// `(SSOC ∧ calm ∧ λ unique) ⟺ (SSOC ∧ SRCQ)`.
    pub second_order_characterization: Option<bool>,
    /// A conclusively critical multiplier must not come with a bounded probe profile.
    pub criticality_vs_probe: Option<bool>,
    /// Dual and primal forms of SRCQ agree.
    pub srcq_forms: Option<bool>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticsReport {
    pub problem: String,
    pub point: KKTPair,
    pub kkt_residual: KKTResidual,
    pub ssoc: SsocResult,
    pub srcq: SrcqResult,
    pub noncritical: NoncriticalResult,
    pub multiplier_calm: MultiplierCalmness,
    pub lambda_unique: bool,
    pub multiplier_set: MultiplierSet,
    pub calmness_probe: Option<ProbeResult>,
    pub checks: ConsistencyChecks,
    /// False only when the second-order characterization is conclusively violated.
    pub isolated_calmness_consistent: bool,
    /// Conclusive violations of the cross-checks.
    pub failures: Vec<String>,
}

fn and3(a: Option<bool>, b: Option<bool>) -> Option<bool> {
    match (a, b) {
        (Some(false), _) | (_, Some(false)) => Some(false),
        (Some(true), Some(true)) => Some(true),
        _ => None,
    }
}

fn iff(a: Option<bool>, b: Option<bool>) -> Option<bool> {
    Some(a? == b?)
}

pub fn classify_stationary_point(p: &ProblemSpec, z: &KKTPair, cfg: &DiagnosticsConfig) -> Result<DiagnosticsReport> {
    let kkt_residual = gate(p, z, cfg.gate_tol)?;
    let pd = PointData::new(p, z)?;
    let ssoc = ssoc::check(&pd, cfg.multistarts, cfg.seed)?;
    let srcq = srcq::check(&pd, cfg.multistarts, cfg.seed)?;
    let noncritical = noncritical::check(&pd, cfg.safety_starts, cfg.seed)?;
    let multiplier_calm = multiplier_calmness(&p.cone, pd.y.as_slice(), &z.lam);
    let multiplier_set = p.multiplier_set_analysis(&z.x)?;
    let calmness_probe = match &cfg.probe {
        Some(pc) => Some(probe_isolated_calmness(p, z, pc)?),
        None => None,
    };

    let ssoc_t = ssoc.conclusive.then_some(ssoc.holds);
    let srcq_t = srcq.conclusive.then_some(srcq.holds);
    let calm_t = (multiplier_calm.verdict == CalmVerdict::Calm).then_some(true);
    let unique_t = multiplier_set.exact.then_some(multiplier_set.unique);
    let multipliers_vs_srcq = iff(and3(unique_t, calm_t), srcq_t);
    let second_order_characterization = iff(and3(and3(ssoc_t, calm_t), unique_t), and3(ssoc_t, srcq_t));
    let criticality_vs_probe = match (noncritical.conclusive && !noncritical.holds, &calmness_probe) {
        (true, Some(pr)) => pr.bounded.map(|b| !b),
        _ => None,
    };
    let srcq_forms = match (srcq.conclusive, srcq.primal_holds) {
        (true, Some(primal)) => Some(primal == srcq.holds),
        _ => None,
    };
    let checks = ConsistencyChecks { multipliers_vs_srcq, second_order_characterization, criticality_vs_probe, srcq_forms };

    let mut failures = Vec::new();
    if checks.multipliers_vs_srcq == Some(false) {
        failures.push(format!(
            "multiplier uniqueness and calmness ({}, {:?}) disagree with SRCQ ({})",
            multiplier_set.unique, multiplier_calm.verdict, srcq.holds
        ));
    }
    if checks.second_order_characterization == Some(false) {
        failures.push("SSOC with calm unique multipliers disagrees with SSOC with SRCQ".into());
    }
    if checks.criticality_vs_probe == Some(false) {
        failures.push("critical multiplier but the calmness probe profile is bounded".into());
    }
    if checks.srcq_forms == Some(false) {
        failures.push("dual and primal forms of SRCQ disagree".into());
    }

    Ok(DiagnosticsReport {
        problem: p.name.clone(),
        point: z.clone(),
        kkt_residual,
        lambda_unique: multiplier_set.unique,
        isolated_calmness_consistent: checks.second_order_characterization != Some(false),
        ssoc,
        srcq,
        noncritical,
        multiplier_calm,
        multiplier_set,
        calmness_probe,
        checks,
        failures,
    })
}
