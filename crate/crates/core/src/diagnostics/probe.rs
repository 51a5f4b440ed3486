//! Empirical isolated-calmness probe: solve canonically perturbed KKT systems
//!
//! `∇φ0(x) + ∇f(x)ᵀλ = v`, `λ ∈ N_Θ(f(x) + w)`
//!
//! for perturbations `‖(v, w)‖ = r` on a log grid of radii, and record the
//! largest `‖(x, λ) − z‖ / r` over solutions found within a fixed ball around
//! `z`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::cone::{self, ConeKind};
use crate::error::{Error, Result};
use crate::problem::{KKTPair, ProblemSpec};
use crate::semismooth::{self, NewtonOptions};

/// Largest orthant dimension for which active patterns are enumerated.
pub const MAX_PATTERN_ROWS: usize = 8;
/// Residual accepted for a perturbed solution at radius `r`. Scaling with `r²`
/// keeps near-solutions of degenerate systems (residual ~ ‖Δx‖²) from being
/// counted at small radii.
fn solve_tol(r: f64) -> f64 {
    (1e-2 * r * r).clamp(1e-14, 1e-10)
}

#[derive(Debug, Clone)]
pub struct ProbeConfig {
    pub radii: Vec<f64>,
    /// Random unit directions per radius, on top of the `±` coordinate axes.
    pub random_directions: usize,
    /// Only solutions within this distance of the reference point count.
    pub eps: f64,
    /// Random Newton starts per perturbation.
    pub newton_starts: usize,
    pub seed: u64,
    /// Worker threads; `None` uses the global pool.
    pub jobs: Option<usize>,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            radii: vec![1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6],
            random_directions: 8,
            eps: 0.5,
            newton_starts: 8,
            seed: 0,
            jobs: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ModulusSample {
    pub radius: f64,
    /// Largest ratio over all perturbations at this radius; `None` when no
    /// perturbed system had a solution inside the ball.
    pub max_ratio: Option<f64>,
    pub perturbations: usize,
    pub solved: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeResult {
    pub modulus_samples: Vec<ModulusSample>,
    /// `max_ratio` at the smallest radius over `max_ratio` at the radius nearest 1e-2.
    pub growth: Option<f64>,
    /// `growth ≤ 3`: empirical evidence of isolated calmness.
    pub bounded: Option<bool>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SampleOutcome {
    pub radius: f64,
    pub direction: Vec<f64>,
    pub solutions: Vec<KKTPair>,
    pub max_ratio: Option<f64>,
}

/// Unit direction number `index` in `ℝ^dim`: the `±` axes first, then random.
fn direction(dim: usize, index: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    if index < 2 * dim {
        let mut d = DVector::zeros(dim);
        d[index / 2] = if index % 2 == 0 { 1.0 } else { -1.0 };
        return d;
    }
    loop {
        let d = DVector::from_fn(dim, |_, _| StandardNormal.sample(rng));
        if d.norm() > 1e-12 {
            return d.normalize();
        }
    }
}

fn sample_rng(seed: u64, radius_idx: usize, sample_idx: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((radius_idx as u64) << 32) | sample_idx as u64);
    rng
}

/// Residual and generalized Jacobian of the perturbed KKT map.
fn perturbed_map(
    p: &ProblemSpec,
    v: &DVector<f64>,
    w: &DVector<f64>,
    z: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (n, m) = (p.n, p.m());
    let pair = KKTPair::new(z.rows(0, n).iter().copied().collect(), z.rows(n, m).iter().copied().collect());
    let d = p.lagrangian_data(&pair)?;
    let s = &d.f_val + w;
    let lam = z.rows(n, m).into_owned();
    let arg = &s + &lam;
    let proj = DVector::from_vec(cone::project(&p.cone, arg.as_slice())?);
    let pj = cone::projection_jacobian(&p.cone, arg.as_slice())?;
    let mut f = DVector::zeros(n + m);
    f.rows_mut(0, n).copy_from(&(&d.grad_x - v));
    f.rows_mut(n, m).copy_from(&(&s - proj));
    let mut jac = DMatrix::zeros(n + m, n + m);
    jac.view_mut((0, 0), (n, n)).copy_from(&d.hess_xx);
    jac.view_mut((0, n), (n, m)).copy_from(&d.jac_f.transpose());
    jac.view_mut((n, 0), (m, n)).copy_from(&((DMatrix::identity(m, m) - &pj) * &d.jac_f));
    jac.view_mut((n, n), (m, m)).copy_from(&(-pj));
    Ok((f, jac))
}

/// The smooth system for one active pattern of the orthant rows: active rows
/// hold with equality, inactive rows carry a zero multiplier.
fn pattern_map(
    p: &ProblemSpec,
    v: &DVector<f64>,
    w: &DVector<f64>,
    orthant_rows: &[usize],
    mask: u64,
    z: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (n, m) = (p.n, p.m());
    let (mut f, mut jac) = perturbed_map(p, v, w, z)?;
    let pair = KKTPair::new(z.rows(0, n).iter().copied().collect(), z.rows(n, m).iter().copied().collect());
    let d = p.lagrangian_data(&pair)?;
    for (k, &i) in orthant_rows.iter().enumerate() {
        let row = n + i;
        jac.row_mut(row).fill(0.0);
        if mask >> k & 1 == 1 {
            f[row] = d.f_val[i] + w[i];
            for j in 0..n {
                jac[(row, j)] = d.jac_f[(i, j)];
            }
        } else {
            f[row] = z[n + i];
            jac[(row, n + i)] = 1.0;
        }
    }
    Ok((f, jac))
}

fn residual_at(p: &ProblemSpec, v: &DVector<f64>, w: &DVector<f64>, z: &DVector<f64>) -> f64 {
    perturbed_map(p, v, w, z).map(|(f, _)| f.norm()).unwrap_or(f64::INFINITY)
}

/// Solutions of the perturbed KKT system reachable from starts around `z`.
pub fn solve_perturbed(
    p: &ProblemSpec,
    z: &KKTPair,
    v: &DVector<f64>,
    w: &DVector<f64>,
    starts: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<KKTPair>> {
    let (n, m) = (p.n, p.m());
    Error::check_dim(n, v.len())?;
    Error::check_dim(m, w.len())?;
    let z0 = z.stacked();
    let r = (v.norm_squared() + w.norm_squared()).sqrt();
    let tol = solve_tol(r);
    let opts = NewtonOptions { tol, max_iters: 50, ..Default::default() };
    let scales = [r, r.sqrt(), 1e-1, 3e-1];
    let mut start_points = vec![z0.clone()];
    for k in 0..starts {
        let scale = scales[k % scales.len()];
        let noise = DVector::from_fn(n + m, |_, _| StandardNormal.sample(rng));
        start_points.push(&z0 + noise * scale);
    }

    let mut found: Vec<DVector<f64>> = Vec::new();
    let mut keep = |cand: DVector<f64>| {
        if residual_at(p, v, w, &cand) <= tol && !found.iter().any(|f| (f - &cand).norm() <= 1e-9) {
            found.push(cand);
        }
    };
    for s in &start_points {
        if let Ok(out) = semismooth::solve(s.clone(), &opts, |x| perturbed_map(p, v, w, x)) {
            if out.converged || out.residual <= tol {
                keep(out.z);
            }
        }
    }
    let orthant_rows: Vec<usize> = p
        .cone
        .ranges()
        .filter(|(_, b)| b.kind == ConeKind::Orthant)
        .flat_map(|(r, _)| r)
        .collect();
    if p.cone.is_polyhedral() && !orthant_rows.is_empty() && orthant_rows.len() <= MAX_PATTERN_ROWS {
        for mask in 0..1u64 << orthant_rows.len() {
            for s in start_points.iter().take(2) {
                let res = semismooth::solve(s.clone(), &opts, |x| pattern_map(p, v, w, &orthant_rows, mask, x));
                if let Ok(out) = res {
                    if out.converged {
                        keep(out.z);
                    }
                }
            }
        }
    }
    Ok(found
        .into_iter()
        .map(|f| KKTPair::new(f.rows(0, n).iter().copied().collect(), f.rows(n, m).iter().copied().collect()))
        .collect())
}

fn probe_sample(p: &ProblemSpec, z: &KKTPair, cfg: &ProbeConfig, ri: usize, si: usize) -> SampleOutcome {
    let (n, m) = (p.n, p.m());
    let radius = cfg.radii[ri];
    let mut rng = sample_rng(cfg.seed, ri, si);
    let dir = direction(n + m, si, &mut rng);
    let pert = &dir * radius;
    let v = pert.rows(0, n).into_owned();
    let w = pert.rows(n, m).into_owned();
    // Failed perturbed solves are recorded as "no solution", not propagated.
    let solutions = solve_perturbed(p, z, &v, &w, cfg.newton_starts, &mut rng).unwrap_or_default();
    let max_ratio = solutions
        .iter()
        .map(|s| s.distance(z))
        .filter(|&d| d <= cfg.eps)
        .map(|d| d / radius)
        .fold(None, |acc: Option<f64>, r| Some(acc.map_or(r, |a| a.max(r))));
    SampleOutcome { radius, direction: dir.iter().copied().collect(), solutions, max_ratio }
}

/// Every `(radius, sample)` outcome, ordered by radius index then sample index.
pub fn probe_samples(p: &ProblemSpec, z: &KKTPair, cfg: &ProbeConfig) -> Result<Vec<SampleOutcome>> {
    Error::check_dim(p.n, z.x.len())?;
    Error::check_dim(p.m(), z.lam.len())?;
    let per_radius = 2 * (p.n + p.m()) + cfg.random_directions;
    let tasks: Vec<(usize, usize)> =
        (0..cfg.radii.len()).flat_map(|ri| (0..per_radius).map(move |si| (ri, si))).collect();
    let run = || tasks.par_iter().map(|&(ri, si)| probe_sample(p, z, cfg, ri, si)).collect::<Vec<_>>();
    match cfg.jobs {
        Some(j) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(j.max(1))
                .build()
                .map_err(|e| Error::InsufficientData(format!("thread pool: {e}")))?;
            Ok(pool.install(run))
        }
        None => Ok(run()),
    }
}

pub fn probe_isolated_calmness(p: &ProblemSpec, z: &KKTPair, cfg: &ProbeConfig) -> Result<ProbeResult> {
    let outcomes = probe_samples(p, z, cfg)?;
    let mut samples = Vec::new();
    for &radius in &cfg.radii {
        let at: Vec<&SampleOutcome> = outcomes.iter().filter(|o| o.radius == radius).collect();
        let max_ratio = at.iter().filter_map(|o| o.max_ratio).fold(None, |acc: Option<f64>, r| {
            Some(acc.map_or(r, |a| a.max(r)))
        });
        samples.push(ModulusSample {
            radius,
            max_ratio,
            perturbations: at.len(),
            solved: at.iter().filter(|o| o.max_ratio.is_some()).count(),
        });
    }
    let growth = growth(&samples);
    Ok(ProbeResult { modulus_samples: samples, growth, bounded: growth.map(|g| g <= 3.0) })
}

fn growth(samples: &[ModulusSample]) -> Option<f64> {
    let smallest = samples.iter().min_by(|a, b| a.radius.total_cmp(&b.radius))?;
    let anchor = samples
        .iter()
        .min_by(|a, b| (a.radius.log10() + 2.0).abs().total_cmp(&(b.radius.log10() + 2.0).abs()))?;
    let (hi, lo) = (smallest.max_ratio?, anchor.max_ratio?);
    if lo <= 0.0 {
        return if hi <= 0.0 { Some(1.0) } else { None };
    }
    Some(hi / lo)
}
