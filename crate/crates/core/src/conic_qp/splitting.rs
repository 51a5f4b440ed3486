//! Operator splitting (ADMM) for convex subproblems, in the form
//! `min ½ dᵀH d + gᵀd s.t. z = A d, z ∈ Θ − c`, followed by a semismooth
//! Newton polish from the ADMM iterate.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::{Engine, SolverConfig, SubproblemData, SubproblemSolution, SubproblemStatus};
use crate::cone::{self, ConeSpec};
use crate::error::Result;
use crate::semismooth::{self, NewtonOptions};

const SIGMA: f64 = 1e-6;
const ALPHA: f64 = 1.6;
const EPS: f64 = 1e-7;
const CERT_EPS: f64 = 1e-6;
/// Unbounded adaptation can flip ρ back and forth forever; after this many
/// updates ρ stays fixed and plain ADMM convergence applies.
const MAX_RHO_UPDATES: usize = 6;

fn factor(data: &SubproblemData, rho: f64) -> Option<Cholesky<f64, Dyn>> {
    let n = data.n();
    let m = &data.h + DMatrix::identity(n, n) * SIGMA + data.a.transpose() * &data.a * rho;
    Cholesky::new(m)
}

/// `Π_{Θ−c}(v) = Π_Θ(v + c) − c`.
fn project_shifted(cone: &ConeSpec, c: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
    let shifted = v + c;
    let mut p = vec![0.0; v.len()];
    cone::project_into(cone, shifted.as_slice(), &mut p);
    DVector::from_vec(p) - c
}

fn in_cone(cone: &ConeSpec, v: &DVector<f64>, tol: f64) -> bool {
    cone::distance(cone, v.as_slice()).map(|d| d <= tol).unwrap_or(false)
}

/// `v` in the polar cone `Θ°`, i.e. `Π_Θ(v) ≈ 0`.
fn in_polar(cone: &ConeSpec, v: &DVector<f64>, tol: f64) -> bool {
    cone::project(cone, v.as_slice()).map(|p| cone::norm(&p) <= tol).unwrap_or(false)
}

pub(super) fn solve(data: &SubproblemData, cfg: &SolverConfig) -> Result<SubproblemSolution> {
    let (n, m) = (data.n(), data.m());
    let mut rho = 0.1;
    let mut rho_updates = 0;
    let Some(mut chol) = factor(data, rho) else {
        // H + σI + ρAᵀA not positive definite: H is not convex enough for ADMM.
        return Ok(SubproblemSolution::without_point(Engine::Splitting, SubproblemStatus::IterLimit, f64::NAN));
    };
    let at = data.a.transpose();
    let mut x = DVector::zeros(n);
    let mut z = project_shifted(&data.cone, &data.c, &DVector::zeros(m));
    let mut y = DVector::zeros(m);
    for it in 0..cfg.splitting_iters {
        let x_prev = x.clone();
        let y_prev = y.clone();
        let rhs = &x * SIGMA - &data.g + &at * (&z * rho - &y);
        let xt = chol.solve(&rhs);
        let zt = &data.a * &xt;
        x = &xt * ALPHA + &x * (1.0 - ALPHA);
        let zr = &zt * ALPHA + &z * (1.0 - ALPHA);
        let z_new = project_shifted(&data.cone, &data.c, &(&zr + &y / rho));
        y += (&zr - &z_new) * rho;
        z = z_new;

        let ax = &data.a * &x;
        let hx = &data.h * &x;
        let aty = &at * &y;
        let r_prim = (&ax - &z).amax();
        let r_dual = (&hx + &data.g + &aty).amax();
        let prim_scale = ax.amax().max(z.amax());
        let dual_scale = hx.amax().max(aty.amax()).max(data.g.amax());
        if r_prim <= EPS * (1.0 + prim_scale) && r_dual <= EPS * (1.0 + dual_scale) {
            break;
        }

        if it % 25 == 24 {
            let dy = &y - &y_prev;
            let dx = &x - &x_prev;
            // Primal infeasibility: Aᵀδy ≈ 0, δy ∈ Θ°, ⟨c, δy⟩ > 0.
            let dyn_ = dy.amax();
            if dyn_ > 0.0
                && (&at * &dy).amax() <= CERT_EPS * dyn_
                && in_polar(&data.cone, &(&dy / dyn_), CERT_EPS)
                && data.c.dot(&dy) > CERT_EPS * dyn_
            {
                return Ok(SubproblemSolution::without_point(Engine::Splitting, SubproblemStatus::Infeasible, f64::NAN));
            }
            // Dual infeasibility: Hδx ≈ 0, gᵀδx < 0, Aδx ∈ Θ.
            let dxn = dx.amax();
            if dxn > 0.0
                && (&data.h * &dx).amax() <= CERT_EPS * dxn
                && data.g.dot(&dx) < -CERT_EPS * dxn
                && in_cone(&data.cone, &(&data.a * &dx / dxn), CERT_EPS)
            {
                let ray = &dx / dx.norm();
                let mut sol = SubproblemSolution::without_point(Engine::Splitting, SubproblemStatus::Unbounded, f64::NAN);
                sol.descent_ray = Some(ray.iter().copied().collect());
                return Ok(sol);
            }
        }
        if it % 50 == 49 && rho_updates < MAX_RHO_UPDATES {
            let ratio = (r_prim / (prim_scale + 1e-30)) / (r_dual / (dual_scale + 1e-30) + 1e-30);
            let new_rho = (rho * ratio.sqrt()).clamp(1e-6, 1e6);
            if new_rho > 5.0 * rho || new_rho < 0.2 * rho {
                if let Some(c) = factor(data, new_rho) {
                    rho = new_rho;
                    chol = c;
                    rho_updates += 1;
                }
            }
        }
    }

    // Polish to the KKT tolerance with Newton from the ADMM estimate. A slow
    // ADMM tail can leave y on the wrong active set, so also start from (x, 0).
    let mut z0 = DVector::zeros(n + m);
    z0.rows_mut(0, n).copy_from(&x);
    z0.rows_mut(n, m).copy_from(&y);
    let opts = NewtonOptions { tol: super::NEWTON_TOL, max_iters: 40, ..Default::default() };
    let mut best = (data.kkt_residual(&x, &y), z0.clone());
    let mut primal_only = z0.clone();
    primal_only.rows_mut(n, m).fill(0.0);
    for start in [z0, primal_only] {
        let out = semismooth::solve(start, &opts, |v| data.residual_and_jacobian(v))?;
        if out.residual < best.0 {
            best = (out.residual, out.z);
        }
        if best.0 <= cfg.kkt_tol {
            break;
        }
    }
    let (d, lam) = data.split(&best.1);
    let r = data.kkt_residual(&d, &lam);
    if r <= cfg.kkt_tol {
        return Ok(SubproblemSolution::point(Engine::Splitting, d, lam, r));
    }
    Ok(SubproblemSolution::without_point(Engine::Splitting, SubproblemStatus::IterLimit, r))
}
