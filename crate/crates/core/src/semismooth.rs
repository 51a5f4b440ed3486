//! Damped semismooth Newton iteration for nonsmooth equations `F(z) = 0`.
//!
//! Steps solve `J Δ = −F` in the minimum-norm least-squares sense, so singular
//! generalized Jacobians (degenerate complementarity) do not stall the method.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::linalg::{lstsq, RANK_TOL};

#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iters: usize,
    /// Smallest step fraction tried by the backtracking line search.
    pub min_step: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { tol: 1e-11, max_iters: 60, min_step: 1e-6 }
    }
}

#[derive(Debug, Clone)]
pub struct NewtonOutcome {
    pub z: DVector<f64>,
    pub residual: f64,
    pub iters: usize,
    pub converged: bool,
}

/// `eval` returns the residual `F(z)` and one generalized Jacobian at `z`.
pub fn solve<E>(z0: DVector<f64>, opts: &NewtonOptions, mut eval: E) -> Result<NewtonOutcome>
where
    E: FnMut(&DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)>,
{
    let mut z = z0;
    let (mut f, mut jac) = eval(&z)?;
    let mut res = f.norm();
    for it in 0..opts.max_iters {
        if !res.is_finite() {
            break;
        }
        if res <= opts.tol {
            return Ok(NewtonOutcome { z, residual: res, iters: it, converged: true });
        }
        let (step, _) = lstsq(&jac, &(-&f), RANK_TOL);
        let mut alpha = 1.0;
        let mut accepted = false;
        while alpha >= opts.min_step {
            let trial = &z + &step * alpha;
            let (ft, jt) = eval(&trial)?;
            let rt = ft.norm();
            if rt.is_finite() && rt <= (1.0 - 1e-4 * alpha) * res {
                z = trial;
                f = ft;
                jac = jt;
                res = rt;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let converged = res <= opts.tol;
    Ok(NewtonOutcome { z, residual: res, iters: opts.max_iters, converged })
}
