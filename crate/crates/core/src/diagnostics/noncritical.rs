//! Criticality of a multiplier: a nonzero `w` with
//! `0 ∈ ∇²ₓₓL w + ∇f(x)ᵀ DN_Θ(f(x), λ)(∇f(x) w)`.
//!
//! With `DN(v) = C v + N_K(v)` on the critical cone the inclusion reads
//! `Q w + Jᵀ η = 0`, `J w ∈ K`, `η ∈ N_K(J w)`. For polyhedral `K` the graph of
//! `N_K` is a finite union of polyhedral cones (one per choice of face for each
//! halfspace or ray piece), so enumerating those choices decides the question.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::system::SignedSystem;
use super::PointData;
use crate::cone::LocalCone;
use crate::cone::proto_derivative_contains;
use crate::error::Result;
use crate::polyhedral::MAX_SIGN_COORDS;
use crate::semismooth::{self, NewtonOptions};

/// Largest number of halfspace/ray pieces whose face choices are enumerated.
pub const MAX_BRANCH_PIECES: usize = 12;
pub const WITNESS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Serialize)]
pub struct CriticalWitness {
    /// Unit primal direction.
    pub w: Vec<f64>,
    /// Element of `DN_Θ(f(x), λ)(∇f(x) w)` with `∇²ₓₓL w + ∇f(x)ᵀ u = 0`.
    pub u: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct NoncriticalResult {
    pub holds: bool,
    pub witness: Option<CriticalWitness>,
    pub conclusive: bool,
    pub method: String,
}

/// Checks the defining inclusion for `(w, u)` independently of how it was found.
pub fn verify_witness(pd: &PointData, w: &[f64], u: &[f64], tol: f64) -> Result<bool> {
    let wv = DVector::from_column_slice(w);
    if wv.norm() < 0.5 {
        return Ok(false);
    }
    let uv = DVector::from_column_slice(u);
    let v = &pd.jac * &wv;
    if !proto_derivative_contains(&pd.cone, pd.y.as_slice(), &pd.lam, v.as_slice(), u, tol)? {
        return Ok(false);
    }
    let r = &pd.hess * &wv + pd.jac.transpose() * &uv;
    Ok(r.norm() <= tol * (1.0 + pd.hess.norm() + pd.jac.norm() * uv.norm()))
}

fn witness_from(pd: &PointData, w: DVector<f64>, eta: DVector<f64>) -> Option<CriticalWitness> {
    let s = w.norm();
    if s == 0.0 {
        return None;
    }
    let w = w / s;
    let eta = eta / s;
    let u = &pd.curv * (&pd.jac * &w) + eta;
    Some(CriticalWitness { w: w.iter().copied().collect(), u: u.iter().copied().collect() })
}

pub(crate) fn check(pd: &PointData, safety_starts: usize, seed: u64) -> Result<NoncriticalResult> {
    let branching = pd
        .k
        .pieces()
        .iter()
        .filter(|p| matches!(p.cone, LocalCone::Halfspace(_) | LocalCone::Ray(_)))
        .count();
    let mut enumerated = false;
    let mut unverified = false;
    if pd.k.is_polyhedral() && branching <= MAX_BRANCH_PIECES {
        enumerated = true;
        for mask in 0..1u64 << branching {
            let Some(sys) = state_system(pd, mask) else { continue };
            if sys.sign_count() > MAX_SIGN_COORDS {
                enumerated = false;
                break;
            }
            let n = pd.jac.ncols();
            let watch: Vec<usize> = (0..n).collect();
            if let Some(z) = sys.nonzero_point(&watch)? {
                let w = z.rows(0, n).into_owned();
                let eta = z.rows(n, pd.jac.nrows()).into_owned();
                if let Some(wit) = witness_from(pd, w, eta) {
                    if verify_witness(pd, &wit.w, &wit.u, WITNESS_TOL)? {
                        return Ok(NoncriticalResult {
                            holds: false,
                            witness: Some(wit),
                            conclusive: true,
                            method: "face enumeration".into(),
                        });
                    }
                    unverified = true;
                }
            }
        }
    }
    if !pd.cone.is_polyhedral() || !enumerated {
        if let Some(wit) = safety_net(pd, safety_starts, seed)? {
            return Ok(NoncriticalResult {
                holds: false,
                witness: Some(wit),
                conclusive: true,
                method: "random-start Newton".into(),
            });
        }
    }
    let conclusive = enumerated && !unverified;
    let method = if enumerated { "face enumeration" } else { "random-start Newton (sampled)" };
    Ok(NoncriticalResult { holds: true, witness: None, conclusive, method: method.into() })
}

/// The polyhedral cone of `(w, η)` for one choice of faces; variables are
/// `w` (n), `η` (m), then piece parameters.
fn state_system(pd: &PointData, mask: u64) -> Option<SignedSystem> {
    let (m, n) = pd.jac.shape();
    let mut sys = SignedSystem::new();
    let w0 = sys.add_vars(n, false);
    let e0 = sys.add_vars(m, false);
    for i in 0..n {
        let mut row: Vec<(usize, f64)> = (0..n).map(|j| (w0 + j, pd.q[(i, j)])).collect();
        row.extend((0..m).map(|k| (e0 + k, pd.jac[(k, i)])));
        sys.add_row(row, 0.0);
    }
    let jw = |k: usize| -> Vec<(usize, f64)> { (0..n).map(|j| (w0 + j, pd.jac[(k, j)])).collect() };
    let combo = |coef: &DVector<f64>, offset: usize| -> Vec<(usize, f64)> {
        let mut row = Vec::new();
        for (k, &c) in coef.iter().enumerate() {
            row.extend(jw(offset + k).into_iter().map(|(j, v)| (j, v * c)));
        }
        row
    };
    let mut bit = 0;
    for p in pd.k.pieces() {
        let (o, d) = (p.offset, p.dim);
        match &p.cone {
            LocalCone::Full => {
                for k in o..o + d {
                    sys.add_row(vec![(e0 + k, 1.0)], 0.0);
                }
            }
            LocalCone::Zero => {
                for k in o..o + d {
                    sys.add_row(jw(k), 0.0);
                }
            }
            LocalCone::Hyperplane(nv) => {
                sys.add_row(combo(nv, o), 0.0);
                let t = sys.add_vars(1, false);
                for k in 0..d {
                    sys.add_row(vec![(e0 + o + k, 1.0), (t, -nv[k])], 0.0);
                }
            }
            LocalCone::Halfspace(nv) => {
                let active = mask >> bit & 1 == 1;
                bit += 1;
                if active {
                    sys.add_row(combo(nv, o), 0.0);
                    let t = sys.add_vars(1, true);
                    for k in 0..d {
                        sys.add_row(vec![(e0 + o + k, 1.0), (t, -nv[k])], 0.0);
                    }
                } else {
                    let s = sys.add_vars(1, true);
                    let mut row = combo(nv, o);
                    row.push((s, 1.0));
                    sys.add_row(row, 0.0);
                    for k in o..o + d {
                        sys.add_row(vec![(e0 + k, 1.0)], 0.0);
                    }
                }
            }
            LocalCone::Ray(r) => {
                let at_origin = mask >> bit & 1 == 1;
                bit += 1;
                if at_origin {
                    for k in o..o + d {
                        sys.add_row(jw(k), 0.0);
                    }
                    let s = sys.add_vars(1, true);
                    let mut row: Vec<(usize, f64)> = (0..d).map(|k| (e0 + o + k, r[k])).collect();
                    row.push((s, 1.0));
                    sys.add_row(row, 0.0);
                } else {
                    let s = sys.add_vars(1, true);
                    for k in 0..d {
                        let mut row = jw(o + k);
                        row.push((s, -r[k]));
                        sys.add_row(row, 0.0);
                    }
                    sys.add_row((0..d).map(|k| (e0 + o + k, r[k])).collect(), 0.0);
                }
            }
            LocalCone::SecondOrder => return None,
        }
    }
    Some(sys)
}

/// Semismooth Newton on `Q w + Jᵀη = 0`, `J w = Π_K(J w + η)`, `‖w‖² = 1`
/// from random starts.
fn safety_net(pd: &PointData, starts: usize, seed: u64) -> Result<Option<CriticalWitness>> {
    let (m, n) = pd.jac.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let opts = NewtonOptions { tol: 1e-12, max_iters: 60, ..Default::default() };
    for _ in 0..starts {
        let z0 = DVector::from_fn(n + m, |_, _| StandardNormal.sample(&mut rng));
        let out = semismooth::solve(z0, &opts, |z| {
            let w = z.rows(0, n).into_owned();
            let eta = z.rows(n, m).into_owned();
            let v = &pd.jac * &w;
            let arg = &v + &eta;
            let proj = DVector::from_vec(pd.k.project(arg.as_slice()));
            let pj = pd.k.projection_jacobian(arg.as_slice());
            let mut f = DVector::zeros(n + m + 1);
            f.rows_mut(0, n).copy_from(&(&pd.q * &w + pd.jac.transpose() * &eta));
            f.rows_mut(n, m).copy_from(&(&v - proj));
            f[n + m] = w.norm_squared() - 1.0;
            let mut jac = DMatrix::zeros(n + m + 1, n + m);
            jac.view_mut((0, 0), (n, n)).copy_from(&pd.q);
            jac.view_mut((0, n), (n, m)).copy_from(&pd.jac.transpose());
            let ipj = DMatrix::identity(m, m) - &pj;
            jac.view_mut((n, 0), (m, n)).copy_from(&(ipj * &pd.jac));
            jac.view_mut((n, n), (m, m)).copy_from(&(-pj));
            jac.view_mut((n + m, 0), (1, n)).copy_from(&(w.transpose() * 2.0));
            Ok((f, jac))
        })?;
        if !out.converged {
            continue;
        }
        let w = out.z.rows(0, n).into_owned();
        let eta = out.z.rows(n, m).into_owned();
        if let Some(wit) = witness_from(pd, w, eta) {
            if verify_witness(pd, &wit.w, &wit.u, WITNESS_TOL)? {
                return Ok(Some(wit));
            }
        }
    }
    Ok(None)
}
