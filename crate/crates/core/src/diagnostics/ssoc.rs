//! Minimum of `q(w) = ⟨∇²ₓₓL w, w⟩ + d²δ_Θ(f(x), λ)(∇f(x) w)` over unit
//! vectors of the critical pre-image `{w : ∇f(x) w ∈ K}`.
//!
//! On the critical cone the curvature term is the quadratic `⟨C J w, J w⟩`, so
//! `q(w) = wᵀ Q w` with `Q = H + Jᵀ C J`. When `K` is polyhedral the minimizer
//! lies in the relative interior of some face; there it is an eigenvector of
//! `Q` reduced to the face's span. Enumerating active inequality sets and the
//! eigenspaces that meet the cone is therefore exact.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::system::{preimage, Preimage, SignedSystem};
use super::PointData;
use crate::cone::ExtendedReal;
use crate::error::Result;
use crate::linalg::{null_space, pseudo_inverse, sym_eigen, vstack, RANK_TOL};
use crate::polyhedral::MAX_SIGN_COORDS;

pub const SSOC_THRESHOLD: f64 = 1e-8;

#[derive(Debug, Clone, Serialize)]
pub struct SsocResult {
    pub min_value: ExtendedReal,
    pub witness: Option<Vec<f64>>,
    pub holds: bool,
    /// False when the minimum comes from multi-start search (an upper bound).
    pub conclusive: bool,
}

impl SsocResult {
    fn from_min(best: Option<(f64, DVector<f64>)>, conclusive: bool) -> Self {
        match best {
            Some((v, w)) => Self {
                min_value: ExtendedReal::Finite(v),
                witness: Some(w.iter().copied().collect()),
                holds: v > SSOC_THRESHOLD,
                conclusive,
            },
            None => Self { min_value: ExtendedReal::PosInf, witness: None, holds: true, conclusive },
        }
    }
}

pub(crate) fn check(pd: &PointData, starts: usize, seed: u64) -> Result<SsocResult> {
    let pre = preimage(&pd.k, &pd.jac);
    if pre.dropped.is_empty() && pre.ineq.nrows() <= MAX_SIGN_COORDS {
        return Ok(SsocResult::from_min(exact(&pd.q, &pre)?, true));
    }
    Ok(SsocResult::from_min(multistart(pd, starts, seed), false))
}

fn feasible(g: &DMatrix<f64>, w: &DVector<f64>) -> bool {
    (0..g.nrows()).all(|i| {
        let row = g.row(i);
        row.dot(&w.transpose()) <= 1e-9 * (1.0 + row.norm()) * w.norm()
    })
}

fn exact(q: &DMatrix<f64>, pre: &Preimage) -> Result<Option<(f64, DVector<f64>)>> {
    let n = q.nrows();
    let r = pre.ineq.nrows();
    let scale = 1.0 + q.amax();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0..1u64 << r {
        let active: Vec<usize> = (0..r).filter(|i| mask >> i & 1 == 1).collect();
        let ga = DMatrix::from_fn(active.len(), n, |i, j| pre.ineq[(active[i], j)]);
        let z = null_space(&vstack(&[&pre.eq, &ga], n), RANK_TOL);
        if z.ncols() == 0 {
            continue;
        }
        let reduced = z.transpose() * q * &z;
        let pairs = sym_eigen(&reduced);
        // Cluster equal eigenvalues into eigenspaces.
        let mut i = 0;
        while i < pairs.len() {
            let mut j = i + 1;
            while j < pairs.len() && pairs[j].0 - pairs[i].0 <= 1e-10 * scale {
                j += 1;
            }
            let value = pairs[i].0;
            if best.as_ref().is_some_and(|(b, _)| *b <= value) {
                break;
            }
            let vecs: Vec<DVector<f64>> = pairs[i..j].iter().map(|(_, v)| &z * v).collect();
            if let Some(w) = eigenspace_point(&vecs, &pre.ineq)? {
                best = Some((value, w));
                break;
            }
            i = j;
        }
    }
    Ok(best)
}

/// A unit vector of `span(vecs)` satisfying `G w ≤ 0`.
fn eigenspace_point(vecs: &[DVector<f64>], g: &DMatrix<f64>) -> Result<Option<DVector<f64>>> {
    if vecs.len() == 1 {
        for s in [1.0, -1.0] {
            let w = &vecs[0] * s;
            if feasible(g, &w) {
                return Ok(Some(w.normalize()));
            }
        }
        return Ok(None);
    }
    let mut sys = SignedSystem::new();
    let t0 = sys.add_vars(vecs.len(), false);
    let basis = DMatrix::from_columns(vecs);
    let gb = g * &basis;
    for i in 0..gb.nrows() {
        let s = sys.add_vars(1, true);
        let mut row: Vec<(usize, f64)> = (0..vecs.len()).map(|k| (t0 + k, gb[(i, k)])).collect();
        row.push((s, 1.0));
        sys.add_row(row, 0.0);
    }
    let watch: Vec<usize> = (t0..t0 + vecs.len()).collect();
    Ok(sys.nonzero_point(&watch)?.map(|z| (&basis * z.rows(t0, vecs.len())).normalize()))
}

/// Squared violation of `J w ∈ K` and its gradient.
fn violation(pd: &PointData, w: &DVector<f64>) -> (f64, DVector<f64>) {
    let v = &pd.jac * w;
    let p = DVector::from_vec(pd.k.project(v.as_slice()));
    let diff = &v - p;
    (diff.norm_squared(), pd.jac.transpose() * diff * 2.0)
}

/// Pulls `J w` back onto `K` through the pseudo-inverse of `J`.
fn restore(pd: &PointData, pinv: &DMatrix<f64>, w: &mut DVector<f64>) {
    for _ in 0..20 {
        let v = &pd.jac * &*w;
        let diff = &v - DVector::from_vec(pd.k.project(v.as_slice()));
        if diff.norm() <= 1e-15 {
            break;
        }
        *w -= pinv * diff;
    }
}

/// Gradient steps on `q` along the sphere, each followed by restoration.
/// Leaves `w` alone when restoration collapses it to the origin.
fn polish(pd: &PointData, pinv: &DMatrix<f64>, w: &mut DVector<f64>, qn: f64) {
    let lr = 0.25 / (1.0 + qn);
    let mut cur = w.clone();
    restore(pd, pinv, &mut cur);
    if cur.norm() < 1e-8 {
        return;
    }
    cur.normalize_mut();
    for _ in 0..3000 {
        let mut cand = &cur - &pd.q * &cur * (2.0 * lr);
        restore(pd, pinv, &mut cand);
        if cand.norm() < 1e-8 {
            break;
        }
        let cand = cand.normalize();
        let moved = (&cand - &cur).norm();
        cur = cand;
        if moved < 1e-14 {
            break;
        }
    }
    *w = cur;
}

/// Projected-gradient search on the unit sphere with a quadratic penalty for
/// leaving the pre-image. Only feasible end points count, so the result is an
/// upper bound on the true minimum.
fn multistart(pd: &PointData, starts: usize, seed: u64) -> Option<(f64, DVector<f64>)> {
    let n = pd.q.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, DVector<f64>)> = None;
    let (qn, jn) = (pd.q.norm(), pd.jac.norm_squared());
    let pinv = pseudo_inverse(&pd.jac, 1e-12);
    for _ in 0..starts {
        let mut w = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng)).normalize();
        for rho in [1e1, 1e3, 1e5, 1e7] {
            let lr = 0.25 / (1.0 + qn + rho * jn);
            for _ in 0..400 {
                let (_, gv) = violation(pd, &w);
                let grad = &pd.q * &w * 2.0 + gv * rho;
                let cand = &w - grad * lr;
                if cand.norm() == 0.0 {
                    break;
                }
                w = cand.normalize();
            }
        }
        polish(pd, &pinv, &mut w, qn);
        let (viol, _) = violation(pd, &w);
        if viol.sqrt() > 1e-6 || (w.norm() - 1.0).abs() > 1e-9 {
            continue;
        }
        let val = w.dot(&(&pd.q * &w));
        if best.as_ref().is_none_or(|(b, _)| val < *b) {
            best = Some((val, w));
        }
    }
    best
}
