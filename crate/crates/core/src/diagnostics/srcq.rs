//! Strict Robinson constraint qualification in its dual form
//! `K° ∩ ker ∇f(x)ᵀ = {0}`, with the primal form
//! `∇f(x) ℝⁿ + K = ℝᵐ` as a cross-check when `K` is polyhedral.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::system::{add_cone, add_polar, SignedSystem};
use super::PointData;
use crate::error::Result;
use crate::linalg::{null_space, RANK_TOL};
use crate::polyhedral::MAX_SIGN_COORDS;

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SrcqCertificate {
    /// A unit vector of `K° ∩ ker ∇f(x)ᵀ`.
    Intersection { u: Vec<f64> },
    /// The intersection was shown to be trivial.
    Exhausted { kernel_dim: usize, description: String },
    /// No intersection vector was found by sampling.
    NotFound { kernel_dim: usize, description: String },
}

#[derive(Debug, Clone, Serialize)]
pub struct SrcqResult {
    pub holds: bool,
    pub certificate: SrcqCertificate,
    pub conclusive: bool,
    /// Outcome of the primal form, when it was computed.
    pub primal_holds: Option<bool>,
}

pub(crate) fn check(pd: &PointData, starts: usize, seed: u64) -> Result<SrcqResult> {
    let jt = pd.jac.transpose();
    let z = null_space(&jt, RANK_TOL);
    let k = z.ncols();
    let primal_holds = if pd.k.is_polyhedral() { primal(pd)? } else { None };
    if k == 0 {
        return Ok(SrcqResult {
            holds: true,
            certificate: SrcqCertificate::Exhausted {
                kernel_dim: 0,
                description: "ker ∇f(x)ᵀ = {0}".into(),
            },
            conclusive: true,
            primal_holds,
        });
    }
    // u = Z t with u ∈ K° (nonpolyhedral pieces relaxed to free).
    let mut sys = SignedSystem::new();
    let t0 = sys.add_vars(k, false);
    let (u0, relaxed) = add_polar(&mut sys, &pd.k);
    let m = pd.k.dim();
    for i in 0..m {
        let mut row: Vec<(usize, f64)> = (0..k).map(|c| (t0 + c, z[(i, c)])).collect();
        row.push((u0 + i, -1.0));
        sys.add_row(row, 0.0);
    }
    if sys.sign_count() > MAX_SIGN_COORDS {
        return sampled(pd, &z, starts, seed, primal_holds);
    }
    let watch: Vec<usize> = (t0..t0 + k).collect();
    match sys.nonzero_point(&watch)? {
        None => Ok(SrcqResult {
            holds: true,
            certificate: SrcqCertificate::Exhausted {
                kernel_dim: k,
                description: format!(
                    "no unit vector of the {k}-dimensional kernel lies in the polar of the critical cone"
                ),
            },
            conclusive: true,
            primal_holds,
        }),
        Some(sol) if relaxed.is_empty() => {
            let u = (&z * sol.rows(t0, k)).normalize();
            Ok(SrcqResult {
                holds: false,
                certificate: SrcqCertificate::Intersection { u: u.iter().copied().collect() },
                conclusive: true,
                primal_holds,
            })
        }
        Some(_) => sampled(pd, &z, starts, seed, primal_holds),
    }
}

/// Alternating projections between the slice `{Z t : ⟨a, Z t⟩ = 1}` and `K°`
/// for random directions `a`; a converged point is a nonzero intersection.
fn sampled(
    pd: &PointData,
    z: &nalgebra::DMatrix<f64>,
    starts: usize,
    seed: u64,
    primal_holds: Option<bool>,
) -> Result<SrcqResult> {
    let k = z.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..starts {
        let a = z * DVector::from_fn(k, |_, _| StandardNormal.sample(&mut rng));
        let a = a.normalize();
        // Projection onto the affine slice of range(Z): Z Zᵀ x + (1 − ⟨a, Z Zᵀ x⟩) a.
        let slice = |x: &DVector<f64>| {
            let p = z * (z.transpose() * x);
            let s = 1.0 - a.dot(&p);
            p + &a * s
        };
        let mut u = a.clone();
        for _ in 0..2000 {
            let polar = &u - DVector::from_vec(pd.k.project(u.as_slice()));
            let next = slice(&polar);
            let moved = (&next - &u).norm();
            u = next;
            if moved < 1e-13 {
                break;
            }
        }
        let polar_gap = DVector::from_vec(pd.k.project(u.as_slice())).norm();
        if polar_gap <= 1e-10 * u.norm() && u.norm() > 0.0 {
            let un = u.normalize();
            if pd.k.polar_contains(un.as_slice(), 1e-9) && (pd.jac.transpose() * &un).norm() <= 1e-9 {
                return Ok(SrcqResult {
                    holds: false,
                    certificate: SrcqCertificate::Intersection { u: un.iter().copied().collect() },
                    conclusive: true,
                    primal_holds,
                });
            }
        }
    }
    Ok(SrcqResult {
        holds: true,
        certificate: SrcqCertificate::NotFound {
            kernel_dim: k,
            description: format!("{starts} alternating-projection runs found no intersection"),
        },
        conclusive: false,
        primal_holds,
    })
}

/// `∇f(x) ℝⁿ + K = ℝᵐ`, tested by reaching every `±eᵢ`.
fn primal(pd: &PointData) -> Result<Option<bool>> {
    let (m, n) = pd.jac.shape();
    for i in 0..m {
        for s in [1.0, -1.0] {
            let mut sys = SignedSystem::new();
            let w0 = sys.add_vars(n, false);
            let (v0, _) = add_cone(&mut sys, &pd.k);
            if sys.sign_count() > MAX_SIGN_COORDS {
                return Ok(None);
            }
            for r in 0..m {
                let mut row: Vec<(usize, f64)> = (0..n).map(|j| (w0 + j, pd.jac[(r, j)])).collect();
                row.push((v0 + r, 1.0));
                sys.add_row(row, if r == i { s } else { 0.0 });
            }
            if sys.point()?.is_none() {
                return Ok(Some(false));
            }
        }
    }
    Ok(Some(true))
}
