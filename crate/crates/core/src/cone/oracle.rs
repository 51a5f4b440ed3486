//! Numerical second subderivative from difference quotients.
//!
//! `Δ²_t δ_Θ(y, λ)(w′) = [δ_Θ(y + t w′) − t⟨λ, w′⟩] / (t²/2)` is minimized over a
//! box of half-width `C·t` around `w` for each `t` of a geometric grid. The box is
//! laid out in the frame `{λ̂} ⊕ λ^⊥` of each block: the transverse coordinates
//! are meshed, while along `λ̂` (where the quotient is linear) the best feasible
//! offset is located by bisection. Only membership in `Θ` is used, so the result
//! is independent of the closed-form curvature.

use super::{dot, norm, ConeKind, ConeSpec};
use crate::error::{Error, Result};
use crate::linalg::complement_basis;
use nalgebra::DVector;

/// Returned when no feasible `w′` exists at the finest `t`.
pub const DQ_INFEASIBLE: f64 = 1e30;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleParams {
    /// Largest step `t_0`; the grid is `t_j = t_0 · 2^{-j}`.
    pub t0: f64,
    /// Number of halvings `J` (grid has `J + 1` points).
    pub halvings: usize,
    /// Box half-width factor `C` in `‖w′ − w‖_∞ ≤ C·t`.
    pub radius_factor: f64,
    /// Mesh points per transverse coordinate.
    pub mesh_points: usize,
    pub bisection_steps: usize,
}

impl Default for OracleParams {
    fn default() -> Self {
        Self { t0: 1e-2, halvings: 10, radius_factor: 5.0, mesh_points: 21, bisection_steps: 60 }
    }
}

impl OracleParams {
    pub fn grid(&self) -> Vec<f64> {
        (0..=self.halvings).map(|j| self.t0 * 0.5f64.powi(j as i32)).collect()
    }
}

fn in_block(kind: ConeKind, v: &[f64]) -> bool {
    match kind {
        ConeKind::Zero => v.iter().all(|&x| x == 0.0),
        ConeKind::Orthant => v.iter().all(|&x| x >= 0.0),
        ConeKind::SecondOrder => {
            let d = v.len();
            norm(&v[..d - 1]) <= v[d - 1]
        }
    }
}

/// Minimum of the quotient over the box for one block at step `t`.
fn block_min(kind: ConeKind, y: &[f64], lam: &[f64], w: &[f64], t: f64, p: &OracleParams) -> Option<f64> {
    let d = y.len();
    let radius = p.radius_factor * t;
    if kind == ConeKind::Zero {
        // The only feasible w′ is −y/t.
        let wp: Vec<f64> = y.iter().map(|v| -v / t).collect();
        let inside = wp.iter().zip(w).all(|(a, b)| (a - b).abs() <= radius);
        return inside.then(|| -2.0 * dot(lam, &wp) / t);
    }
    let nl = norm(lam);
    let lam_hat: Option<DVector<f64>> = (nl > 0.0).then(|| DVector::from_iterator(d, lam.iter().map(|v| v / nl)));
    let basis = match &lam_hat {
        Some(h) => complement_basis(h),
        None => nalgebra::DMatrix::identity(d, d),
    };
    let k = basis.ncols();
    let mesh = p.mesh_points.max(1);
    let offsets: Vec<f64> = if mesh == 1 {
        vec![0.0]
    } else {
        (0..mesh).map(|i| -radius + 2.0 * radius * i as f64 / (mesh - 1) as f64).collect()
    };
    let lam_w = dot(lam, w);
    let point = |base: &[f64], s: f64, out: &mut Vec<f64>| {
        out.clear();
        for i in 0..d {
            let dir = lam_hat.as_ref().map_or(0.0, |h| h[i]);
            out.push(y[i] + t * (base[i] + s * dir));
        }
    };

    let mut best: Option<f64> = None;
    let mut idx = vec![0usize; k];
    let mut base = vec![0.0; d];
    let mut buf = Vec::with_capacity(d);
    loop {
        for i in 0..d {
            base[i] = w[i];
            for (j, &ij) in idx.iter().enumerate() {
                base[i] += offsets[ij] * basis[(i, j)];
            }
        }
        let value = if lam_hat.is_none() {
            point(&base, 0.0, &mut buf);
            in_block(kind, &buf).then_some(0.0)
        } else {
            point(&base, radius, &mut buf);
            let s_star = if in_block(kind, &buf) {
                Some(radius)
            } else {
                point(&base, -radius, &mut buf);
                if in_block(kind, &buf) {
                    let (mut lo, mut hi) = (-radius, radius);
                    for _ in 0..p.bisection_steps {
                        let mid = 0.5 * (lo + hi);
                        point(&base, mid, &mut buf);
                        if in_block(kind, &buf) {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                    Some(lo)
                } else {
                    None
                }
            };
            // ⟨λ, w′⟩ = ⟨λ, w⟩ + s‖λ‖ because the mesh offsets are orthogonal to λ.
            s_star.map(|s| -2.0 * (lam_w + s * nl) / t)
        };
        if let Some(v) = value {
            best = Some(best.map_or(v, |b: f64| b.min(v)));
            if lam_hat.is_none() {
                break;
            }
        }
        // advance the mixed-radix mesh index
        let mut j = 0;
        while j < k {
            idx[j] += 1;
            if idx[j] < mesh {
                break;
            }
            idx[j] = 0;
            j += 1;
        }
        if j == k {
            break;
        }
    }
    best
}

fn quotient_min(cone: &ConeSpec, y: &[f64], lam: &[f64], w: &[f64], t: f64, p: &OracleParams) -> Option<f64> {
    let mut total = 0.0;
    for (r, b) in cone.ranges() {
        if b.kind == ConeKind::Orthant {
            // The box and the quotient are separable across coordinates.
            for i in r {
                total += block_min(b.kind, &y[i..=i], &lam[i..=i], &w[i..=i], t, p)?;
            }
        } else {
            total += block_min(b.kind, &y[r.clone()], &lam[r.clone()], &w[r.clone()], t, p)?;
        }
    }
    Some(total)
}

/// Minimized difference quotient for every `t` of the grid, coarsest first;
/// `None` marks steps without any feasible `w′`.
pub fn dq_oracle_profile(
    cone: &ConeSpec,
    y: &[f64],
    lam: &[f64],
    w: &[f64],
    params: &OracleParams,
) -> Result<Vec<(f64, Option<f64>)>> {
    for v in [y, lam, w] {
        Error::check_dim(cone.total_dim(), v.len())?;
    }
    Ok(params
        .grid()
        .into_iter()
        .map(|t| (t, quotient_min(cone, y, lam, w, t, params)))
        .collect())
}

/// Numerical estimate of `d²δ_Θ(y, λ)(w)`: the minimized quotient at the finest
/// grid step, or [`DQ_INFEASIBLE`] when nothing near `w` stays feasible.
pub fn dq_oracle_second_subderivative(
    cone: &ConeSpec,
    y: &[f64],
    lam: &[f64],
    w: &[f64],
    params: &OracleParams,
) -> Result<f64> {
    let t = *params.grid().last().expect("nonempty grid");
    for v in [y, lam, w] {
        Error::check_dim(cone.total_dim(), v.len())?;
    }
    Ok(quotient_min(cone, y, lam, w, t, params).unwrap_or(DQ_INFEASIBLE))
}
