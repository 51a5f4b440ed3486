use nalgebra::{DMatrix, DVector};

use super::{
    check_normal, dot, norm, project_soc, projection_jacobian, soc_boundary_normal, soc_position, ConeKind, ConeSpec,
    SocPosition,
};
use crate::error::Result;

/// One factor of the critical cone, living on a contiguous coordinate range.
#[derive(Debug, Clone, PartialEq)]
pub enum LocalCone {
    /// The whole space.
    Full,
    /// `{0}`.
    Zero,
    /// `{v : ⟨n, v⟩ = 0}`.
    Hyperplane(DVector<f64>),
    /// `{v : ⟨n, v⟩ ≤ 0}`.
    Halfspace(DVector<f64>),
    /// `{s r : s ≥ 0}`.
    Ray(DVector<f64>),
    /// The second-order cone itself (apex with zero multiplier); not polyhedral.
    SecondOrder,
}

impl LocalCone {
    fn project(&self, x: &[f64], out: &mut [f64]) {
        match self {
            LocalCone::Full => out.copy_from_slice(x),
            LocalCone::Zero => out.iter_mut().for_each(|o| *o = 0.0),
            LocalCone::Hyperplane(n) | LocalCone::Halfspace(n) => {
                let n = n.as_slice();
                let s = dot(n, x) / dot(n, n);
                let shift = if matches!(self, LocalCone::Halfspace(_)) { s.max(0.0) } else { s };
                for i in 0..x.len() {
                    out[i] = x[i] - shift * n[i];
                }
            }
            LocalCone::Ray(r) => {
                let r = r.as_slice();
                let s = (dot(r, x) / dot(r, r)).max(0.0);
                for i in 0..x.len() {
                    out[i] = s * r[i];
                }
            }
            LocalCone::SecondOrder => project_soc(x, out),
        }
    }

    pub fn is_polyhedral(&self) -> bool {
        !matches!(self, LocalCone::SecondOrder)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Piece {
    pub offset: usize,
    pub dim: usize,
    pub cone: LocalCone,
}

/// `K_Θ(y, λ)` as a product of simple pieces.
///
/// Orthant blocks split into one-dimensional pieces; every other block yields a
/// single piece. Since `⟨λ_b, w_b⟩ ≤ 0` on each block's tangent cone, the
/// critical cone is the product of the blockwise critical cones.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticalCone {
    pieces: Vec<Piece>,
    dim: usize,
}

impl CriticalCone {
    pub fn new(cone: &ConeSpec, y: &[f64], lam: &[f64], tol: f64) -> Result<Self> {
        check_normal(cone, y, lam, tol)?;
        let yscale = tol * (1.0 + norm(y));
        let lscale = tol * (1.0 + norm(lam));
        let mut pieces = Vec::new();
        for (r, b) in cone.ranges() {
            match b.kind {
                ConeKind::Zero => pieces.push(Piece { offset: r.start, dim: b.dim, cone: LocalCone::Zero }),
                ConeKind::Orthant => {
                    for i in r {
                        let cone = if y[i] > yscale {
                            LocalCone::Full
                        } else if lam[i] < -lscale {
                            LocalCone::Zero
                        } else {
                            LocalCone::Halfspace(DVector::from_vec(vec![-1.0]))
                        };
                        pieces.push(Piece { offset: i, dim: 1, cone });
                    }
                }
                ConeKind::SecondOrder => {
                    let (yb, lb) = (&y[r.clone()], &lam[r.clone()]);
                    let d = b.dim;
                    let cone = match soc_position(yb, tol) {
                        SocPosition::Interior => LocalCone::Full,
                        SocPosition::Boundary => {
                            let n = DVector::from_vec(soc_boundary_normal(yb));
                            if -lb[d - 1] > lscale {
                                LocalCone::Hyperplane(n)
                            } else {
                                LocalCone::Halfspace(n)
                            }
                        }
                        SocPosition::Apex => {
                            // λ_b lies in the polar −SOC.
                            let nl = norm(lb);
                            let lbar = norm(&lb[..d - 1]);
                            if nl <= lscale {
                                LocalCone::SecondOrder
                            } else if lbar < -lb[d - 1] - lscale {
                                LocalCone::Zero
                            } else {
                                let mut ray: Vec<f64> = lb[..d - 1].iter().map(|v| v / lbar).collect();
                                ray.push(1.0);
                                LocalCone::Ray(DVector::from_vec(ray))
                            }
                        }
                    };
                    pieces.push(Piece { offset: r.start, dim: d, cone });
                }
            }
        }
        Ok(Self { pieces, dim: cone.total_dim() })
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_polyhedral(&self) -> bool {
        self.pieces.iter().all(|p| p.cone.is_polyhedral())
    }

    /// Euclidean projection onto `K`.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        for p in &self.pieces {
            let r = p.offset..p.offset + p.dim;
            p.cone.project(&x[r.clone()], &mut out[r]);
        }
        out
    }

    /// One element of the generalized Jacobian of `Π_K` at `x`.
    pub fn projection_jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(self.dim, self.dim);
        for p in &self.pieces {
            let (o, d) = (p.offset, p.dim);
            let xb = &x[o..o + d];
            let block = match &p.cone {
                LocalCone::Full => DMatrix::identity(d, d),
                LocalCone::Zero => DMatrix::zeros(d, d),
                LocalCone::Hyperplane(n) => DMatrix::identity(d, d) - n * n.transpose() / n.norm_squared(),
                LocalCone::Halfspace(n) => {
                    if dot(n.as_slice(), xb) > 0.0 {
                        DMatrix::identity(d, d) - n * n.transpose() / n.norm_squared()
                    } else {
                        DMatrix::identity(d, d)
                    }
                }
                LocalCone::Ray(r) => {
                    if dot(r.as_slice(), xb) > 0.0 {
                        r * r.transpose() / r.norm_squared()
                    } else {
                        DMatrix::zeros(d, d)
                    }
                }
                LocalCone::SecondOrder => {
                    let soc = ConeSpec::single(ConeKind::SecondOrder, d).expect("valid block");
                    projection_jacobian(&soc, xb).expect("matching dimension")
                }
            };
            jac.view_mut((o, o), (d, d)).copy_from(&block);
        }
        jac
    }

    pub fn contains(&self, w: &[f64], tol: f64) -> bool {
        let p = self.project(w);
        let d: f64 = w.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        d <= tol * (1.0 + norm(w))
    }

    /// `η ∈ N_K(w)` via `w = Π_K(w + η)`; assumes `w ∈ K`.
    pub fn normal_contains(&self, w: &[f64], eta: &[f64], tol: f64) -> bool {
        let shifted: Vec<f64> = w.iter().zip(eta).map(|(a, b)| a + b).collect();
        let p = self.project(&shifted);
        let d: f64 = w.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        d <= tol * (1.0 + norm(w) + norm(eta))
    }

    /// `u ∈ K*` (the polar cone), i.e. `u ∈ N_K(0)`.
    pub fn polar_contains(&self, u: &[f64], tol: f64) -> bool {
        self.normal_contains(&vec![0.0; u.len()], u, tol)
    }
}
