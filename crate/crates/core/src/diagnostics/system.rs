//! Linear systems with sign constraints, `{z : A z = b, z_S ≥ 0}`, assembled
//! variable by variable, and the piecewise descriptions of a polyhedral
//! critical cone and its polar used by the exact checks.

use nalgebra::{DMatrix, DVector};

use crate::cone::{CriticalCone, LocalCone};
use crate::error::Result;
use crate::linalg::complement_basis;
use crate::polyhedral::Polyhedron;

const FEAS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Default)]
pub(crate) struct SignedSystem {
    vars: usize,
    signs: Vec<usize>,
    rows: Vec<(Vec<(usize, f64)>, f64)>,
}

impl SignedSystem {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends `k` variables and returns the index of the first.
    pub fn add_vars(&mut self, k: usize, signed: bool) -> usize {
        let first = self.vars;
        self.vars += k;
        if signed {
            self.signs.extend(first..first + k);
        }
        first
    }

    pub fn add_row(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64) {
        self.rows.push((coeffs, rhs));
    }

    pub fn sign_count(&self) -> usize {
        self.signs.len()
    }

    fn polyhedron(&self, extra: &[(usize, f64)]) -> Polyhedron {
        let r = self.rows.len() + extra.len();
        let mut a = DMatrix::zeros(r, self.vars);
        let mut b = DVector::zeros(r);
        for (i, (coeffs, rhs)) in self.rows.iter().enumerate() {
            for &(j, v) in coeffs {
                a[(i, j)] += v;
            }
            b[i] = *rhs;
        }
        for (k, &(j, v)) in extra.iter().enumerate() {
            a[(self.rows.len() + k, j)] = 1.0;
            b[self.rows.len() + k] = v;
        }
        Polyhedron::new(a, b, self.signs.clone(), FEAS_TOL)
    }

    pub fn point(&self) -> Result<Option<DVector<f64>>> {
        self.polyhedron(&[]).point()
    }

    /// A point of the (conic) system with some variable in `watch` nonzero.
    ///
    /// The system is homogeneous, so a nonzero watched coordinate can be scaled
    /// to `±1`; trying each one in turn is exhaustive.
    pub fn nonzero_point(&self, watch: &[usize]) -> Result<Option<DVector<f64>>> {
        for &j in watch {
            for s in [1.0, -1.0] {
                if let Some(z) = self.polyhedron(&[(j, s)]).point()? {
                    return Ok(Some(z));
                }
            }
        }
        Ok(None)
    }
}

/// `{w : E w = 0, G w ≤ 0}` describing `{w : J w ∈ K}` for a polyhedral `K`,
/// plus the coordinate ranges of nonpolyhedral pieces that were left out.
pub(crate) struct Preimage {
    pub eq: DMatrix<f64>,
    pub ineq: DMatrix<f64>,
    pub dropped: Vec<(usize, usize)>,
}

pub(crate) fn preimage(k: &CriticalCone, jac: &DMatrix<f64>) -> Preimage {
    let n = jac.ncols();
    let mut eq: Vec<DVector<f64>> = Vec::new();
    let mut ineq: Vec<DVector<f64>> = Vec::new();
    let mut dropped = Vec::new();
    for p in k.pieces() {
        let jr = jac.rows(p.offset, p.dim);
        match &p.cone {
            LocalCone::Full => {}
            LocalCone::Zero => eq.extend(jr.row_iter().map(|r| r.transpose().into_owned())),
            LocalCone::Hyperplane(v) => eq.push((jr.transpose() * v).into_owned()),
            LocalCone::Halfspace(v) => ineq.push((jr.transpose() * v).into_owned()),
            LocalCone::Ray(r) => {
                let b = complement_basis(r);
                for c in b.column_iter() {
                    eq.push((jr.transpose() * c).into_owned());
                }
                ineq.push(-(jr.transpose() * r).into_owned());
            }
            LocalCone::SecondOrder => dropped.push((p.offset, p.dim)),
        }
    }
    let stack = |rows: &[DVector<f64>]| {
        let mut m = DMatrix::zeros(rows.len(), n);
        for (i, r) in rows.iter().enumerate() {
            m.row_mut(i).copy_from(&r.transpose());
        }
        m
    };
    Preimage { eq: stack(&eq), ineq: stack(&ineq), dropped }
}

/// Adds variables `u` (length m) to `sys` constrained to the polar `K°`
/// piecewise, returning the index of `u[0]`. Nonpolyhedral pieces are left
/// free (a relaxation) and reported in the returned list.
pub(crate) fn add_polar(sys: &mut SignedSystem, k: &CriticalCone) -> (usize, Vec<(usize, usize)>) {
    let u0 = sys.add_vars(k.dim(), false);
    let mut relaxed = Vec::new();
    for p in k.pieces() {
        let idx: Vec<usize> = (u0 + p.offset..u0 + p.offset + p.dim).collect();
        match &p.cone {
            // K piece is everything: polar is {0}.
            LocalCone::Full => {
                for &i in &idx {
                    sys.add_row(vec![(i, 1.0)], 0.0);
                }
            }
            LocalCone::Zero => {}
            LocalCone::Hyperplane(v) | LocalCone::Halfspace(v) => {
                let t = sys.add_vars(1, matches!(p.cone, LocalCone::Halfspace(_)));
                for (k, &i) in idx.iter().enumerate() {
                    sys.add_row(vec![(i, 1.0), (t, -v[k])], 0.0);
                }
            }
            LocalCone::Ray(r) => {
                let s = sys.add_vars(1, true);
                let mut row: Vec<(usize, f64)> = idx.iter().zip(r.iter()).map(|(&i, &v)| (i, v)).collect();
                row.push((s, 1.0));
                sys.add_row(row, 0.0);
            }
            LocalCone::SecondOrder => relaxed.push((p.offset, p.dim)),
        }
    }
    (u0, relaxed)
}

/// Adds variables `v` (length m) constrained to the polyhedral pieces of `K`.
pub(crate) fn add_cone(sys: &mut SignedSystem, k: &CriticalCone) -> (usize, Vec<(usize, usize)>) {
    let v0 = sys.add_vars(k.dim(), false);
    let mut relaxed = Vec::new();
    for p in k.pieces() {
        let idx: Vec<usize> = (v0 + p.offset..v0 + p.offset + p.dim).collect();
        match &p.cone {
            LocalCone::Full => {}
            LocalCone::Zero => {
                for &i in &idx {
                    sys.add_row(vec![(i, 1.0)], 0.0);
                }
            }
            LocalCone::Hyperplane(n) => {
                sys.add_row(idx.iter().zip(n.iter()).map(|(&i, &v)| (i, v)).collect(), 0.0);
            }
            LocalCone::Halfspace(n) => {
                let s = sys.add_vars(1, true);
                let mut row: Vec<(usize, f64)> = idx.iter().zip(n.iter()).map(|(&i, &v)| (i, v)).collect();
                row.push((s, 1.0));
                sys.add_row(row, 0.0);
            }
            LocalCone::Ray(r) => {
                let s = sys.add_vars(1, true);
                for (k, &i) in idx.iter().enumerate() {
                    sys.add_row(vec![(i, 1.0), (s, -r[k])], 0.0);
                }
            }
            LocalCone::SecondOrder => relaxed.push((p.offset, p.dim)),
        }
    }
    (v0, relaxed)
}
