//! Exact linear programming over small polyhedra `{z : A z = b, z_j ≥ 0 (j ∈ S)}`
//! by enumerating which sign constraints are pinned to zero.
//!
//! Every nonempty polyhedron contains an affine set of the form
//! `{A z = b, z_T = 0}` on which the remaining sign coordinates are constant
//! and nonnegative (a minimal face). Linear objectives are either unbounded,
//! detected through the recession cone, or attain their minimum on one of those
//! affine sets.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{lstsq, null_space, RANK_TOL};

/// Largest number of sign constraints handled by enumeration.
pub const MAX_SIGN_COORDS: usize = 14;

#[derive(Debug, Clone)]
pub struct Polyhedron {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub signs: Vec<usize>,
    pub tol: f64,
}

/// An affine set `point + range(basis)` contained in the polyhedron.
#[derive(Debug, Clone)]
pub struct Face {
    pub point: DVector<f64>,
    pub basis: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LpValue {
    Empty,
    Unbounded,
    Finite(f64),
}

impl Polyhedron {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, signs: Vec<usize>, tol: f64) -> Self {
        Self { a, b, signs, tol }
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    fn budget(&self) -> Result<()> {
        if self.signs.len() > MAX_SIGN_COORDS {
            return Err(Error::BudgetExceeded(format!(
                "{} sign constraints (limit {MAX_SIGN_COORDS})",
                self.signs.len()
            )));
        }
        Ok(())
    }

    /// The affine set obtained by pinning the sign coordinates in `mask` to zero,
    /// if it lies inside the polyhedron.
    fn face_for(&self, mask: u64) -> Option<Face> {
        let p = self.dim();
        let pinned: Vec<usize> = (0..self.signs.len()).filter(|k| mask >> k & 1 == 1).map(|k| self.signs[k]).collect();
        let rows = self.a.nrows() + pinned.len();
        let mut m = DMatrix::zeros(rows, p);
        m.view_mut((0, 0), (self.a.nrows(), p)).copy_from(&self.a);
        let mut rhs = DVector::zeros(rows);
        rhs.rows_mut(0, self.a.nrows()).copy_from(&self.b);
        for (r, &j) in pinned.iter().enumerate() {
            m[(self.a.nrows() + r, j)] = 1.0;
        }
        let (z0, res) = lstsq(&m, &rhs, RANK_TOL);
        if res > self.tol * (1.0 + self.b.norm()) {
            return None;
        }
        let basis = null_space(&m, RANK_TOL);
        let scale = self.tol * (1.0 + z0.norm());
        for &j in &self.signs {
            if pinned.contains(&j) {
                continue;
            }
            if z0[j] < -scale {
                return None;
            }
            if basis.ncols() > 0 && basis.row(j).amax() > 1e-9 {
                return None;
            }
        }
        let mut point = z0;
        for &j in &pinned {
            point[j] = 0.0;
        }
        Some(Face { point, basis })
    }

    /// All affine subsets produced by the enumeration (includes every minimal face).
    pub fn faces(&self) -> Result<Vec<Face>> {
        self.budget()?;
        Ok((0..1u64 << self.signs.len()).filter_map(|mask| self.face_for(mask)).collect())
    }

    /// Some point of the polyhedron, or `None` when it is empty.
    pub fn point(&self) -> Result<Option<DVector<f64>>> {
        self.budget()?;
        // Pinning fewer coordinates first tends to find interior-ish points.
        let mut masks: Vec<u64> = (0..1u64 << self.signs.len()).collect();
        masks.sort_by_key(|m| m.count_ones());
        Ok(masks.into_iter().find_map(|m| self.face_for(m)).map(|f| f.point))
    }

    /// True when `c·r < 0` for some recession direction `r`.
    pub fn unbounded_below(&self, c: &DVector<f64>) -> Result<bool> {
        let p = self.dim();
        let mut a = DMatrix::zeros(self.a.nrows() + 1, p);
        a.view_mut((0, 0), (self.a.nrows(), p)).copy_from(&self.a);
        a.row_mut(self.a.nrows()).copy_from(&c.transpose());
        let mut b = DVector::zeros(self.a.nrows() + 1);
        b[self.a.nrows()] = -1.0;
        let rec = Polyhedron::new(a, b, self.signs.clone(), self.tol);
        Ok(rec.point()?.is_some())
    }

    /// `inf c·z` over the polyhedron given its enumerated faces.
    pub fn minimize_over(&self, faces: &[Face], c: &DVector<f64>) -> Result<LpValue> {
        if faces.is_empty() {
            return Ok(LpValue::Empty);
        }
        let cscale = 1e-9 * (1.0 + c.norm());
        if faces.iter().any(|f| f.basis.ncols() > 0 && (f.basis.transpose() * c).amax() > cscale) {
            return Ok(LpValue::Unbounded);
        }
        if self.unbounded_below(c)? {
            return Ok(LpValue::Unbounded);
        }
        let best = faces.iter().map(|f| c.dot(&f.point)).fold(f64::INFINITY, f64::min);
        Ok(LpValue::Finite(best))
    }

    pub fn minimize(&self, c: &DVector<f64>) -> Result<LpValue> {
        let faces = self.faces()?;
        self.minimize_over(&faces, c)
    }
}
