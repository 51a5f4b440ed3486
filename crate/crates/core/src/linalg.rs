//! Small dense linear-algebra helpers. Matrices are nalgebra's; the SVD comes
//! from faer, whose results stay accurate where nalgebra's bidiagonal SVD can
//! lose several digits on well-conditioned inputs.
//!
//! Everything here works on desk-scale matrices (a few dozen rows at most), so
//! robustness against rank deficiency matters more than speed.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Singular values below `rel_tol * max(1, sigma_max)` count as zero.
pub const RANK_TOL: f64 = 1e-10;

/// Full SVD `m = U diag(s) Vᵀ`, `s` nonincreasing with `min(r, c)` entries.
struct Svd {
    u: DMatrix<f64>,
    s: Vec<f64>,
    v: DMatrix<f64>,
}

fn svd(m: &DMatrix<f64>) -> Svd {
    let (r, c) = m.shape();
    let f = faer::Mat::<f64>::from_fn(r, c, |i, j| m[(i, j)]);
    match f.svd() {
        Ok(d) => {
            let (u, v, s) = (d.U(), d.V(), d.S().column_vector());
            Svd {
                u: DMatrix::from_fn(r, r, |i, j| u[(i, j)]),
                s: (0..r.min(c)).map(|i| s[i]).collect(),
                v: DMatrix::from_fn(c, c, |i, j| v[(i, j)]),
            }
        }
        // faer only fails to converge on non-finite input
        Err(_) => Svd { u: DMatrix::identity(r, r), s: vec![f64::NAN; r.min(c)], v: DMatrix::identity(c, c) },
    }
}

fn threshold(sv: &[f64], rel_tol: f64) -> f64 {
    let smax = sv.iter().cloned().fold(0.0_f64, f64::max);
    rel_tol * smax.max(1.0)
}

/// Orthonormal basis (as columns) of the null space of `m`.
pub fn null_space(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let c = m.ncols();
    if c == 0 {
        return DMatrix::zeros(0, 0);
    }
    if m.nrows() == 0 {
        return DMatrix::identity(c, c);
    }
    let d = svd(m);
    let thr = threshold(&d.s, rel_tol);
    let cols: Vec<DVector<f64>> = (0..c)
        .filter(|&i| d.s.get(i).is_none_or(|&s| s <= thr))
        .map(|i| d.v.column(i).into_owned())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(c, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// Numerical rank of `m`.
pub fn rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = svd(m).s;
    let thr = threshold(&sv, rel_tol);
    sv.iter().filter(|&&s| s > thr).count()
}

/// Minimum-norm least-squares solution of `a x = b` together with the residual norm.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>, rel_tol: f64) -> (DVector<f64>, f64) {
    let c = a.ncols();
    if c == 0 {
        return (DVector::zeros(0), b.norm());
    }
    if a.nrows() == 0 {
        return (DVector::zeros(c), 0.0);
    }
    let d = svd(a);
    let thr = threshold(&d.s, rel_tol);
    let apply = |r: &DVector<f64>| {
        let mut x = DVector::zeros(c);
        for (k, &s) in d.s.iter().enumerate() {
            if s > thr {
                x += d.v.column(k) * (d.u.column(k).dot(r) / s);
            }
        }
        x
    };
    let mut x = apply(b);
    // one step of iterative refinement
    let r = b - a * &x;
    x += apply(&r);
    let res = (a * &x - b).norm();
    (x, res)
}

/// Top singular triple `(sigma, u, v)` and the second singular value of `m`.
pub fn top_singular(m: &DMatrix<f64>) -> Option<(f64, DVector<f64>, DVector<f64>, f64)> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return None;
    }
    let d = svd(m);
    let second = d.s.get(1).copied().unwrap_or(0.0);
    Some((d.s[0], d.u.column(0).into_owned(), d.v.column(0).into_owned(), second))
}

/// Moore-Penrose pseudo-inverse, dropping singular values below the rank threshold.
pub fn pseudo_inverse(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let (r, c) = m.shape();
    let mut out = DMatrix::zeros(c, r);
    if r == 0 || c == 0 {
        return out;
    }
    let d = svd(m);
    let thr = threshold(&d.s, rel_tol);
    for (k, &s) in d.s.iter().enumerate() {
        if s > thr {
            out += d.v.column(k) * d.u.column(k).transpose() / s;
        }
    }
    out
}

/// Eigenpairs of a symmetric matrix, sorted by ascending eigenvalue.
pub fn sym_eigen(m: &DMatrix<f64>) -> Vec<(f64, DVector<f64>)> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let sym = symmetrize(m);
    let eig = SymmetricEigen::new(sym);
    let mut pairs: Vec<(f64, DVector<f64>)> = (0..eig.eigenvalues.len())
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors.column(i).into_owned()))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Orthonormal basis of the orthogonal complement of `r` (as columns).
pub fn complement_basis(r: &DVector<f64>) -> DMatrix<f64> {
    let row = DMatrix::from_row_slice(1, r.len(), r.as_slice());
    null_space(&row, RANK_TOL)
}

/// Stack matrices vertically; all must share the column count `cols`.
pub fn vstack(parts: &[&DMatrix<f64>], cols: usize) -> DMatrix<f64> {
    let rows: usize = parts.iter().map(|p| p.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r = 0;
    for p in parts {
        debug_assert_eq!(p.ncols(), cols);
        out.view_mut((r, 0), (p.nrows(), cols)).copy_from(p);
        r += p.nrows();
    }
    out
}

/// Iterate over all subsets of `0..k` as bitmasks.
pub fn subsets(k: usize) -> impl Iterator<Item = u64> {
    0..(1u64 << k)
}
