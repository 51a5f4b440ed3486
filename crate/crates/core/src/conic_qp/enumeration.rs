use nalgebra::{DMatrix, DVector};

use super::{SubproblemData, KKT_TOL, MAX_ENUM_ROWS, SIGN_SLACK};
use crate::error::{Error, Result};
use crate::linalg::{lstsq, null_space, RANK_TOL};
use crate::polyhedral::Polyhedron;

/// All KKT points `(d, λ)` of a polyhedral subproblem, one per active pattern
/// of the orthant rows, deduplicated within `1e-9`.
///
/// When a pattern's linear system is singular its solutions form an affine
/// set; a single representative is kept (the point of that set nearest the
/// origin that passes the sign checks).
pub fn enumerate_kkt_points(data: &SubproblemData) -> Result<Vec<(DVector<f64>, DVector<f64>)>> {
    enumerate_near(data, &DVector::zeros(data.n() + data.m()))
}

/// As [`enumerate_kkt_points`], with singular patterns represented by their
/// point nearest `target` in `(d, λ)` space.
pub(crate) fn enumerate_near(
    data: &SubproblemData,
    target: &DVector<f64>,
) -> Result<Vec<(DVector<f64>, DVector<f64>)>> {
    if !data.cone.is_polyhedral() {
        return Err(Error::InvalidCone("enumeration needs a polyhedral cone".into()));
    }
    if data.m() > MAX_ENUM_ROWS {
        return Err(Error::BudgetExceeded(format!("{} constraint rows (limit {MAX_ENUM_ROWS})", data.m())));
    }
    let (zero, orth) = data.orthant_rows();
    let mut found: Vec<(DVector<f64>, DVector<f64>)> = Vec::new();
    for mask in 0..1u64 << orth.len() {
        let active: Vec<usize> = (0..orth.len()).filter(|k| mask >> k & 1 == 1).map(|k| orth[k]).collect();
        let inactive: Vec<usize> = (0..orth.len()).filter(|k| mask >> k & 1 == 0).map(|k| orth[k]).collect();
        let eq: Vec<usize> = zero.iter().chain(&active).copied().collect();
        if let Some((d, lam)) = solve_pattern(data, &eq, &active, &inactive, target) {
            if data.kkt_residual(&d, &lam) > KKT_TOL {
                continue;
            }
            let dup = found
                .iter()
                .any(|(d0, l0)| (d0 - &d).amax() <= 1e-9 && (l0 - &lam).amax() <= 1e-9);
            if !dup {
                found.push((d, lam));
            }
        }
    }
    Ok(found)
}

/// Solve `[H A_Eᵀ; A_E 0] (d, λ_E) = (−g, −c_E)` and enforce `λ ≤ 0` on active
/// rows and `c + A d ≥ 0` on inactive ones.
fn solve_pattern(
    data: &SubproblemData,
    eq: &[usize],
    active: &[usize],
    inactive: &[usize],
    target: &DVector<f64>,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let (n, m) = (data.n(), data.m());
    let e = eq.len();
    let dim = n + e;
    let mut k = DMatrix::zeros(dim, dim);
    k.view_mut((0, 0), (n, n)).copy_from(&data.h);
    let mut rhs = DVector::zeros(dim);
    rhs.rows_mut(0, n).copy_from(&(-&data.g));
    for (r, &i) in eq.iter().enumerate() {
        for j in 0..n {
            k[(j, n + r)] = data.a[(i, j)];
            k[(n + r, j)] = data.a[(i, j)];
        }
        rhs[n + r] = -data.c[i];
    }
    let (z0, res) = lstsq(&k, &rhs, RANK_TOL);
    if res > 1e-10 * (1.0 + rhs.norm()) {
        return None;
    }

    // Sign rows as affine functions of z: value = offset + coeffᵀ z ≥ 0.
    let mut rows: Vec<(f64, DVector<f64>)> = Vec::new();
    for &i in active {
        let r = eq.iter().position(|&q| q == i).expect("active rows are equality rows");
        let mut coeff = DVector::zeros(dim);
        coeff[n + r] = -1.0;
        rows.push((0.0, coeff));
    }
    for &i in inactive {
        let mut coeff = DVector::zeros(dim);
        coeff.rows_mut(0, n).copy_from(&data.a.row(i).transpose());
        rows.push((data.c[i], coeff));
    }
    let signs_ok = |z: &DVector<f64>| rows.iter().all(|(o, c)| o + c.dot(z) >= -SIGN_SLACK);

    let basis = null_space(&k, RANK_TOL);
    let z = if basis.ncols() == 0 {
        signs_ok(&z0).then_some(z0)?
    } else {
        let mut t = DVector::zeros(dim);
        t.rows_mut(0, n).copy_from(&target.rows(0, n));
        for (r, &i) in eq.iter().enumerate() {
            t[n + r] = target[n + i];
        }
        let nearest = &z0 + &basis * (basis.transpose() * (&t - &z0));
        if signs_ok(&nearest) {
            nearest
        } else {
            // z = z0 + N ν with slack σ ≥ 0 on every sign row.
            let q = basis.ncols();
            let s = rows.len();
            let mut a = DMatrix::zeros(s, q + s);
            let mut b = DVector::zeros(s);
            for (r, (o, c)) in rows.iter().enumerate() {
                a.view_mut((r, 0), (1, q)).copy_from(&(c.transpose() * &basis));
                a[(r, q + r)] = -1.0;
                b[r] = -(o + c.dot(&z0));
            }
            let poly = Polyhedron::new(a, b, (q..q + s).collect(), 1e-12);
            let p = poly.point().ok()??;
            let z = &z0 + &basis * p.rows(0, q);
            signs_ok(&z).then_some(z)?
        }
    };
    let d = z.rows(0, n).into_owned();
    let mut lam = DVector::zeros(m);
    for (r, &i) in eq.iter().enumerate() {
        lam[i] = z[n + r];
    }
    for &i in active {
        lam[i] = lam[i].min(0.0);
    }
    Some((d, lam))
}
