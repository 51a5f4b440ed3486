//! The SQP subproblem
//!
//! ```text
//! min ½ dᵀH d + gᵀd   s.t.   c + A d ∈ Θ
//! ```
//!
//! treated as the generalized equation `g + H d + Aᵀλ = 0, λ ∈ N_Θ(c + A d)`.
//! `H` may be indefinite, so any KKT point is a valid answer; when several
//! exist the one closest to the caller's hint is returned.

mod enumeration;
mod splitting;

pub use enumeration::enumerate_kkt_points;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::cone::{self, projection_jacobian, ConeKind, ConeSpec};
use crate::error::{Error, Result};
use crate::linalg::sym_eigen;
use crate::polyhedral::Polyhedron;
use crate::problem::KKTPair;
use crate::semismooth::{self, NewtonOptions};

/// Largest polyhedral subproblem handled by exhaustive enumeration.
pub const MAX_ENUM_ROWS: usize = 10;
pub const KKT_TOL: f64 = 1e-9;
pub const SIGN_SLACK: f64 = 1e-10;
/// Newton runs aim well below `KKT_TOL` so SQP iterates are not limited by
/// subproblem accuracy.
const NEWTON_TOL: f64 = 1e-14;

#[derive(Debug, Clone)]
pub struct SubproblemData {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub a: DMatrix<f64>,
    pub c: DVector<f64>,
    pub cone: ConeSpec,
}

impl SubproblemData {
    pub fn new(h: DMatrix<f64>, g: DVector<f64>, a: DMatrix<f64>, c: DVector<f64>, cone: ConeSpec) -> Result<Self> {
        let n = g.len();
        Error::check_dim(n, h.nrows())?;
        Error::check_dim(n, h.ncols())?;
        Error::check_dim(n, a.ncols())?;
        Error::check_dim(cone.total_dim(), a.nrows())?;
        Error::check_dim(cone.total_dim(), c.len())?;
        let h = crate::linalg::symmetrize(&h);
        Ok(Self { h, g, a, c, cone })
    }

    pub fn n(&self) -> usize {
        self.g.len()
    }

    pub fn m(&self) -> usize {
        self.c.len()
    }

    pub fn objective(&self, d: &DVector<f64>) -> f64 {
        0.5 * d.dot(&(&self.h * d)) + self.g.dot(d)
    }

    fn split<'a>(&self, z: &'a DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let n = self.n();
        (z.rows(0, n).into_owned(), z.rows(n, self.m()).into_owned())
    }

    /// `F(d, λ) = [g + Hd + Aᵀλ; s − Π_Θ(s + λ)]` with `s = c + Ad`.
    pub fn residual_map(&self, d: &DVector<f64>, lam: &DVector<f64>) -> DVector<f64> {
        let (n, m) = (self.n(), self.m());
        let stat = &self.g + &self.h * d + self.a.transpose() * lam;
        let s = &self.c + &self.a * d;
        let shifted = &s + lam;
        let mut proj = vec![0.0; m];
        cone::project_into(&self.cone, shifted.as_slice(), &mut proj);
        let mut f = DVector::zeros(n + m);
        f.rows_mut(0, n).copy_from(&stat);
        for i in 0..m {
            f[n + i] = s[i] - proj[i];
        }
        f
    }

    /// `‖F(d, λ)‖`, zero exactly at KKT points.
    pub fn kkt_residual(&self, d: &DVector<f64>, lam: &DVector<f64>) -> f64 {
        self.residual_map(d, lam).norm()
    }

    fn residual_and_jacobian(&self, z: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let (n, m) = (self.n(), self.m());
        let (d, lam) = self.split(z);
        let f = self.residual_map(&d, &lam);
        let shifted = &self.c + &self.a * &d + &lam;
        let p = projection_jacobian(&self.cone, shifted.as_slice())?;
        let mut j = DMatrix::zeros(n + m, n + m);
        j.view_mut((0, 0), (n, n)).copy_from(&self.h);
        j.view_mut((0, n), (n, m)).copy_from(&self.a.transpose());
        let ip = DMatrix::identity(m, m) - &p;
        j.view_mut((n, 0), (m, n)).copy_from(&(ip * &self.a));
        j.view_mut((n, n), (m, m)).copy_from(&(-p));
        Ok((f, j))
    }

    fn orthant_rows(&self) -> (Vec<usize>, Vec<usize>) {
        let (mut zero, mut orth) = (Vec::new(), Vec::new());
        for (r, b) in self.cone.ranges() {
            match b.kind {
                ConeKind::Zero => zero.extend(r),
                ConeKind::Orthant => orth.extend(r),
                ConeKind::SecondOrder => {}
            }
        }
        (zero, orth)
    }

    /// Whether `{d : c + A d ∈ Θ}` is nonempty; `None` for nonpolyhedral cones.
    pub fn linearization_feasible(&self) -> Result<Option<bool>> {
        if !self.cone.is_polyhedral() {
            return Ok(None);
        }
        let (n, m) = (self.n(), self.m());
        let (zero, orth) = self.orthant_rows();
        // Variables (d, σ): A_Z d = −c_Z, A_O d − σ = −c_O, σ ≥ 0.
        let mut a = DMatrix::zeros(m, n + orth.len());
        let mut b = DVector::zeros(m);
        for (row, &i) in zero.iter().chain(&orth).enumerate() {
            a.view_mut((row, 0), (1, n)).copy_from(&self.a.row(i));
            b[row] = -self.c[i];
        }
        for k in 0..orth.len() {
            a[(zero.len() + k, n + k)] = -1.0;
        }
        let poly = Polyhedron::new(a, b, (n..n + orth.len()).collect(), 1e-10);
        Ok(Some(poly.point()?.is_some()))
    }

    /// Direction `r` with `rᵀHr ≤ 0`, `gᵀr < 0` and `A r` in the recession cone
    /// of `Θ`, so the quadratic decreases without bound along a feasible ray
    /// from any feasible point. Only candidate directions are tried.
    pub fn descent_ray(&self) -> Option<DVector<f64>> {
        let n = self.n();
        let mut cands: Vec<DVector<f64>> = sym_eigen(&self.h)
            .into_iter()
            .filter(|(ev, _)| *ev <= 1e-12)
            .map(|(_, v)| v)
            .collect();
        if self.g.norm() > 0.0 {
            cands.push(-&self.g / self.g.norm());
        }
        for i in 0..n {
            let mut e = DVector::zeros(n);
            e[i] = 1.0;
            cands.push(e);
        }
        let more: Vec<DVector<f64>> = cands.iter().map(|v| -v).collect();
        cands.extend(more);
        cands.into_iter().find(|r| {
            let curv = r.dot(&(&self.h * r));
            let slope = self.g.dot(r);
            let ar = &self.a * r;
            curv <= 1e-12 && slope < -1e-12 && recession_contains(&self.cone, ar.as_slice())
        })
    }
}

/// `v` in the recession cone of `Θ` (which is `Θ` itself).
fn recession_contains(cone: &ConeSpec, v: &[f64]) -> bool {
    cone::distance(cone, v).map(|d| d <= 1e-12 * (1.0 + cone::norm(v))).unwrap_or(false)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SubproblemStatus {
    KKTPoint,
    NoKKTPoint,
    Unbounded,
    Infeasible,
    IterLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Engine {
    Splitting,
    Enumeration,
    SemismoothNewton,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EngineChoice {
    #[default]
    Auto,
    Enumeration,
    Splitting,
    SemismoothNewton,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverConfig {
    pub engine: EngineChoice,
    pub kkt_tol: f64,
    pub newton_starts: usize,
    pub splitting_iters: usize,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { engine: EngineChoice::Auto, kkt_tol: KKT_TOL, newton_starts: 50, splitting_iters: 20_000, seed: 0 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SubproblemSolution {
    pub status: SubproblemStatus,
    pub d: Option<Vec<f64>>,
    pub lam: Option<Vec<f64>>,
    pub residual: f64,
    pub engine: Engine,
    /// Unbounded-descent ray, reported alongside `NoKKTPoint` when one is found.
    pub descent_ray: Option<Vec<f64>>,
}

impl SubproblemSolution {
    fn point(engine: Engine, d: DVector<f64>, lam: DVector<f64>, residual: f64) -> Self {
        Self {
            status: SubproblemStatus::KKTPoint,
            d: Some(d.iter().copied().collect()),
            lam: Some(lam.iter().copied().collect()),
            residual,
            engine,
            descent_ray: None,
        }
    }

    fn without_point(engine: Engine, status: SubproblemStatus, residual: f64) -> Self {
        Self { status, d: None, lam: None, residual, engine, descent_ray: None }
    }

    pub fn is_kkt_point(&self) -> bool {
        self.status == SubproblemStatus::KKTPoint
    }
}

fn hint_vector(data: &SubproblemData, hint: Option<&KKTPair>) -> Result<DVector<f64>> {
    match hint {
        Some(h) => {
            Error::check_dim(data.n(), h.x.len())?;
            Error::check_dim(data.m(), h.lam.len())?;
            Ok(h.stacked())
        }
        None => Ok(DVector::zeros(data.n() + data.m())),
    }
}

fn stack(d: &DVector<f64>, lam: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(d.len() + lam.len(), d.iter().chain(lam.iter()).copied())
}

/// Solve the subproblem for some KKT point, preferring the one nearest `hint`.
pub fn solve_subproblem(
    data: &SubproblemData,
    hint: Option<&KKTPair>,
    cfg: &SolverConfig,
) -> Result<SubproblemSolution> {
    let target = hint_vector(data, hint)?;
    let engine = match cfg.engine {
        EngineChoice::Auto if data.cone.is_polyhedral() && data.m() <= MAX_ENUM_ROWS => Engine::Enumeration,
        EngineChoice::Auto => Engine::SemismoothNewton,
        EngineChoice::Enumeration => Engine::Enumeration,
        EngineChoice::Splitting => Engine::Splitting,
        EngineChoice::SemismoothNewton => Engine::SemismoothNewton,
    };
    match engine {
        Engine::Enumeration => solve_by_enumeration(data, &target),
        Engine::Splitting => splitting::solve(data, cfg),
        Engine::SemismoothNewton => {
            let sol = solve_by_newton(data, &target, cfg)?;
            if sol.is_kkt_point() || cfg.engine != EngineChoice::Auto || !is_psd(&data.h) {
                return Ok(sol);
            }
            splitting::solve(data, cfg)
        }
    }
}

fn is_psd(h: &DMatrix<f64>) -> bool {
    sym_eigen(h).first().map_or(true, |(ev, _)| *ev >= -1e-12 * (1.0 + h.norm()))
}

fn solve_by_enumeration(data: &SubproblemData, target: &DVector<f64>) -> Result<SubproblemSolution> {
    if !data.cone.is_polyhedral() {
        return Err(Error::InvalidCone("enumeration needs a polyhedral cone".into()));
    }
    let pts = enumeration::enumerate_near(data, target)?;
    let best = pts
        .into_iter()
        .map(|(d, l)| {
            let dist = (stack(&d, &l) - target).norm();
            (dist, d, l)
        })
        .min_by(|a, b| a.0.total_cmp(&b.0));
    if let Some((_, d, l)) = best {
        let r = data.kkt_residual(&d, &l);
        return Ok(SubproblemSolution::point(Engine::Enumeration, d, l, r));
    }
    no_point(data, Engine::Enumeration)
}

fn no_point(data: &SubproblemData, engine: Engine) -> Result<SubproblemSolution> {
    if data.linearization_feasible()? == Some(false) {
        return Ok(SubproblemSolution::without_point(engine, SubproblemStatus::Infeasible, f64::NAN));
    }
    let mut sol = SubproblemSolution::without_point(engine, SubproblemStatus::NoKKTPoint, f64::NAN);
    sol.descent_ray = data.descent_ray().map(|r| r.iter().copied().collect());
    Ok(sol)
}

/// Multi-start semismooth Newton on `F(d, λ) = 0`: the hint first, then
/// seeded random starts; among converged points the one nearest the hint wins.
fn solve_by_newton(data: &SubproblemData, target: &DVector<f64>, cfg: &SolverConfig) -> Result<SubproblemSolution> {
    let opts = NewtonOptions { tol: NEWTON_TOL, max_iters: 80, ..Default::default() };
    let run = |z0: DVector<f64>| semismooth::solve(z0, &opts, |z| data.residual_and_jacobian(z));
    let accept = |z: &DVector<f64>| {
        let (d, l) = data.split(z);
        let r = data.kkt_residual(&d, &l);
        (r <= cfg.kkt_tol).then_some((d, l, r))
    };
    let first = run(target.clone())?;
    if let Some((d, l, r)) = accept(&first.z) {
        return Ok(SubproblemSolution::point(Engine::SemismoothNewton, d, l, r));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dim = data.n() + data.m();
    let mut best: Option<(f64, DVector<f64>, DVector<f64>, f64)> = None;
    let mut last_res = first.residual;
    for _ in 0..cfg.newton_starts {
        let noise: DVector<f64> = DVector::from_fn(dim, |_, _| StandardNormal.sample(&mut rng));
        let out = run(target + noise)?;
        last_res = last_res.min(out.residual);
        if let Some((d, l, r)) = accept(&out.z) {
            let dist = (stack(&d, &l) - target).norm();
            if best.as_ref().map_or(true, |b| dist < b.0) {
                best = Some((dist, d, l, r));
            }
        }
    }
    Ok(match best {
        Some((_, d, l, r)) => SubproblemSolution::point(Engine::SemismoothNewton, d, l, r),
        None if data.cone.is_polyhedral() => {
            let mut s = no_point(data, Engine::SemismoothNewton)?;
            // Random starts are no proof of nonexistence.
            if s.status == SubproblemStatus::NoKKTPoint {
                s.status = SubproblemStatus::IterLimit;
            }
            s.residual = last_res;
            s
        }
        None => SubproblemSolution::without_point(Engine::SemismoothNewton, SubproblemStatus::IterLimit, last_res),
    })
}

/// Independent re-verification of a KKT point with the cone primitives:
/// stationarity and `λ ∈ N_Θ(c + A d)` through the normal-cone residual.
pub fn verify_kkt(data: &SubproblemData, d: &[f64], lam: &[f64], tol: f64) -> Result<bool> {
    Error::check_dim(data.n(), d.len())?;
    Error::check_dim(data.m(), lam.len())?;
    let dv = DVector::from_column_slice(d);
    let lv = DVector::from_column_slice(lam);
    let stat = (&data.g + &data.h * &dv + data.a.transpose() * &lv).norm();
    let s = &data.c + &data.a * &dv;
    let scale = 1.0 + s.norm() + lv.norm();
    if cone::distance(&data.cone, s.as_slice())? > tol * scale {
        return Ok(false);
    }
    // Project s back before the gated residual so tiny infeasibility is tolerated.
    let sp = cone::project(&data.cone, s.as_slice())?;
    let comp = cone::normal_cone_residual(&data.cone, &sp, lam)?;
    Ok(stat <= tol * (1.0 + data.g.norm()) && comp <= tol * scale)
}
