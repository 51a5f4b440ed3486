//! Geometry of the constraint cone `Θ`: a product of zero, nonnegative-orthant
//! and second-order (Lorentz) blocks.
//!
//! Second-order blocks store the cone axis in the *last* coordinate:
//! `{(ȳ, t) : ‖ȳ‖ ≤ t}`.
//!
//! Membership tests are tolerance-scaled as `tol · (1 + magnitudes)`.

mod critical;
mod oracle;

pub use critical::{CriticalCone, LocalCone, Piece};
pub use oracle::{dq_oracle_profile, dq_oracle_second_subderivative, OracleParams, DQ_INFEASIBLE};

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Range};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConeKind {
    Zero,
    Orthant,
    #[serde(alias = "soc", alias = "lorentz")]
    SecondOrder,
}

impl fmt::Display for ConeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConeKind::Zero => "zero",
            ConeKind::Orthant => "orthant",
            ConeKind::SecondOrder => "second_order",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawBlock")]
pub struct ConeBlock {
    pub kind: ConeKind,
    pub dim: usize,
}

#[derive(Deserialize)]
struct RawBlock {
    kind: ConeKind,
    dim: usize,
}

impl TryFrom<RawBlock> for ConeBlock {
    type Error = Error;
    fn try_from(raw: RawBlock) -> Result<Self> {
        ConeBlock::new(raw.kind, raw.dim)
    }
}

impl ConeBlock {
    pub fn new(kind: ConeKind, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidCone("block dimension must be at least 1".into()));
        }
        if kind == ConeKind::SecondOrder && dim < 2 {
            return Err(Error::InvalidCone(
                "second-order blocks need dimension at least 2".into(),
            ));
        }
        Ok(Self { kind, dim })
    }

    pub fn zero(dim: usize) -> Self {
        Self::new(ConeKind::Zero, dim).expect("valid zero block")
    }

    pub fn orthant(dim: usize) -> Self {
        Self::new(ConeKind::Orthant, dim).expect("valid orthant block")
    }

    pub fn second_order(dim: usize) -> Self {
        Self::new(ConeKind::SecondOrder, dim).expect("valid second-order block")
    }
}

/// The cone `Θ` as an ordered product of blocks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawCone")]
pub struct ConeSpec {
    blocks: Vec<ConeBlock>,
    #[serde(skip)]
    total_dim: usize,
}

#[derive(Deserialize)]
struct RawCone {
    blocks: Vec<ConeBlock>,
}

impl TryFrom<RawCone> for ConeSpec {
    type Error = Error;
    fn try_from(raw: RawCone) -> Result<Self> {
        ConeSpec::new(raw.blocks)
    }
}

impl ConeSpec {
    pub fn new(blocks: Vec<ConeBlock>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::InvalidCone("cone needs at least one block".into()));
        }
        for b in &blocks {
            ConeBlock::new(b.kind, b.dim)?;
        }
        let total_dim = blocks.iter().map(|b| b.dim).sum();
        Ok(Self { blocks, total_dim })
    }

    pub fn single(kind: ConeKind, dim: usize) -> Result<Self> {
        Self::new(vec![ConeBlock::new(kind, dim)?])
    }

    pub fn blocks(&self) -> &[ConeBlock] {
        &self.blocks
    }

    pub fn total_dim(&self) -> usize {
        self.total_dim
    }

    /// True when every block is a zero or orthant block.
    pub fn is_polyhedral(&self) -> bool {
        self.blocks.iter().all(|b| b.kind != ConeKind::SecondOrder)
    }

    /// Number of coordinates carrying a sign constraint (orthant coordinates).
    pub fn orthant_dim(&self) -> usize {
        self.blocks
            .iter()
            .filter(|b| b.kind == ConeKind::Orthant)
            .map(|b| b.dim)
            .sum()
    }

    /// Blocks together with their coordinate ranges.
    pub fn ranges(&self) -> impl Iterator<Item = (Range<usize>, &ConeBlock)> {
        let mut offset = 0;
        self.blocks.iter().map(move |b| {
            let r = offset..offset + b.dim;
            offset += b.dim;
            (r, b)
        })
    }

    fn check(&self, v: &[f64]) -> Result<()> {
        Error::check_dim(self.total_dim, v.len())
    }
}

impl fmt::Display for ConeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .blocks
            .iter()
            .map(|b| format!("{}({})", b.kind, b.dim))
            .collect();
        f.write_str(&parts.join(" x "))
    }
}

/// A real number or `+∞`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExtendedReal {
    Finite(f64),
    PosInf,
}

impl ExtendedReal {
    pub fn is_finite(&self) -> bool {
        matches!(self, ExtendedReal::Finite(_))
    }

    pub fn finite(&self) -> Option<f64> {
        match self {
            ExtendedReal::Finite(v) => Some(*v),
            ExtendedReal::PosInf => None,
        }
    }

    pub fn total_cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (ExtendedReal::Finite(a), ExtendedReal::Finite(b)) => a.total_cmp(b),
            (ExtendedReal::Finite(_), ExtendedReal::PosInf) => Ordering::Less,
            (ExtendedReal::PosInf, ExtendedReal::Finite(_)) => Ordering::Greater,
            (ExtendedReal::PosInf, ExtendedReal::PosInf) => Ordering::Equal,
        }
    }
}

impl PartialOrd for ExtendedReal {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.total_cmp(other))
    }
}

impl Add for ExtendedReal {
    type Output = ExtendedReal;
    fn add(self, rhs: Self) -> Self {
        match (self, rhs) {
            (ExtendedReal::Finite(a), ExtendedReal::Finite(b)) => ExtendedReal::Finite(a + b),
            _ => ExtendedReal::PosInf,
        }
    }
}

impl From<f64> for ExtendedReal {
    fn from(v: f64) -> Self {
        if v == f64::INFINITY {
            ExtendedReal::PosInf
        } else {
            ExtendedReal::Finite(v)
        }
    }
}

impl fmt::Display for ExtendedReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtendedReal::Finite(v) => write!(f, "{v}"),
            ExtendedReal::PosInf => f.write_str("+inf"),
        }
    }
}

impl Serialize for ExtendedReal {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ExtendedReal::Finite(v) => s.serialize_f64(*v),
            ExtendedReal::PosInf => s.serialize_str("+inf"),
        }
    }
}

impl<'de> Deserialize<'de> for ExtendedReal {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(ExtendedReal::Finite(v)),
            Raw::Str(s) if s == "+inf" => Ok(ExtendedReal::PosInf),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("bad extended real `{s}`"))),
        }
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Projection of `(ȳ, t)` onto the second-order cone.
pub(crate) fn project_soc(y: &[f64], out: &mut [f64]) {
    let d = y.len();
    let t = y[d - 1];
    let nb = norm(&y[..d - 1]);
    if nb <= t {
        out.copy_from_slice(y);
    } else if nb <= -t {
        out.iter_mut().for_each(|o| *o = 0.0);
    } else {
        let a = 0.5 * (nb + t);
        for i in 0..d - 1 {
            out[i] = a * y[i] / nb;
        }
        out[d - 1] = a;
    }
}

pub(crate) fn project_into(cone: &ConeSpec, y: &[f64], out: &mut [f64]) {
    for (r, b) in cone.ranges() {
        match b.kind {
            ConeKind::Zero => out[r].iter_mut().for_each(|o| *o = 0.0),
            ConeKind::Orthant => {
                for i in r {
                    out[i] = y[i].max(0.0);
                }
            }
            ConeKind::SecondOrder => project_soc(&y[r.clone()], &mut out[r]),
        }
    }
}

/// Euclidean projection onto `Θ`, blockwise.
pub fn project(cone: &ConeSpec, y: &[f64]) -> Result<Vec<f64>> {
    cone.check(y)?;
    let mut out = vec![0.0; y.len()];
    project_into(cone, y, &mut out);
    Ok(out)
}

/// An element of the generalized Jacobian of `Π_Θ` at `x` (block diagonal).
///
/// At a second-order kink `‖x̄‖ > |x_m|` the derivative is
/// `½ [[(1 + s) I − s ūūᵀ, ū], [ūᵀ, 1]]` with `ū = x̄/‖x̄‖`, `s = x_m/‖x̄‖`.
pub fn projection_jacobian(cone: &ConeSpec, x: &[f64]) -> Result<DMatrix<f64>> {
    cone.check(x)?;
    let m = cone.total_dim();
    let mut p = DMatrix::zeros(m, m);
    for (r, b) in cone.ranges() {
        match b.kind {
            ConeKind::Zero => {}
            ConeKind::Orthant => {
                for i in r {
                    if x[i] > 0.0 {
                        p[(i, i)] = 1.0;
                    }
                }
            }
            ConeKind::SecondOrder => {
                let d = b.dim;
                let o = r.start;
                let xb = &x[r];
                let t = xb[d - 1];
                let nb = norm(&xb[..d - 1]);
                if nb <= t {
                    for i in 0..d {
                        p[(o + i, o + i)] = 1.0;
                    }
                } else if nb > -t {
                    let s = t / nb;
                    for i in 0..d - 1 {
                        let ui = xb[i] / nb;
                        for j in 0..d - 1 {
                            let uj = xb[j] / nb;
                            let id = if i == j { 1.0 + s } else { 0.0 };
                            p[(o + i, o + j)] = 0.5 * (id - s * ui * uj);
                        }
                        p[(o + i, o + d - 1)] = 0.5 * ui;
                        p[(o + d - 1, o + i)] = 0.5 * ui;
                    }
                    p[(o + d - 1, o + d - 1)] = 0.5;
                }
            }
        }
    }
    Ok(p)
}

/// `dist(y; Θ)`.
pub fn distance(cone: &ConeSpec, y: &[f64]) -> Result<f64> {
    let p = project(cone, y)?;
    Ok(y.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
}

/// `‖y − Π(y + λ)‖` without the membership gate on `y`.
pub(crate) fn normal_residual_unchecked(cone: &ConeSpec, y: &[f64], lam: &[f64]) -> f64 {
    let shifted: Vec<f64> = y.iter().zip(lam).map(|(a, b)| a + b).collect();
    let mut p = vec![0.0; y.len()];
    project_into(cone, &shifted, &mut p);
    y.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
}

fn check_member(cone: &ConeSpec, y: &[f64], tol: f64) -> Result<()> {
    let dist = distance(cone, y)?;
    if dist > tol * (1.0 + norm(y)) {
        return Err(Error::NotInCone { distance: dist });
    }
    Ok(())
}

/// `‖y − Π_Θ(y + λ)‖`, which vanishes exactly when `λ ∈ N_Θ(y)`.
pub fn normal_cone_residual(cone: &ConeSpec, y: &[f64], lam: &[f64]) -> Result<f64> {
    cone.check(y)?;
    cone.check(lam)?;
    check_member(cone, y, DEFAULT_TOL)?;
    Ok(normal_residual_unchecked(cone, y, lam))
}

pub(crate) fn check_normal(cone: &ConeSpec, y: &[f64], lam: &[f64], tol: f64) -> Result<()> {
    let r = normal_cone_residual(cone, y, lam)?;
    if r > tol * (1.0 + norm(y) + norm(lam)) {
        return Err(Error::NotNormal { residual: r });
    }
    Ok(())
}

/// Where a point sits inside a second-order block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum SocPosition {
    Apex,
    Interior,
    Boundary,
}

pub(crate) fn soc_position(y: &[f64], tol: f64) -> SocPosition {
    let d = y.len();
    let scale = tol * (1.0 + norm(y));
    let nb = norm(&y[..d - 1]);
    let t = y[d - 1];
    if norm(y) <= scale {
        SocPosition::Apex
    } else if nb < t - scale {
        SocPosition::Interior
    } else {
        SocPosition::Boundary
    }
}

/// Tangent-cone membership `w ∈ T_Θ(y)` by the blockwise closed forms.
pub fn tangent_contains(cone: &ConeSpec, y: &[f64], w: &[f64], tol: f64) -> Result<bool> {
    cone.check(y)?;
    cone.check(w)?;
    let slack = tol * (1.0 + norm(w));
    for (r, b) in cone.ranges() {
        let (yb, wb) = (&y[r.clone()], &w[r.clone()]);
        let ok = match b.kind {
            ConeKind::Zero => wb.iter().all(|x| x.abs() <= slack),
            ConeKind::Orthant => {
                let yscale = tol * (1.0 + norm(y));
                yb.iter().zip(wb).all(|(&yi, &wi)| yi > yscale || wi >= -slack)
            }
            ConeKind::SecondOrder => match soc_position(yb, tol) {
                SocPosition::Interior => true,
                SocPosition::Apex => {
                    let d = wb.len();
                    norm(&wb[..d - 1]) <= wb[d - 1] + slack
                }
                SocPosition::Boundary => {
                    let grad = soc_boundary_normal(yb);
                    dot(&grad, wb) <= slack
                }
            },
        };
        if !ok {
            return Ok(false);
        }
    }
    Ok(true)
}

/// `∇g(y)` for `g(y) = ‖ȳ‖ − y_m`, the outward normal at a boundary point.
pub(crate) fn soc_boundary_normal(y: &[f64]) -> Vec<f64> {
    let d = y.len();
    let nb = norm(&y[..d - 1]);
    let mut n: Vec<f64> = y[..d - 1].iter().map(|v| v / nb).collect();
    n.push(-1.0);
    n
}

/// `w ∈ K_Θ(y, λ) = T_Θ(y) ∩ {λ}^⊥`.
pub fn critical_cone_contains(
    cone: &ConeSpec,
    y: &[f64],
    lam: &[f64],
    w: &[f64],
    tol: f64,
) -> Result<bool> {
    cone.check(w)?;
    check_normal(cone, y, lam, tol)?;
    if !tangent_contains(cone, y, w, tol)? {
        return Ok(false);
    }
    Ok(dot(lam, w).abs() <= tol * (1.0 + norm(lam) * norm(w)))
}

/// Curvature matrix of `½ d²δ_Θ(y, λ)` on the critical cone: block diagonal,
/// nonzero only on second-order blocks at boundary points with a nonzero
/// multiplier `λ_b = μ (ȳ/‖ȳ‖, −1)`.
pub fn curvature_matrix(cone: &ConeSpec, y: &[f64], lam: &[f64]) -> Result<DMatrix<f64>> {
    cone.check(y)?;
    cone.check(lam)?;
    let m = cone.total_dim();
    let mut h = DMatrix::zeros(m, m);
    for (r, b) in cone.ranges() {
        if b.kind != ConeKind::SecondOrder {
            continue;
        }
        let yb = &y[r.clone()];
        if soc_position(yb, DEFAULT_TOL) != SocPosition::Boundary {
            continue;
        }
        let d = b.dim;
        let mu = -lam[r.start + d - 1];
        if mu <= 0.0 {
            continue;
        }
        let ym = yb[d - 1];
        let scale = mu / ym;
        for i in 0..d - 1 {
            for j in 0..d - 1 {
                let id = if i == j { 1.0 } else { 0.0 };
                h[(r.start + i, r.start + j)] = scale * (id - yb[i] * yb[j] / (ym * ym));
            }
        }
    }
    Ok(h)
}

/// Closed-form second subderivative `d²δ_Θ(y, λ)(w)`.
///
/// `+∞` off the critical cone; otherwise the sum of block curvatures, where only
/// second-order blocks at nonapex boundary points contribute
/// `(μ/y_m)(‖w̄‖² − (ȳᵀw̄)²/y_m²)`.
pub fn second_subderivative(
    cone: &ConeSpec,
    y: &[f64],
    lam: &[f64],
    w: &[f64],
) -> Result<ExtendedReal> {
    cone.check(w)?;
    let k = CriticalCone::new(cone, y, lam, DEFAULT_TOL)?;
    if !k.contains(w, DEFAULT_TOL) {
        return Ok(ExtendedReal::PosInf);
    }
    let mut total = 0.0;
    for (r, b) in cone.ranges() {
        if b.kind != ConeKind::SecondOrder {
            continue;
        }
        let (yb, wb) = (&y[r.clone()], &w[r.clone()]);
        if soc_position(yb, DEFAULT_TOL) != SocPosition::Boundary {
            continue;
        }
        let d = b.dim;
        let mu = -lam[r.start + d - 1];
        let ym = yb[d - 1];
        let wbar = &wb[..d - 1];
        let proj = dot(&yb[..d - 1], wbar);
        total += (mu / ym) * (dot(wbar, wbar) - proj * proj / (ym * ym));
    }
    Ok(ExtendedReal::Finite(total))
}

/// `u ∈ DN_Θ(y, λ)(w) = ∂[½ d²δ_Θ(y, λ)](w)`.
pub fn proto_derivative_contains(
    cone: &ConeSpec,
    y: &[f64],
    lam: &[f64],
    w: &[f64],
    u: &[f64],
    tol: f64,
) -> Result<bool> {
    cone.check(w)?;
    cone.check(u)?;
    let k = CriticalCone::new(cone, y, lam, tol)?;
    if !k.contains(w, tol) {
        return Ok(false);
    }
    let h = curvature_matrix(cone, y, lam)?;
    let hw = &h * DVector::from_column_slice(w);
    let eta: Vec<f64> = u.iter().zip(hw.iter()).map(|(a, b)| a - b).collect();
    Ok(k.normal_contains(w, &eta, tol))
}
