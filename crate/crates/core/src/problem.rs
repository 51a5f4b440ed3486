//! The constrained program `min φ0(x) s.t. f(x) ∈ Θ`, its Lagrangian
//! `L(x, λ) = φ0(x) + ⟨f(x), λ⟩`, KKT residuals and the multiplier set `Λ(x)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::cone::{self, norm, soc_boundary_normal, soc_position, ConeKind, ConeSpec, SocPosition};
use crate::error::{Error, Result};
use crate::expr::{eval, eval2, parse, Expr};
use crate::linalg::symmetrize;
use crate::polyhedral::{LpValue, Polyhedron};

/// A primal-dual point `(x, λ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KKTPair {
    pub x: Vec<f64>,
    pub lam: Vec<f64>,
}

impl KKTPair {
    pub fn new(x: Vec<f64>, lam: Vec<f64>) -> Self {
        Self { x, lam }
    }

    /// `(x, λ)` stacked into one vector.
    pub fn stacked(&self) -> DVector<f64> {
        DVector::from_iterator(self.x.len() + self.lam.len(), self.x.iter().chain(&self.lam).copied())
    }

    /// Euclidean distance in the product space.
    pub fn distance(&self, other: &KKTPair) -> f64 {
        (self.stacked() - other.stacked()).norm()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KKTResidual {
    /// `‖∇ₓL(x, λ)‖`.
    pub stationarity: f64,
    /// `‖f(x) − Π_Θ(f(x) + λ)‖`.
    pub complementarity: f64,
    /// `dist(f(x); Θ)`.
    pub feasibility: f64,
}

impl KKTResidual {
    pub fn total(&self) -> f64 {
        self.stationarity + self.complementarity + self.feasibility
    }
}

/// First- and second-order data of the Lagrangian at a point.
#[derive(Debug, Clone)]
pub struct LagrangianData {
    pub value: f64,
    pub grad_x: DVector<f64>,
    pub hess_xx: DMatrix<f64>,
    pub f_val: DVector<f64>,
    pub jac_f: DMatrix<f64>,
    pub obj_grad: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub name: String,
    pub n: usize,
    pub objective: Expr,
    pub constraints: Vec<Expr>,
    pub cone: ConeSpec,
    pub reference: Option<KKTPair>,
    objective_text: String,
    constraint_texts: Vec<String>,
}

impl ProblemSpec {
    pub fn new(
        name: &str,
        n: usize,
        objective: &str,
        constraints: &[&str],
        cone: ConeSpec,
        reference: Option<KKTPair>,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::Schema { path: "n".into(), message: "must be a positive integer".into() });
        }
        let obj = parse(objective, n)?;
        let cons = constraints.iter().map(|c| parse(c, n)).collect::<Result<Vec<_>>>()?;
        if cone.total_dim() != cons.len() {
            return Err(Error::Schema {
                path: "cone".into(),
                message: format!("total dimension {} differs from {} constraints", cone.total_dim(), cons.len()),
            });
        }
        if let Some(r) = &reference {
            Error::check_dim(n, r.x.len())?;
            Error::check_dim(cons.len(), r.lam.len())?;
        }
        Ok(Self {
            name: name.to_string(),
            n,
            objective: obj,
            constraints: cons,
            cone,
            reference,
            objective_text: objective.to_string(),
            constraint_texts: constraints.iter().map(|s| s.to_string()).collect(),
        })
    }

    pub fn m(&self) -> usize {
        self.constraints.len()
    }

    pub fn objective_text(&self) -> &str {
        &self.objective_text
    }

    pub fn constraint_texts(&self) -> &[String] {
        &self.constraint_texts
    }

    fn check_pair(&self, z: &KKTPair) -> Result<()> {
        Error::check_dim(self.n, z.x.len())?;
        Error::check_dim(self.m(), z.lam.len())
    }

    pub fn objective_value(&self, x: &[f64]) -> Result<f64> {
        Error::check_dim(self.n, x.len())?;
        eval(&self.objective, x)
    }

    /// `f(x)`.
    pub fn constraint_values(&self, x: &[f64]) -> Result<DVector<f64>> {
        Error::check_dim(self.n, x.len())?;
        let vals = self.constraints.iter().map(|c| eval(c, x)).collect::<Result<Vec<_>>>()?;
        Ok(DVector::from_vec(vals))
    }

    pub fn lagrangian_data(&self, z: &KKTPair) -> Result<LagrangianData> {
        self.check_pair(z)?;
        let (n, m) = (self.n, self.m());
        let obj = eval2(&self.objective, &z.x)?;
        let mut value = obj.value;
        let mut grad_x = obj.gradient.clone();
        let mut hess = obj.hessian;
        let mut f_val = DVector::zeros(m);
        let mut jac_f = DMatrix::zeros(m, n);
        for (i, c) in self.constraints.iter().enumerate() {
            let ci = eval2(c, &z.x)?;
            let l = z.lam[i];
            value += l * ci.value;
            grad_x += &ci.gradient * l;
            hess += &ci.hessian * l;
            f_val[i] = ci.value;
            jac_f.row_mut(i).copy_from(&ci.gradient.transpose());
        }
        Ok(LagrangianData { value, grad_x, hess_xx: symmetrize(&hess), f_val, jac_f, obj_grad: obj.gradient })
    }

    pub fn kkt_residual(&self, z: &KKTPair) -> Result<KKTResidual> {
        let d = self.lagrangian_data(z)?;
        Ok(KKTResidual {
            stationarity: d.grad_x.norm(),
            complementarity: cone::normal_residual_unchecked(&self.cone, d.f_val.as_slice(), &z.lam),
            feasibility: cone::distance(&self.cone, d.f_val.as_slice())?,
        })
    }

    pub fn multiplier_set_analysis(&self, x: &[f64]) -> Result<MultiplierSet> {
        multiplier_set_analysis(self, x)
    }
}

/// Problem file layout:
/// `{name, n, objective, constraints: [{expr}], cone: {blocks: [{kind, dim}]}, reference?: {x, lam}}`.
pub fn problem_from_json(text: &str) -> Result<ProblemSpec> {
    let v: Value =
        serde_json::from_str(text).map_err(|e| Error::Schema { path: "$".into(), message: e.to_string() })?;
    let schema = |path: &str, message: &str| Error::Schema { path: path.into(), message: message.into() };
    let obj = v.as_object().ok_or_else(|| schema("$", "expected an object"))?;
    let field = |k: &str| obj.get(k).ok_or_else(|| schema(k, "missing required field"));

    let name = field("name")?.as_str().ok_or_else(|| schema("name", "expected a string"))?;
    let n = field("n")?.as_u64().filter(|&n| n > 0).ok_or_else(|| schema("n", "expected a positive integer"))?
        as usize;
    let objective = field("objective")?.as_str().ok_or_else(|| schema("objective", "expected a string"))?;
    let cons = field("constraints")?.as_array().ok_or_else(|| schema("constraints", "expected an array"))?;
    let mut texts = Vec::with_capacity(cons.len());
    for (i, c) in cons.iter().enumerate() {
        let path = format!("constraints[{i}].expr");
        let e = c.get("expr").ok_or_else(|| schema(&path, "missing required field"))?;
        texts.push(e.as_str().ok_or_else(|| schema(&path, "expected a string"))?);
    }
    let cone_v = field("cone")?;
    let blocks = cone_v
        .get("blocks")
        .ok_or_else(|| schema("cone.blocks", "missing required field"))?
        .as_array()
        .ok_or_else(|| schema("cone.blocks", "expected an array"))?;
    let mut parsed = Vec::with_capacity(blocks.len());
    for (i, b) in blocks.iter().enumerate() {
        let kind_path = format!("cone.blocks[{i}].kind");
        let dim_path = format!("cone.blocks[{i}].dim");
        let kind: ConeKind = serde_json::from_value(
            b.get("kind").cloned().ok_or_else(|| schema(&kind_path, "missing required field"))?,
        )
        .map_err(|e| schema(&kind_path, &e.to_string()))?;
        let dim = b
            .get("dim")
            .ok_or_else(|| schema(&dim_path, "missing required field"))?
            .as_u64()
            .ok_or_else(|| schema(&dim_path, "expected a positive integer"))? as usize;
        parsed.push(cone::ConeBlock::new(kind, dim).map_err(|e| schema(&dim_path, &e.to_string()))?);
    }
    let cone = ConeSpec::new(parsed).map_err(|e| schema("cone.blocks", &e.to_string()))?;
    let reference = match obj.get("reference") {
        None | Some(Value::Null) => None,
        Some(r) => Some(
            serde_json::from_value::<KKTPair>(r.clone()).map_err(|e| schema("reference", &e.to_string()))?,
        ),
    };
    let wrap = |path: String| move |e: Error| match e {
        e @ (Error::Syntax { .. } | Error::UnknownVariable { .. } | Error::NonIntegerExponent { .. }) => {
            Error::Schema { path: path.clone(), message: e.to_string() }
        }
        e => e,
    };
    parse(objective, n).map_err(wrap("objective".into()))?;
    for (i, t) in texts.iter().enumerate() {
        parse(t, n).map_err(wrap(format!("constraints[{i}].expr")))?;
    }
    ProblemSpec::new(name, n, objective, &texts, cone, reference).map_err(|e| match e {
        Error::DimensionMismatch { expected, got } => Error::Schema {
            path: "reference".into(),
            message: format!("expected length {expected}, got {got}"),
        },
        e => e,
    })
}

/// Serialize back to the problem file layout.
pub fn problem_to_json(p: &ProblemSpec) -> Value {
    let mut v = serde_json::json!({
        "name": p.name,
        "n": p.n,
        "objective": p.objective_text,
        "constraints": p.constraint_texts.iter().map(|t| serde_json::json!({"expr": t})).collect::<Vec<_>>(),
        "cone": {"blocks": p.cone.blocks()},
    });
    if let Some(r) = &p.reference {
        v["reference"] = serde_json::to_value(r).expect("plain data");
    }
    v
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultiplierSet {
    pub nonempty: bool,
    pub unique: bool,
    pub sample: Option<Vec<f64>>,
    /// Per-coordinate `[min, max]` of `λᵢ` over `Λ(x)`; infinite ends are unbounded.
    pub bounding_box: Option<Vec<(f64, f64)>>,
    /// False when the answer rests on sampling rather than exact enumeration.
    pub exact: bool,
    pub note: String,
}

/// `Λ(x) = {λ : ∇f(x)ᵀλ = −∇φ0(x), λ ∈ N_Θ(f(x))}`.
///
/// Zero coordinates carry a free multiplier, active orthant coordinates a
/// nonpositive one, and second-order blocks at nonapex boundary points a
/// multiple of the outward normal; the set is then a polyhedron in those
/// reduced variables and is analysed exactly. Second-order blocks at the apex
/// make the normal cone nonpolyhedral and the analysis is only sampled.
pub fn multiplier_set_analysis(p: &ProblemSpec, x: &[f64]) -> Result<MultiplierSet> {
    let z = KKTPair::new(x.to_vec(), vec![0.0; p.m()]);
    let d = p.lagrangian_data(&z)?;
    let y = d.f_val.as_slice();
    let m = p.m();
    let tol = cone::DEFAULT_TOL;
    let empty = |note: &str| MultiplierSet {
        nonempty: false,
        unique: false,
        sample: None,
        bounding_box: None,
        exact: true,
        note: note.into(),
    };
    if cone::distance(&p.cone, y)? > tol * (1.0 + norm(y)) {
        return Ok(empty("f(x) lies outside the cone"));
    }

    // λ = L ν with sign constraints on some ν.
    let mut cols: Vec<DVector<f64>> = Vec::new();
    let mut signs = Vec::new();
    let mut apex_blocks = Vec::new();
    let yscale = tol * (1.0 + norm(y));
    for (r, b) in p.cone.ranges() {
        match b.kind {
            ConeKind::Zero => {
                for i in r {
                    let mut c = DVector::zeros(m);
                    c[i] = 1.0;
                    cols.push(c);
                }
            }
            ConeKind::Orthant => {
                for i in r {
                    if y[i] > yscale {
                        continue;
                    }
                    let mut c = DVector::zeros(m);
                    c[i] = -1.0;
                    signs.push(cols.len());
                    cols.push(c);
                }
            }
            ConeKind::SecondOrder => match soc_position(&y[r.clone()], tol) {
                SocPosition::Interior => {}
                SocPosition::Boundary => {
                    let nrm = soc_boundary_normal(&y[r.clone()]);
                    let mut c = DVector::zeros(m);
                    for (k, v) in nrm.iter().enumerate() {
                        c[r.start + k] = *v;
                    }
                    signs.push(cols.len());
                    cols.push(c);
                }
                SocPosition::Apex => apex_blocks.push(r),
            },
        }
    }
    let stat_tol = 1e-8 * (1.0 + d.obj_grad.norm());
    if !apex_blocks.is_empty() {
        return Ok(sampled_analysis(p, &d, stat_tol));
    }

    let lmap = if cols.is_empty() { DMatrix::zeros(m, 0) } else { DMatrix::from_columns(&cols) };
    let a = d.jac_f.transpose() * &lmap;
    let poly = Polyhedron::new(a, -&d.obj_grad, signs, stat_tol);
    let faces = poly.faces()?;
    if faces.is_empty() {
        return Ok(empty("no multiplier satisfies stationarity"));
    }
    let sample = &lmap * &faces[0].point;
    let mut bbox = Vec::with_capacity(m);
    for i in 0..m {
        let c = lmap.row(i).transpose();
        let lo = match poly.minimize_over(&faces, &c)? {
            LpValue::Finite(v) => v,
            LpValue::Unbounded => f64::NEG_INFINITY,
            LpValue::Empty => unreachable!("faces are nonempty"),
        };
        let hi = match poly.minimize_over(&faces, &-c)? {
            LpValue::Finite(v) => -v,
            LpValue::Unbounded => f64::INFINITY,
            LpValue::Empty => unreachable!("faces are nonempty"),
        };
        bbox.push((lo, hi));
    }
    let unique = bbox
        .iter()
        .all(|&(lo, hi)| lo.is_finite() && hi.is_finite() && hi - lo <= 1e-9 * (1.0 + lo.abs().max(hi.abs())));
    Ok(MultiplierSet {
        nonempty: true,
        unique,
        sample: Some(sample.iter().copied().collect()),
        bounding_box: Some(bbox),
        exact: true,
        note: "face enumeration".into(),
    })
}

/// Projected-gradient search for a multiplier when some block sits at an apex.
fn sampled_analysis(p: &ProblemSpec, d: &LagrangianData, stat_tol: f64) -> MultiplierSet {
    let y = d.f_val.as_slice();
    let jt = d.jac_f.transpose();
    let step = 1.0 / (d.jac_f.norm_squared() + 1.0);
    let mut lam = DVector::zeros(p.m());
    let project_normal = |v: &DVector<f64>| -> DVector<f64> {
        // Π_{N_Θ(y)}(v) = v − Π_Θ(y + v) + y for closed convex cones Θ.
        let shifted: Vec<f64> = y.iter().zip(v.iter()).map(|(a, b)| a + b).collect();
        let proj = cone::project(&p.cone, &shifted).expect("dimensions checked");
        DVector::from_iterator(v.len(), (0..v.len()).map(|i| v[i] - proj[i] + y[i]))
    };
    for _ in 0..20_000 {
        let r = &jt * &lam + &d.obj_grad;
        lam = project_normal(&(&lam - &d.jac_f * r * step));
    }
    let res = (&jt * &lam + &d.obj_grad).norm();
    let nonempty = res <= stat_tol;
    MultiplierSet {
        nonempty,
        unique: false,
        sample: nonempty.then(|| lam.iter().copied().collect()),
        bounding_box: None,
        exact: false,
        note: "second-order block at the apex: multiplier set sampled, uniqueness undecided".into(),
    }
}
