#![allow(dead_code)]

use conicsqp::cone::{ConeBlock, ConeSpec};
use conicsqp::conic_qp::SubproblemData;
use conicsqp::{KKTPair, ProblemSpec};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gauss(rng: &mut ChaCha8Rng, d: usize) -> DVector<f64> {
    DVector::from_fn(d, |_, _| StandardNormal.sample(rng))
}

pub fn num(v: f64) -> String {
    if v < 0.0 {
        format!("({v})")
    } else {
        format!("{v}")
    }
}

/// The critical cone of a planted point, written down independently of the
/// library: one entry per block of coordinates.
#[derive(Debug, Clone)]
pub enum TestPiece {
    Free(usize),
    Zero(usize),
    Nonneg,
    Hyperplane(DVector<f64>),
    Halfspace(DVector<f64>),
    Soc(usize),
}

impl TestPiece {
    pub fn dim(&self) -> usize {
        match self {
            TestPiece::Free(d) | TestPiece::Zero(d) | TestPiece::Soc(d) => *d,
            TestPiece::Nonneg => 1,
            TestPiece::Hyperplane(n) | TestPiece::Halfspace(n) => n.len(),
        }
    }

    pub fn project(&self, g: &[f64]) -> Vec<f64> {
        match self {
            TestPiece::Free(_) => g.to_vec(),
            TestPiece::Zero(d) => vec![0.0; *d],
            TestPiece::Nonneg => vec![g[0].max(0.0)],
            TestPiece::Hyperplane(n) | TestPiece::Halfspace(n) => {
                let g = DVector::from_column_slice(g);
                let s = n.dot(&g) / n.norm_squared();
                if matches!(self, TestPiece::Halfspace(_)) && s <= 0.0 {
                    g.iter().copied().collect()
                } else {
                    (g - n * s).iter().copied().collect()
                }
            }
            TestPiece::Soc(d) => soc_project(&g[..*d]),
        }
    }
}

/// Projection onto `{(x̄, t) : ‖x̄‖ ≤ t}`.
pub fn soc_project(g: &[f64]) -> Vec<f64> {
    let m = g.len() - 1;
    let t = g[m];
    let nb = g[..m].iter().map(|v| v * v).sum::<f64>().sqrt();
    if nb <= t {
        g.to_vec()
    } else if nb <= -t {
        vec![0.0; g.len()]
    } else {
        let a = 0.5 * (nb + t);
        let mut out: Vec<f64> = g[..m].iter().map(|v| a * v / nb).collect();
        out.push(a);
        out
    }
}

/// `min f(x)` over `x ∈ Θ` with a quadratic objective planted so that a chosen
/// `(ȳ, λ̄)` is a KKT pair; the constraint map is the identity.
#[derive(Debug, Clone)]
pub struct Planted {
    pub problem: ProblemSpec,
    pub point: KKTPair,
    /// Objective Hessian.
    pub a: DMatrix<f64>,
    pub pieces: Vec<TestPiece>,
    /// `(offset, ȳ, μ)` for second-order blocks on the boundary with `μ > 0`.
    pub curved: Vec<(usize, Vec<f64>, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SocState {
    Interior,
    BoundaryStrict,
    BoundaryDegenerate,
    ApexInteriorMultiplier,
    ApexZero,
}

pub const SOC_STATES: [SocState; 5] = [
    SocState::Interior,
    SocState::BoundaryStrict,
    SocState::BoundaryDegenerate,
    SocState::ApexInteriorMultiplier,
    SocState::ApexZero,
];

pub struct Layout {
    pub zeros: usize,
    pub orthant: usize,
    pub soc: Option<SocState>,
}

impl Planted {
    pub fn random(rng: &mut ChaCha8Rng, layout: &Layout, a: Option<DMatrix<f64>>) -> Self {
        let mut blocks = Vec::new();
        let mut y = Vec::new();
        let mut lam = Vec::new();
        let mut pieces = Vec::new();
        let mut curved = Vec::new();
        if layout.zeros > 0 {
            blocks.push(ConeBlock::zero(layout.zeros));
            for _ in 0..layout.zeros {
                y.push(0.0);
                lam.push(rng.random_range(-2.0..2.0));
            }
            pieces.push(TestPiece::Zero(layout.zeros));
        }
        if layout.orthant > 0 {
            blocks.push(ConeBlock::orthant(layout.orthant));
            for _ in 0..layout.orthant {
                match rng.random_range(0..3) {
                    0 => {
                        y.push(rng.random_range(0.5..2.0));
                        lam.push(0.0);
                        pieces.push(TestPiece::Free(1));
                    }
                    1 => {
                        y.push(0.0);
                        lam.push(-rng.random_range(0.5..2.0));
                        pieces.push(TestPiece::Zero(1));
                    }
                    _ => {
                        y.push(0.0);
                        lam.push(0.0);
                        pieces.push(TestPiece::Nonneg);
                    }
                }
            }
        }
        if let Some(state) = layout.soc {
            blocks.push(ConeBlock::second_order(3));
            let offset = y.len();
            let mut bar: Vec<f64> = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            if bar[0].abs() + bar[1].abs() < 0.3 {
                bar[0] = 0.7;
            }
            let nb = (bar[0] * bar[0] + bar[1] * bar[1]).sqrt();
            let normal = DVector::from_vec(vec![bar[0], bar[1], -nb]);
            match state {
                SocState::Interior => {
                    y.extend([bar[0], bar[1], nb + rng.random_range(0.5..1.5)]);
                    lam.extend([0.0; 3]);
                    pieces.push(TestPiece::Free(3));
                }
                SocState::BoundaryStrict | SocState::BoundaryDegenerate => {
                    y.extend([bar[0], bar[1], nb]);
                    if state == SocState::BoundaryStrict {
                        let t = rng.random_range(0.5..2.0);
                        lam.extend(normal.iter().map(|v| t * v));
                        curved.push((offset, y[offset..offset + 3].to_vec(), t * nb));
                        pieces.push(TestPiece::Hyperplane(normal));
                    } else {
                        lam.extend([0.0; 3]);
                        pieces.push(TestPiece::Halfspace(normal));
                    }
                }
                SocState::ApexInteriorMultiplier => {
                    y.extend([0.0; 3]);
                    lam.extend([bar[0], bar[1], -(nb + rng.random_range(0.5..1.5))]);
                    pieces.push(TestPiece::Zero(3));
                }
                SocState::ApexZero => {
                    y.extend([0.0; 3]);
                    lam.extend([0.0; 3]);
                    pieces.push(TestPiece::Soc(3));
                }
            }
        }
        let n = y.len();
        let a = a.unwrap_or_else(|| {
            let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            (&g + g.transpose()) * 0.5
        });
        let yv = DVector::from_vec(y.clone());
        let lv = DVector::from_vec(lam.clone());
        let b = -(&a * &yv) - &lv;
        let mut terms = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if a[(i, j)] != 0.0 {
                    terms.push(format!("0.5*{}*x{}*x{}", num(a[(i, j)]), i + 1, j + 1));
                }
            }
            terms.push(format!("{}*x{}", num(b[i]), i + 1));
        }
        let vars: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
        let refs: Vec<&str> = vars.iter().map(String::as_str).collect();
        let cone = ConeSpec::new(blocks).unwrap();
        let problem = ProblemSpec::new("planted", n, &terms.join(" + "), &refs, cone, None).unwrap();
        Planted { problem, point: KKTPair::new(y, lam), a, pieces, curved }
    }

    pub fn n(&self) -> usize {
        self.point.x.len()
    }

    pub fn is_polyhedral_k(&self) -> bool {
        !self.pieces.iter().any(|p| matches!(p, TestPiece::Soc(_)))
    }

    /// Projection onto the planted critical cone.
    pub fn project_k(&self, g: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(g.len());
        let mut off = 0;
        for p in &self.pieces {
            let d = p.dim();
            out.extend(p.project(&g[off..off + d]));
            off += d;
        }
        out
    }

    /// `wᵀ∇²L w` plus the second-order-cone curvature term.
    pub fn q(&self, w: &[f64]) -> f64 {
        let wv = DVector::from_column_slice(w);
        let mut v = wv.dot(&(&self.a * &wv));
        for (off, y, mu) in &self.curved {
            let wb = &w[*off..*off + 3];
            v += mu / y[2] * (wb[0] * wb[0] + wb[1] * wb[1] - wb[2] * wb[2]);
        }
        v
    }
}

/// Smallest `q` over unit vectors of the planted critical cone, by sampling
/// followed by a random local search from the best samples.
pub fn brute_force_min(p: &Planted, rng: &mut ChaCha8Rng, samples: usize) -> Option<(f64, Vec<f64>)> {
    let n = p.n();
    let unit = |v: Vec<f64>| {
        let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        (nv > 1e-12).then(|| v.iter().map(|a| a / nv).collect::<Vec<f64>>())
    };
    let mut found: Vec<(f64, Vec<f64>)> = Vec::new();
    for _ in 0..samples {
        let g = gauss(rng, n);
        if let Some(w) = unit(p.project_k(g.as_slice())) {
            found.push((p.q(&w), w));
        }
    }
    if found.is_empty() {
        return None;
    }
    found.sort_by(|a, b| a.0.total_cmp(&b.0));
    found.truncate(10);
    for (val, w) in found.iter_mut() {
        let mut sigma = 0.1;
        for _ in 0..400 {
            let step = gauss(rng, n) * sigma;
            let cand: Vec<f64> = w.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            if let Some(c) = unit(p.project_k(&cand)) {
                let v = p.q(&c);
                if v < *val {
                    *val = v;
                    *w = c;
                    continue;
                }
            }
            sigma = (sigma * 0.97).max(1e-6);
        }
    }
    found.into_iter().min_by(|a, b| a.0.total_cmp(&b.0))
}

/// Random strictly convex QP over `Zero(k) × Orthant(m − k)` with a feasible
/// linearization.
pub fn random_pd_qp(rng: &mut ChaCha8Rng) -> SubproblemData {
    let n = rng.random_range(1..=6);
    let m = rng.random_range(1..=6);
    let k = rng.random_range(0..=m.min(n).min(2));
    let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let h = b.transpose() * &b + DMatrix::identity(n, n) * 0.1;
    let g = gauss(rng, n);
    let a = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
    let d0 = gauss(rng, n);
    let s = DVector::from_fn(m, |i, _| if i < k { 0.0 } else { rng.random_range(0.0..1.0) });
    let c = &s - &a * &d0;
    let mut blocks = Vec::new();
    if k > 0 {
        blocks.push(ConeBlock::zero(k));
    }
    if m > k {
        blocks.push(ConeBlock::orthant(m - k));
    }
    SubproblemData::new(h, g, a, c, ConeSpec::new(blocks).unwrap()).unwrap()
}

/// A random polynomial in `x1..xn` as expression text.
pub fn random_polynomial(rng: &mut ChaCha8Rng, n: usize, depth: usize) -> String {
    if depth == 0 || rng.random_bool(0.25) {
        return if rng.random_bool(0.7) {
            format!("x{}", rng.random_range(1..=n))
        } else {
            num((rng.random_range(-3.0..3.0f64) * 100.0).round() / 100.0)
        };
    }
    let a = random_polynomial(rng, n, depth - 1);
    match rng.random_range(0..5) {
        0 => format!("({a} + {})", random_polynomial(rng, n, depth - 1)),
        1 => format!("({a} - {})", random_polynomial(rng, n, depth - 1)),
        2 => format!("{a}*{}", random_polynomial(rng, n, depth - 1)),
        3 => format!("({a})^{}", rng.random_range(2..=3)),
        _ => format!("-{a}"),
    }
}

/// A random product of one to three blocks of total dimension at most 8.
pub fn random_cone(rng: &mut ChaCha8Rng) -> ConeSpec {
    let k = rng.random_range(1..=3);
    let blocks = (0..k)
        .map(|_| match rng.random_range(0..3) {
            0 => ConeBlock::zero(rng.random_range(1..=2)),
            1 => ConeBlock::orthant(rng.random_range(1..=3)),
            _ => ConeBlock::second_order(rng.random_range(2..=4)),
        })
        .collect();
    ConeSpec::new(blocks).unwrap()
}

/// A complementary pair `y ∈ Θ`, `λ ∈ N_Θ(y)` with boundary cases favoured.
pub fn random_pair(rng: &mut ChaCha8Rng, cone: &ConeSpec) -> (Vec<f64>, Vec<f64>) {
    use conicsqp::cone::ConeKind;
    let mut y = Vec::new();
    let mut lam = Vec::new();
    for b in cone.blocks() {
        match b.kind {
            ConeKind::Zero => {
                y.extend(vec![0.0; b.dim]);
                lam.extend(gauss(rng, b.dim).iter());
            }
            ConeKind::Orthant => {
                for _ in 0..b.dim {
                    match rng.random_range(0..3) {
                        0 => {
                            y.push(rng.random_range(0.1..2.0));
                            lam.push(0.0);
                        }
                        1 => {
                            y.push(0.0);
                            lam.push(-rng.random_range(0.1..2.0));
                        }
                        _ => {
                            y.push(0.0);
                            lam.push(0.0);
                        }
                    }
                }
            }
            ConeKind::SecondOrder => {
                let d = b.dim;
                let bar = gauss(rng, d - 1);
                let nb = bar.norm().max(1e-3);
                let t = rng.random_range(0.2..2.0);
                let s = rng.random_range(0.2..2.0);
                match rng.random_range(0..5) {
                    0 => {
                        y.extend(bar.iter());
                        y.push(nb + t);
                        lam.extend(vec![0.0; d]);
                    }
                    1 => {
                        y.extend(bar.iter());
                        y.push(nb);
                        lam.extend(bar.iter().map(|v| s * v));
                        lam.push(-s * nb);
                    }
                    2 => {
                        y.extend(bar.iter());
                        y.push(nb);
                        lam.extend(vec![0.0; d]);
                    }
                    3 => {
                        y.extend(vec![0.0; d]);
                        lam.extend(bar.iter());
                        lam.push(-(nb + t));
                    }
                    _ => {
                        y.extend(vec![0.0; d]);
                        lam.extend(vec![0.0; d]);
                    }
                }
            }
        }
    }
    (y, lam)
}
