mod common;

use common::{brute_force_min, gauss, rng, Layout, Planted, SocState, SOC_STATES};
use conicsqp::cone::ExtendedReal;
use conicsqp::diagnostics::noncritical::verify_witness;
use conicsqp::diagnostics::{
    check_noncriticality, check_ssoc, classify_stationary_point, DiagnosticsConfig, PointData,
};
use conicsqp::harness::registry;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn layout(kind: usize, n: usize, soc: usize) -> Layout {
    match kind {
        0 => Layout { zeros: 0, orthant: n, soc: None },
        1 => Layout { zeros: 1, orthant: n.saturating_sub(1).max(1), soc: None },
        2 => Layout { zeros: 0, orthant: 0, soc: Some(SOC_STATES[soc]) },
        3 => Layout { zeros: 0, orthant: 1, soc: Some(SOC_STATES[soc]) },
        _ => Layout { zeros: 1, orthant: 0, soc: Some(SOC_STATES[soc]) },
    }
}

fn quiet() -> DiagnosticsConfig {
    DiagnosticsConfig { probe: None, ..DiagnosticsConfig::default() }
}

/// `min ‖Qw + η‖` over `η ∈ N_K(w)`, piece by piece, for `w ∈ K`.
fn normal_gap(p: &Planted, w: &[f64]) -> f64 {
    use common::TestPiece::*;
    let wv = DVector::from_column_slice(w);
    let mut r = &p.a * &wv;
    for (off, y, mu) in &p.curved {
        let off = *off;
        let c = mu / y[2];
        let (yb, ym) = ([y[0], y[1]], y[2]);
        let wb = [w[off], w[off + 1]];
        let s = (yb[0] * wb[0] + yb[1] * wb[1]) / (ym * ym);
        r[off] += c * (wb[0] - yb[0] * s);
        r[off + 1] += c * (wb[1] - yb[1] * s);
    }
    let mut gap = 0.0;
    let mut off = 0;
    for piece in &p.pieces {
        let d = piece.dim();
        let seg: Vec<f64> = r.rows(off, d).iter().copied().collect();
        let ws = &w[off..off + d];
        // distance from −seg to N_piece(ws)
        let g = match piece {
            Free(_) => seg.iter().map(|v| v * v).sum::<f64>(),
            Zero(_) => 0.0,
            Nonneg => {
                if ws[0] > 1e-12 {
                    seg[0] * seg[0]
                } else {
                    seg[0].min(0.0).powi(2)
                }
            }
            Hyperplane(nv) | Halfspace(nv) => {
                let active = matches!(piece, Hyperplane(_)) || nv.dot(&DVector::from_column_slice(ws)) > -1e-12;
                let sv = DVector::from_vec(seg.clone());
                if active {
                    let t = -nv.dot(&sv) / nv.norm_squared();
                    let t = if matches!(piece, Halfspace(_)) { t.max(0.0) } else { t };
                    (sv + nv * t).norm_squared()
                } else {
                    sv.norm_squared()
                }
            }
            Soc(_) => {
                // N_SOC(w) on the boundary is the ray through (w̄, −w_m); at the
                // apex it is −SOC; in the interior {0}.
                let sv = DVector::from_vec(seg.clone());
                let nb = (ws[0] * ws[0] + ws[1] * ws[1]).sqrt();
                if ws[2] < 1e-12 {
                    // distance from −seg to −SOC
                    let pr = common::soc_project(&seg);
                    pr.iter().zip(seg.iter()).map(|(a, b)| (a - b).powi(2)).sum()
                } else if nb < ws[2] - 1e-12 {
                    sv.norm_squared()
                } else {
                    let ray = DVector::from_vec(vec![ws[0], ws[1], -ws[2]]);
                    let t = (-ray.dot(&sv) / ray.norm_squared()).max(0.0);
                    (sv + ray * t).norm_squared()
                }
            }
        };
        gap += g;
        off += d;
    }
    gap.sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn ssoc_matches_sphere_sampling(seed in any::<u64>(), kind in 0usize..5, n in 1usize..=4, soc in 0usize..5) {
        let mut r = rng(seed);
        let p = Planted::random(&mut r, &layout(kind, n, soc), None);
        let res = check_ssoc(&p.problem, &p.point, &quiet()).unwrap();
        match (brute_force_min(&p, &mut r, 10_000), res.min_value) {
            (None, v) => prop_assert_eq!(v, ExtendedReal::PosInf),
            (Some((b, w)), ExtendedReal::Finite(v)) => {
                prop_assert!(v <= b + 1e-9, "reported {} above sampled {} at {:?}", v, b, w);
                prop_assert!(b - v <= 1e-3, "reported {} vs sampled {}", v, b);
                if let Some(wit) = res.witness {
                    prop_assert!((p.q(&wit) - v).abs() <= 1e-6);
                }
            }
            (Some((b, _)), other) => prop_assert!(false, "sampled {} but reported {:?}", b, other),
        }
    }

    #[test]
    fn certified_noncriticality_survives_sampling(seed in any::<u64>(), kind in 0usize..5, n in 1usize..=4, soc in 0usize..5) {
        let mut r = rng(seed);
        let p = Planted::random(&mut r, &layout(kind, n, soc), None);
        let res = check_noncriticality(&p.problem, &p.point, &quiet()).unwrap();
        if res.holds && res.conclusive {
            for _ in 0..2000 {
                let w = p.project_k(gauss(&mut r, p.n()).as_slice());
                let nw = w.iter().map(|v| v * v).sum::<f64>().sqrt();
                if nw < 1e-9 {
                    continue;
                }
                let w: Vec<f64> = w.iter().map(|v| v / nw).collect();
                prop_assert!(normal_gap(&p, &w) > 1e-7, "sampled witness {:?}", w);
            }
        }
        if let Some(wit) = &res.witness {
            let pd = PointData::new(&p.problem, &p.point).unwrap();
            prop_assert!(verify_witness(&pd, &wit.w, &wit.u, 1e-9).unwrap());
        }
    }

    #[test]
    fn planted_singular_direction_is_critical(seed in any::<u64>(), kind in 0usize..5, n in 1usize..=4, soc in 0usize..5) {
        let mut r = rng(seed);
        let lay = layout(kind, n, soc);
        prop_assume!(lay.soc != Some(SocState::BoundaryStrict));
        // plant with a throwaway Hessian, then rebuild with A w* = 0 for some w* ∈ K
        let probe = Planted::random(&mut common::rng(seed), &lay, None);
        let ws = probe.project_k(gauss(&mut r, probe.n()).as_slice());
        let ws = DVector::from_vec(ws);
        prop_assume!(ws.norm() > 1e-3);
        let dim = probe.n();
        let proj = DMatrix::identity(dim, dim) - &ws * ws.transpose() / ws.norm_squared();
        let a0 = DMatrix::from_fn(dim, dim, |_, _| r.random_range(-1.0..1.0));
        let a = &proj * (&a0 + a0.transpose()) * &proj * 0.5;
        let p = Planted::random(&mut common::rng(seed), &lay, Some(a));
        prop_assert_eq!(&p.point.x, &probe.point.x);
        let res = check_noncriticality(&p.problem, &p.point, &quiet()).unwrap();
        prop_assert!(!res.holds, "planted direction {:?} not detected", ws);
        let wit = res.witness.expect("witness");
        let pd = PointData::new(&p.problem, &p.point).unwrap();
        prop_assert!(verify_witness(&pd, &wit.w, &wit.u, 1e-9).unwrap());
        prop_assert!(wit.w.iter().any(|v| v.abs() > 1e-6));
    }

    #[test]
    fn biconditionals_hold_on_planted_points(seed in any::<u64>(), kind in 0usize..5, n in 1usize..=4, soc in 0usize..5) {
        let mut r = rng(seed);
        let p = Planted::random(&mut r, &layout(kind, n, soc), None);
        let rep = classify_stationary_point(&p.problem, &p.point, &quiet()).unwrap();
        prop_assert!(rep.failures.is_empty(), "{:?}", rep.failures);
        prop_assert!(rep.isolated_calmness_consistent);
    }
}

use rand::Rng;

#[test]
fn registry_points_match_expected_summaries() {
    for e in registry() {
        for k in &e.known_points {
            let rep = classify_stationary_point(&e.problem, &k.point, &DiagnosticsConfig::default()).unwrap();
            let ex = k.expected;
            let tag = format!("{} at {:?}", e.name, k.point);
            assert_eq!(rep.ssoc.holds, ex.ssoc, "{tag}: ssoc");
            assert_eq!(rep.srcq.holds, ex.srcq, "{tag}: srcq");
            assert_eq!(rep.noncritical.holds, ex.noncritical, "{tag}: noncritical");
            assert_eq!(rep.lambda_unique, ex.lambda_unique, "{tag}: unique");
            assert_eq!(rep.multiplier_calm.verdict, ex.calm, "{tag}: calm");
            assert!(rep.failures.is_empty(), "{tag}: {:?}", rep.failures);
            for c in [
                rep.checks.multipliers_vs_srcq,
                rep.checks.second_order_characterization,
                rep.checks.criticality_vs_probe,
                rep.checks.srcq_forms,
            ] {
                assert_ne!(c, Some(false), "{tag}: {:?}", rep.checks);
            }
        }
    }
}

#[test]
fn critical_points_never_probe_as_calm() {
    for e in registry() {
        for k in &e.known_points {
            let rep = classify_stationary_point(&e.problem, &k.point, &DiagnosticsConfig::default()).unwrap();
            if !rep.noncritical.holds && rep.noncritical.conclusive {
                let probe = rep.calmness_probe.unwrap();
                assert_ne!(probe.bounded, Some(true), "{} at {:?}", e.name, k.point);
            }
        }
    }
}
