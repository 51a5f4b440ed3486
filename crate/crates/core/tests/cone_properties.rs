mod common;

use common::{gauss, random_cone, random_pair, rng};
use conicsqp::cone::{
    self, critical_cone_contains, dq_oracle_second_subderivative, normal_cone_residual, proto_derivative_contains,
    second_subderivative, ConeKind, ConeSpec, CriticalCone, ExtendedReal, OracleParams,
};
use proptest::prelude::*;
use rand_chacha::ChaCha8Rng;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn inner(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A direction in the critical cone half of the time, an arbitrary one otherwise.
fn direction(r: &mut ChaCha8Rng, k: &CriticalCone, in_k: bool) -> Vec<f64> {
    let g = gauss(r, k.dim());
    if in_k {
        k.project(g.as_slice())
    } else {
        g.iter().copied().collect()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn projection_is_idempotent_and_nonexpansive(seed in any::<u64>()) {
        let mut r = rng(seed);
        let c = random_cone(&mut r);
        let m = c.total_dim();
        let a: Vec<f64> = (gauss(&mut r, m) * 2.0).iter().copied().collect();
        let b: Vec<f64> = (gauss(&mut r, m) * 2.0).iter().copied().collect();
        let pa = cone::project(&c, &a).unwrap();
        let pb = cone::project(&c, &b).unwrap();
        prop_assert!(dist(&cone::project(&c, &pa).unwrap(), &pa) <= 1e-12);
        prop_assert!(dist(&pa, &pb) <= dist(&a, &b) + 1e-12);
        prop_assert!(cone::distance(&c, &pa).unwrap() <= 1e-12);
    }

    #[test]
    fn normal_residual_matches_variational_inequality(seed in any::<u64>(), perturb in any::<bool>()) {
        let mut r = rng(seed);
        let c = random_cone(&mut r);
        let (y, mut lam) = random_pair(&mut r, &c);
        if perturb {
            let g = gauss(&mut r, lam.len());
            for (l, e) in lam.iter_mut().zip(g.iter()) {
                *l += e;
            }
        }
        let res = normal_cone_residual(&c, &y, &lam).unwrap();
        // feasible test points: projections of random vectors and of y + tλ
        let mut worst = f64::NEG_INFINITY;
        for k in 0..300 {
            let z = if k % 3 == 0 {
                let t = 0.01 * (k + 1) as f64;
                let s: Vec<f64> = y.iter().zip(&lam).map(|(a, b)| a + t * b).collect();
                cone::project(&c, &s).unwrap()
            } else {
                cone::project(&c, gauss(&mut r, y.len()).as_slice()).unwrap()
            };
            let d: Vec<f64> = z.iter().zip(&y).map(|(a, b)| a - b).collect();
            worst = worst.max(inner(&lam, &d));
        }
        if res <= 1e-12 {
            prop_assert!(worst <= 1e-9, "residual {} but ⟨λ, z − y⟩ = {}", res, worst);
        } else if res > 1e-6 {
            prop_assert!(worst > 0.0, "residual {} but no violating z", res);
        }
    }

    #[test]
    fn domain_of_second_subderivative_is_the_critical_cone(seed in any::<u64>(), in_k in any::<bool>()) {
        let mut r = rng(seed);
        let c = random_cone(&mut r);
        let (y, lam) = random_pair(&mut r, &c);
        let k = CriticalCone::new(&c, &y, &lam, cone::DEFAULT_TOL).unwrap();
        let w = direction(&mut r, &k, in_k);
        let finite = second_subderivative(&c, &y, &lam, &w).unwrap().is_finite();
        prop_assert_eq!(finite, critical_cone_contains(&c, &y, &lam, &w, cone::DEFAULT_TOL).unwrap());
    }

    #[test]
    fn second_subderivative_is_homogeneous_of_degree_two(seed in any::<u64>(), t in 0.01f64..10.0) {
        let mut r = rng(seed);
        let c = random_cone(&mut r);
        let (y, lam) = random_pair(&mut r, &c);
        let k = CriticalCone::new(&c, &y, &lam, cone::DEFAULT_TOL).unwrap();
        let w = direction(&mut r, &k, true);
        let tw: Vec<f64> = w.iter().map(|v| t * v).collect();
        let a = second_subderivative(&c, &y, &lam, &w).unwrap().finite().unwrap();
        let b = second_subderivative(&c, &y, &lam, &tw).unwrap().finite().unwrap();
        prop_assert!((b - t * t * a).abs() <= 1e-9 * (1.0 + b.abs()));
    }

    #[test]
    fn proto_derivative_at_origin_is_the_polar(seed in any::<u64>(), in_polar in any::<bool>()) {
        let mut r = rng(seed);
        let c = random_cone(&mut r);
        let (y, lam) = random_pair(&mut r, &c);
        let k = CriticalCone::new(&c, &y, &lam, cone::DEFAULT_TOL).unwrap();
        let g = gauss(&mut r, k.dim());
        let u: Vec<f64> = if in_polar {
            let p = k.project(g.as_slice());
            g.iter().zip(&p).map(|(a, b)| a - b).collect()
        } else {
            g.iter().copied().collect()
        };
        let zero = vec![0.0; u.len()];
        let claimed = proto_derivative_contains(&c, &y, &lam, &zero, &u, 1e-9).unwrap();
        // polar membership by sampling K
        let mut sup = 0.0f64;
        for _ in 0..500 {
            let w = k.project(gauss(&mut r, k.dim()).as_slice());
            let n = inner(&w, &w).sqrt();
            if n > 1e-12 {
                sup = sup.max(inner(&u, &w) / n);
            }
        }
        if claimed {
            prop_assert!(sup <= 1e-7, "claimed polar but ⟨u, w⟩/‖w‖ = {}", sup);
        }
        if in_polar {
            prop_assert!(claimed);
        } else if sup > 1e-6 {
            prop_assert!(!claimed);
        }
    }
}

fn single(kind: ConeKind, dim: usize) -> ConeSpec {
    ConeSpec::single(kind, dim).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(30))]

    #[test]
    fn closed_form_agrees_with_difference_quotients(seed in any::<u64>(), kind in 0usize..3) {
        let mut r = rng(seed);
        let c = match kind {
            0 => single(ConeKind::Zero, 2),
            1 => single(ConeKind::Orthant, 3),
            _ => single(ConeKind::SecondOrder, 3),
        };
        // The oracle box has radius 5t while the recovery offset on a SOC boundary
        // is O(t‖w‖²/y_m): keep y_m ≥ 0.5 (cones are scale invariant) and ‖w‖ = 1.
        let (mut y, lam) = random_pair(&mut r, &c);
        let ym = y[y.len() - 1];
        if kind == 2 && ym > 0.0 && ym < 0.5 {
            y.iter_mut().for_each(|v| *v *= 0.5 / ym);
        }
        let k = CriticalCone::new(&c, &y, &lam, cone::DEFAULT_TOL).unwrap();
        let w = direction(&mut r, &k, true);
        let nw = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        let w: Vec<f64> = if nw > 1e-12 { w.iter().map(|v| v / nw).collect() } else { w };
        let closed = second_subderivative(&c, &y, &lam, &w).unwrap();
        let ExtendedReal::Finite(v) = closed else { return Err(TestCaseError::fail("w ∈ K must be finite")) };
        let oracle = dq_oracle_second_subderivative(&c, &y, &lam, &w, &OracleParams::default()).unwrap();
        prop_assert!((v - oracle).abs() <= 1e-3 * (1.0 + v.abs()), "closed {} oracle {}", v, oracle);
    }
}
