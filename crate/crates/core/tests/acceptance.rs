//! Acceptance gate: one PASS/FAIL line per criterion; exits nonzero if any fails.

mod common;

use std::time::{Duration, Instant};

use common::{random_pair, random_pd_qp, random_polynomial, rng};
use conicsqp::cone::{self, critical_cone_contains, second_subderivative, ConeBlock, ConeSpec, CriticalCone};
use conicsqp::conic_qp::{enumerate_kkt_points, solve_subproblem, verify_kkt, EngineChoice, SolverConfig};
use conicsqp::diagnostics::noncritical::verify_witness;
use conicsqp::diagnostics::{
    check_multiplier_calmness, classify_stationary_point, probe_isolated_calmness, CalmVerdict, DiagnosticsConfig,
    PointData, ProbeConfig, ProbeResult,
};
use conicsqp::expr::{eval, eval2, parse};
use conicsqp::harness::{oracle_check, registry, registry_entry};
use conicsqp::sqp::{run_basic_sqp, subproblem_at, ConvergenceStatus, RateClass, SQPConfig};
use conicsqp::KKTPair;
use nalgebra::DVector;
use rand::Rng;

const AC1_LIMIT: Duration = Duration::from_secs(5);
const AC2_LIMIT: Duration = Duration::from_secs(30);
const AC4_LIMIT: Duration = Duration::from_secs(60);
const AC7_LIMIT: Duration = Duration::from_secs(5);

const ORACLE_TOL: f64 = 1e-3;
const ENGINE_TOL: f64 = 1e-6;
const WITNESS_TOL: f64 = 1e-9;
const AD_TOL: f64 = 1e-6;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> Outcome {
    let t = Instant::now();
    let out = f()?;
    let el = t.elapsed();
    if let Some(l) = limit {
        ensure(el < l, format!("took {:.2?}, limit {:?}", el, l))?;
    }
    Ok(format!("{out}; {:.2?}", el))
}

fn ratio_at(p: &ProbeResult, r: f64) -> Option<f64> {
    p.modulus_samples.iter().find(|m| (m.radius / r - 1.0).abs() < 1e-9).and_then(|m| m.max_ratio)
}

fn ac1() -> Outcome {
    let p = registry_entry("ex55").unwrap().problem;
    let set = p.multiplier_set_analysis(&[0.0]).map_err(|e| e.to_string())?;
    ensure(set.unique && set.sample.as_deref() == Some(&[0.0][..]), format!("(a) multiplier set {:?}", set))?;

    let rep = run_basic_sqp(&p, &KKTPair::new(vec![0.1], vec![0.0]), &SQPConfig::default()).map_err(|e| e.to_string())?;
    ensure(
        rep.status == ConvergenceStatus::SolvabilityFailure && rep.failed_at == Some(0),
        format!("(b) status {:?} at {:?}", rep.status, rep.failed_at),
    )?;
    let data = subproblem_at(&p, &KKTPair::new(vec![0.1], vec![0.0])).map_err(|e| e.to_string())?;
    let pts = enumerate_kkt_points(&data).map_err(|e| e.to_string())?;
    ensure(pts.is_empty(), format!("(b) enumeration found {} points", pts.len()))?;

    let rep = run_basic_sqp(&p, &KKTPair::new(vec![1.9], vec![0.0]), &SQPConfig::default()).map_err(|e| e.to_string())?;
    let z = rep.final_iterate();
    let class = rep.rate.as_ref().map(|r| r.classification);
    ensure(
        rep.status == ConvergenceStatus::Converged
            && (z.x[0] - 2.0).abs() <= 1e-10
            && z.lam[0].abs() <= 1e-10
            && rep.final_residual() <= 1e-10
            && rep.step_norms.len() <= 10
            && matches!(class, Some(RateClass::Superlinear | RateClass::Quadratic)),
        format!("(c) {:?} at {:?}, residual {:e}, {} steps, rate {:?}", rep.status, z, rep.final_residual(), rep.step_norms.len(), class),
    )?;

    let origin = KKTPair::new(vec![0.0], vec![0.0]);
    let cfg = DiagnosticsConfig { probe: None, ..DiagnosticsConfig::default() };
    let d = classify_stationary_point(&p, &origin, &cfg).map_err(|e| e.to_string())?;
    let min = d.ssoc.min_value.finite().unwrap_or(f64::INFINITY);
    ensure(
        d.srcq.holds && d.noncritical.holds && (min + 1.0).abs() <= 1e-6,
        format!("(d) srcq {} noncritical {} ssoc min {}", d.srcq.holds, d.noncritical.holds, min),
    )?;

    let probe = probe_isolated_calmness(&p, &origin, &ProbeConfig::default()).map_err(|e| e.to_string())?;
    let (r2, r6) = (ratio_at(&probe, 1e-2), ratio_at(&probe, 1e-6));
    let (Some(r2), Some(r6)) = (r2, r6) else { return Err(format!("(e) missing ratios {r2:?} {r6:?}")) };
    ensure(r6 <= 3.0 * r2 && r6 >= r2 / 3.0, format!("(e) ratio {r6:.3} at 1e-6 vs {r2:.3} at 1e-2"))?;
    Ok(format!("λ unique = 0; no KKT point at 0.1; converged in {} steps; SSOC min {min:.6}; probe {r2:.2} → {r6:.2}", rep.step_norms.len()))
}

fn ac2() -> Outcome {
    let mut parts = Vec::new();
    for flag in ["orthant4", "zero2", "soc3", "soc4"] {
        let c = oracle_check(flag, 100, 2024).map_err(|e| e.to_string())?;
        ensure(c.samples >= 100 && c.max_deviation <= ORACLE_TOL, format!("{flag}: max deviation {:e}", c.max_deviation))?;
        parts.push(format!("{flag} {:.1e}", c.max_deviation));
    }
    Ok(format!("max deviations {}", parts.join(", ")))
}

fn ac3() -> Outcome {
    let mut r = rng(33);
    let kinds = [ConeBlock::zero(2), ConeBlock::orthant(3), ConeBlock::second_order(3)];
    let (mut finite, mut disagreements) = (0, 0);
    for i in 0..300 {
        let c = ConeSpec::new(vec![kinds[i % 3]]).unwrap();
        let (y, lam) = random_pair(&mut r, &c);
        let k = CriticalCone::new(&c, &y, &lam, cone::DEFAULT_TOL).map_err(|e| e.to_string())?;
        let g = common::gauss(&mut r, c.total_dim());
        let w = if i % 2 == 0 { k.project(g.as_slice()) } else { g.iter().copied().collect() };
        let fin = second_subderivative(&c, &y, &lam, &w).map_err(|e| e.to_string())?.is_finite();
        let inside = critical_cone_contains(&c, &y, &lam, &w, cone::DEFAULT_TOL).map_err(|e| e.to_string())?;
        finite += fin as usize;
        disagreements += (fin != inside) as usize;
    }
    ensure(disagreements == 0, format!("{disagreements} disagreements"))?;
    Ok(format!("300 triples, {finite} finite, 0 disagreements"))
}

fn ac4() -> Outcome {
    let mut r = rng(44);
    let mut worst = 0.0f64;
    let split = SolverConfig { engine: EngineChoice::Splitting, ..SolverConfig::default() };
    let enumer = SolverConfig { engine: EngineChoice::Enumeration, ..SolverConfig::default() };
    for i in 0..200 {
        let data = random_pd_qp(&mut r);
        let a = solve_subproblem(&data, None, &enumer).map_err(|e| e.to_string())?;
        let b = solve_subproblem(&data, None, &split).map_err(|e| e.to_string())?;
        ensure(a.is_kkt_point() && b.is_kkt_point(), format!("instance {i}: {:?} / {:?}", a.status, b.status))?;
        let (da, db) = (a.d.unwrap(), b.d.unwrap());
        for (d, l) in [(&da, a.lam.as_ref().unwrap()), (&db, b.lam.as_ref().unwrap())] {
            ensure(verify_kkt(&data, d, l, 1e-8).map_err(|e| e.to_string())?, format!("instance {i}: re-verification failed"))?;
        }
        let gap = (data.objective(&DVector::from_vec(da)) - data.objective(&DVector::from_vec(db))).abs();
        worst = worst.max(gap);
    }
    ensure(worst <= ENGINE_TOL, format!("objective gap {worst:e}"))?;
    Ok(format!("200 QPs, largest objective gap {worst:.1e}"))
}

fn ac5() -> Outcome {
    let mut count = 0;
    for e in registry() {
        for k in &e.known_points {
            let rep = classify_stationary_point(&e.problem, &k.point, &DiagnosticsConfig::default()).map_err(|e| e.to_string())?;
            ensure(rep.failures.is_empty(), format!("{} at {:?}: {:?}", e.name, k.point, rep.failures))?;
            count += 1;
        }
    }
    ensure(count == 7, format!("{count} registry points"))?;
    Ok(format!("{count} registry points, 0 FAILURE artifacts"))
}

fn ac6() -> Outcome {
    let p = registry_entry("critical_toy").unwrap().problem;
    let crit = KKTPair::new(vec![0.0], vec![-1.0]);
    let cfg = DiagnosticsConfig { probe: None, ..DiagnosticsConfig::default() };
    let rep = classify_stationary_point(&p, &crit, &cfg).map_err(|e| e.to_string())?;
    let wit = rep.noncritical.witness.clone().ok_or("no witness at λ = −1")?;
    let pd = PointData::new(&p, &crit).map_err(|e| e.to_string())?;
    ensure(
        !rep.noncritical.holds
            && wit.w.iter().any(|v| v.abs() > 0.0)
            && verify_witness(&pd, &wit.w, &wit.u, WITNESS_TOL).map_err(|e| e.to_string())?,
        "witness does not satisfy the inclusion",
    )?;

    let rep0 = classify_stationary_point(&p, &KKTPair::new(vec![0.0], vec![0.0]), &cfg).map_err(|e| e.to_string())?;
    ensure(
        rep0.noncritical.holds && rep0.noncritical.conclusive && rep0.noncritical.method == "face enumeration",
        format!("λ = 0: {:?}", rep0.noncritical),
    )?;

    let probe = probe_isolated_calmness(&p, &crit, &ProbeConfig::default()).map_err(|e| e.to_string())?;
    let (Some(r2), Some(r6)) = (ratio_at(&probe, 1e-2), ratio_at(&probe, 1e-6)) else {
        return Err("probe found no perturbed solutions".into());
    };
    ensure(r6 >= 10.0 * r2, format!("growth {:.2} < 10", r6 / r2))?;
    for (r, v) in [(1e-2f64, r2), (1e-6, r6)] {
        let law = r.powf(-0.5);
        ensure(v <= 3.0 * law && v >= law / 3.0, format!("ratio {v:.3} at r = {r:e} vs law {law:.3}"))?;
    }
    Ok(format!("witness w = {:?}; growth {:.1}x (law 100x)", wit.w, r6 / r2))
}

fn ac7() -> Outcome {
    let e = registry_entry("soc_toy").unwrap();
    let p = e.problem;
    let zbar = p.reference.clone().unwrap();
    let z0 = KKTPair::new(vec![zbar.x[0] + 0.06, zbar.x[1] + 0.05], vec![zbar.lam[0] - 0.04, zbar.lam[1] + 0.03, zbar.lam[2] + 0.04]);
    let e0 = z0.distance(&zbar);
    ensure((e0 - 0.1).abs() < 0.01, format!("initial error {e0}"))?;
    let rep = run_basic_sqp(&p, &z0, &SQPConfig::default()).map_err(|e| e.to_string())?;
    let class = rep.rate.as_ref().map(|r| r.classification);
    ensure(
        rep.status == ConvergenceStatus::Converged
            && rep.final_residual() <= 1e-10
            && matches!(class, Some(RateClass::Superlinear | RateClass::Quadratic)),
        format!("{:?}, residual {:e}, rate {:?}", rep.status, rep.final_residual(), class),
    )?;
    let calm = check_multiplier_calmness(&p, &zbar, &DiagnosticsConfig::default()).map_err(|e| e.to_string())?;
    ensure(
        calm.verdict == CalmVerdict::Calm && calm.reason == "strict complementarity",
        format!("calmness {:?}", calm),
    )?;
    Ok(format!("initial error {e0:.3}, {} steps, rate {:?}, Calm via strict complementarity", rep.step_norms.len(), class.unwrap()))
}

fn ac8() -> Outcome {
    let mut r = rng(88);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = r.random_range(1..=3);
        let text = random_polynomial(&mut r, n, 3);
        let e = parse(&text, n).map_err(|e| e.to_string())?;
        let x: Vec<f64> = (0..n).map(|_| r.random_range(-2.0..2.0)).collect();
        let v = eval2(&e, &x).map_err(|e| e.to_string())?;
        let f = |i: usize, hi: f64, j: usize, hj: f64| {
            let mut y = x.clone();
            y[i] += hi;
            y[j] += hj;
            eval(&e, &y).unwrap()
        };
        for i in 0..n {
            let g = [1e-4, 1e-5]
                .map(|h| (f(i, h, i, 0.0) - f(i, -h, i, 0.0)) / (2.0 * h))
                .map(|fd| (v.gradient[i] - fd).abs() / (1.0 + v.gradient[i].abs()));
            worst = worst.max(g[0].min(g[1]));
            for j in 0..n {
                let hs = [1e-4, 1e-5]
                    .map(|h| (f(i, h, j, h) - f(i, h, j, -h) - f(i, -h, j, h) + f(i, -h, j, -h)) / (4.0 * h * h))
                    .map(|fd| (v.hessian[(i, j)] - fd).abs() / (1.0 + v.hessian[(i, j)].abs()));
                worst = worst.max(hs[0].min(hs[1]));
            }
        }
    }
    ensure(worst <= AD_TOL, format!("largest relative deviation {worst:e}"))?;
    Ok(format!("100 expressions, largest relative deviation {worst:.1e}"))
}

fn main() {
    let criteria: [(&str, &str, Option<Duration>, fn() -> Outcome); 8] = [
        ("AC1", "solvability failure fixture", Some(AC1_LIMIT), ac1),
        ("AC2", "second subderivative vs oracle", Some(AC2_LIMIT), ac2),
        ("AC3", "domain law", None, ac3),
        ("AC4", "engine cross-validation", Some(AC4_LIMIT), ac4),
        ("AC5", "consistency over the registry", None, ac5),
        ("AC6", "criticality detection", None, ac6),
        ("AC7", "second-order cone end to end", Some(AC7_LIMIT), ac7),
        ("AC8", "derivatives vs finite differences", None, ac8),
    ];
    let mut failed = 0;
    for (id, name, limit, f) in criteria {
        match timed(limit, f) {
            Ok(detail) => println!("{id} PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("{id} FAIL  {name}: {why}");
            }
        }
    }
    println!("{} of 8 criteria passed", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
