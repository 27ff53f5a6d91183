//! Constrained design: audits against quadrature, duality, and baselines.

use rarexact::cmdp::{
    audit_policy, audit_weights, lagrangian_backward, measure_log_weight, solve_cmdp, CmdpSpec, DualSettings, Measure, Rectangle,
};
use rarexact::oc::OcEvaluator;
use rarexact::path_engine::{equal_allocation_g, forward_g};
use rarexact::{LayerIndex, TestRule};

/// Gauss–Legendre nodes and weights on `[lo, hi]`, by Newton iteration on `P_m`.
fn gauss_legendre(m: usize, lo: f64, hi: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(m);
    for i in 1..=m {
        let mut x = (std::f64::consts::PI * (i as f64 - 0.25) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=m {
                (p0, p1) = (p1, ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64);
            }
            dp = m as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push((lo + 0.5 * (hi - lo) * (x + 1.0), 0.5 * (hi - lo) * w));
    }
    out
}

fn small_spec() -> CmdpSpec {
    CmdpSpec {
        n: 16,
        burn_in: 2,
        alpha: 0.1,
        avg_type1: Some(0.1),
        pointwise_type1: Some(0.08),
        benefit_floor: 0.45,
        rectangles: vec![Rectangle::new((0.1, 0.3), (0.5, 0.9)).unwrap(), Rectangle::new((0.6, 0.8), (0.2, 0.4)).unwrap()],
        ..Default::default()
    }
}

#[test]
fn audit_matches_quadrature_of_exact_operating_characteristics() {
    let spec = small_spec();
    let sol = solve_cmdp(&spec).unwrap();
    let g = forward_g(sol.table.as_ref(), spec.n, spec.burn_in).unwrap();
    let ev = OcEvaluator::new(&g, &TestRule::asymptotic(spec.alpha).unwrap()).unwrap();
    // Integrands are polynomials of degree ≤ n per coordinate, so 12 nodes are exact.
    let q = gauss_legendre(12, 0.0, 1.0);
    let ev = &ev;
    let power: f64 = q.iter().flat_map(|&(a, wa)| q.iter().map(move |&(b, wb)| wa * wb * ev.rejection_rate((a, b)))).sum();
    assert!((power - sol.audit.objective).abs() < 1e-10, "{power} vs {}", sol.audit.objective);
    let avg: f64 = q.iter().map(|&(t, w)| w * ev.rejection_rate((t, t))).sum();
    assert!((avg - sol.audit.value("average_type1").unwrap()).abs() < 1e-10);
    for &t in &spec.null_grid {
        let v = sol.audit.value(&format!("type1({t})")).unwrap();
        assert!((v - ev.rejection_rate((t, t))).abs() < 1e-12, "θ = {t}");
    }
    for r in &spec.rectangles {
        let (qc, qd) = (gauss_legendre(12, r.l_c, r.u_c), gauss_legendre(12, r.l_d, r.u_d));
        let area = (r.u_c - r.l_c) * (r.u_d - r.l_d);
        let mean: f64 = qc
            .iter()
            .flat_map(|&(a, wa)| qd.iter().map(move |&(b, wb)| (wa, wb, a, b)))
            .map(|(wa, wb, a, b)| wa * wb * ev.patient_benefit((a, b)))
            .sum::<f64>()
            / area;
        let label = format!("benefit([{},{}]x[{},{}])", r.l_c, r.u_c, r.l_d, r.u_d);
        assert!((mean - sol.audit.value(&label).unwrap()).abs() < 1e-10, "{label}");
    }
    assert_eq!(audit_policy(&sol.table, &spec).unwrap(), sol.audit);
}

#[test]
fn returned_policy_meets_constraints_within_tolerance() {
    let spec = small_spec();
    let sol = solve_cmdp(&spec).unwrap();
    assert!(!sol.infeasible_at_tolerance);
    for c in &sol.audit.constraints {
        assert!(c.violation <= spec.dual.tolerance, "{c:?}");
    }
    let path = sol.dual.best_dual_path();
    assert!(path.windows(2).all(|w| w[1] <= w[0]));
    let best = *path.last().unwrap();
    assert!(sol.audit.objective <= best + spec.dual.tolerance * sol.dual.multipliers.iter().sum::<f64>() + 1e-12);
}

#[test]
fn equal_allocation_baseline() {
    let spec = CmdpSpec::benefit_and_power(20, 2);
    let ea = audit_weights(&equal_allocation_g(20, 2).unwrap(), &spec).unwrap();
    for c in ea.constraints.iter().filter(|c| c.label.starts_with("benefit")) {
        assert!((c.value - 0.5).abs() < 1e-12, "{c:?}");
    }
}

#[test]
fn unconstrained_deterministic_design_beats_equal_allocation() {
    // With p = 1 the action set contains every step of the balanced rule.
    let spec = CmdpSpec {
        n: 20,
        burn_in: 2,
        p: 1.0,
        avg_type1: None,
        pointwise_type1: None,
        ..Default::default()
    };
    let sol = solve_cmdp(&spec).unwrap();
    let ea = sol.baseline.as_ref().unwrap();
    assert!(sol.audit.objective >= ea.objective - 1e-12, "{} < {}", sol.audit.objective, ea.objective);
    assert_eq!(sol.dual.history.len(), 1);
}

#[test]
fn weak_duality_on_a_multiplier_grid() {
    let spec = CmdpSpec {
        n: 12,
        burn_in: 1,
        avg_type1: Some(0.03),
        pointwise_type1: None,
        dual: DualSettings { max_iter: 400, ..Default::default() },
        ..Default::default()
    };
    let sol = solve_cmdp(&spec).unwrap();
    assert!(!sol.infeasible_at_tolerance);
    let layer = LayerIndex::new(spec.n, spec.burn_in);
    let g = forward_g(sol.table.as_ref(), spec.n, spec.burn_in).unwrap();
    let reject = TestRule::asymptotic(spec.alpha).unwrap().reject_indicator(&g).unwrap();
    let (alt, null): (Vec<f64>, Vec<f64>) = layer
        .states()
        .zip(&reject)
        .map(|(x, &r)| {
            let f = r as u8 as f64;
            (
                f * measure_log_weight(&x, &Measure::AltUniform).unwrap().value(),
                f * measure_log_weight(&x, &Measure::NullUniform).unwrap().value(),
            )
        })
        .unzip();
    let used = sol.audit.value("average_type1").unwrap();
    let excess = (used - 0.03).max(0.0);
    let mut best_grid = f64::INFINITY;
    for i in 0..=200 {
        let lam = i as f64 * 0.05;
        let reward: Vec<f64> = alt.iter().zip(&null).map(|(a, b)| a - lam * b).collect();
        let (_, v) = lagrangian_backward(&reward, &spec).unwrap();
        let dual = v + lam * 0.03;
        assert!(dual + lam * excess >= sol.audit.objective - 1e-12, "λ = {lam}: {dual}");
        best_grid = best_grid.min(dual);
    }
    // The solver's policy is close to the best dual bound found on the grid.
    assert!(best_grid - sol.audit.objective < 5e-3, "gap {}", best_grid - sol.audit.objective);
}
