mod common;

use ccopf::margins::analytical_margins;
use ccopf::opf::{evaluate_objective, solve_acopf, OPFSolution, SolverStatus, TightenedBounds};
use ccopf::powerflow::mismatch;
use ccopf::sensitivity::compute_sensitivities;
use serde_json::Value;

fn reference_cost(key: &str) -> f64 {
    let v: Value = serde_json::from_str(&common::data("reference_opf.json")).unwrap();
    v["cases"][key]["cost"].as_f64().unwrap()
}

fn check_solution(f: &common::Fixture, bounds: &TightenedBounds, sol: &OPFSolution) {
    assert_eq!(sol.status, SolverStatus::Converged);
    assert!(sol.residuals.feascond <= 1e-6);
    assert!(sol.residuals.gradcond <= 1e-6);
    let sched = sol.dispatch.schedule(&f.net);
    let r = mismatch(&f.net, &f.y, &sol.point.theta, &sol.point.v, &sched);
    assert!(r.iter().all(|x| x.abs() <= 1e-8));
    assert_eq!(sol.cost, evaluate_objective(&f.net, &sol.dispatch.p_gen));
    let tol = 1e-6;
    for (g, &(lo, hi)) in bounds.p.iter().enumerate() {
        let p = sol.dispatch.p_gen[g];
        assert!(p >= lo - tol && p <= hi + tol, "unit {g}: {p} not in [{lo}, {hi}]");
    }
    for (i, &(lo, hi)) in bounds.v.iter().enumerate() {
        let v = sol.point.v[i];
        assert!(v >= lo - tol && v <= hi + tol, "bus {i}");
    }
    let currents = f.y.branch_currents(&sol.point.theta, &sol.point.v, &f.net);
    for (l, lim) in bounds.i_max.iter().enumerate() {
        if let Some(m) = lim {
            assert!(currents[l].0.max(currents[l].1) <= m + tol, "branch {l}");
        }
    }
}

#[test]
fn rts96_deterministic_matches_reference() {
    let f = common::rts96();
    let b = TightenedBounds::untightened(&f.net);
    let sol = solve_acopf(&f.net, &f.y, &b, None).unwrap();
    check_solution(&f, &b, &sol);
    let reference = reference_cost("rts96");
    assert!((sol.cost - reference).abs() <= 0.02 * reference);
    // commonly quoted optimum of this modified case
    assert!((sol.cost - 36_771.0).abs() <= 0.02 * 36_771.0, "{}", sol.cost);
}

#[test]
fn case118_deterministic_matches_reference() {
    let f = common::case118();
    let b = TightenedBounds::untightened(&f.net);
    let sol = solve_acopf(&f.net, &f.y, &b, None).unwrap();
    check_solution(&f, &b, &sol);
    let reference = reference_cost("case118");
    assert!((sol.cost - reference).abs() <= 0.02 * reference, "{}", sol.cost);
}

#[test]
fn tightening_never_lowers_cost() {
    let f = common::rts96();
    let b0 = TightenedBounds::untightened(&f.net);
    let s0 = solve_acopf(&f.net, &f.y, &b0, None).unwrap();
    let sens = compute_sensitivities(&f.net, &f.y, &s0.point, &f.model).unwrap();
    let m = analytical_margins(&f.net, &sens, &f.model).unwrap();
    let mut last = s0.cost;
    for s in [0.5, 1.0, 1.5] {
        let b = TightenedBounds::new(&f.net, &m.scaled(s)).unwrap();
        let sol = solve_acopf(&f.net, &f.y, &b, None).unwrap();
        check_solution(&f, &b, &sol);
        assert!(sol.cost >= last - 1e-6, "scale {s}: {} < {last}", sol.cost);
        last = sol.cost;
    }
}

#[test]
fn warm_start_reaches_same_optimum() {
    let f = common::rts96();
    let b = TightenedBounds::untightened(&f.net);
    let cold = solve_acopf(&f.net, &f.y, &b, None).unwrap();
    let warm = solve_acopf(&f.net, &f.y, &b, Some(&cold)).unwrap();
    assert!((cold.cost - warm.cost).abs() <= 1e-4 * cold.cost);
}

#[test]
fn over_tightened_bounds_are_rejected() {
    let f = common::rts96();
    let sol = solve_acopf(&f.net, &f.y, &TightenedBounds::untightened(&f.net), None).unwrap();
    let sens = compute_sensitivities(&f.net, &f.y, &sol.point, &f.model).unwrap();
    let m = analytical_margins(&f.net, &sens, &f.model).unwrap();
    assert!(matches!(
        TightenedBounds::new(&f.net, &m.scaled(100.0)),
        Err(ccopf::Error::InfeasibleBounds(_))
    ));
}
