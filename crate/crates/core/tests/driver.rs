mod common;

use ccopf::driver::{compute_eta, solve_cc_acopf, ConvergenceCriteria, Engine};
use ccopf::margins::{analytical_margins, UncertaintyMargins};
use ccopf::opf::{solve_acopf, TightenedBounds};
use ccopf::report::write_reproducible_report;
use ccopf::sensitivity::compute_sensitivities;

fn deterministic_cost(f: &common::Fixture) -> f64 {
    solve_acopf(&f.net, &f.y, &TightenedBounds::untightened(&f.net), None)
        .unwrap()
        .cost
}

fn all_zero(m: &UncertaintyMargins) -> bool {
    m.lambda_p
        .iter()
        .chain(&m.lambda_q)
        .chain(&m.lambda_v)
        .all(|p| p.upper == 0.0 && p.lower == 0.0)
        && m.lambda_i.iter().all(|&x| x == 0.0)
}

#[test]
fn zero_uncertainty_is_a_fixed_point() {
    let f = common::rts96();
    let model = f.model.scaled(0.0);
    let rep = solve_cc_acopf(&f.net, &f.y, &model, &Engine::Analytical, &Default::default()).unwrap();
    assert!(rep.converged);
    assert_eq!(rep.iteration, 1);
    assert_eq!(rep.history.len(), 1);
    assert!(all_zero(&rep.margins));
    assert_eq!(rep.cost(), deterministic_cost(&f));
}

#[test]
fn single_iteration_budget_is_reported_unconverged() {
    let f = common::rts96();
    let crit = ConvergenceCriteria {
        max_outer_iters: 1,
        ..Default::default()
    };
    let rep = solve_cc_acopf(&f.net, &f.y, &f.model, &Engine::Analytical, &crit).unwrap();
    assert!(!rep.converged);
    assert_eq!(rep.iteration, 1);
    assert_eq!(rep.cost(), deterministic_cost(&f));
    assert!(!all_zero(&rep.margins));
}

fn check_convergence(f: &common::Fixture) {
    let rep = solve_cc_acopf(&f.net, &f.y, &f.model, &Engine::Analytical, &Default::default()).unwrap();
    assert!(rep.converged);
    assert!(rep.history.len() <= 8, "{} iterations", rep.history.len());
    assert_eq!(rep.iteration, rep.history.len());
    assert_eq!(rep.history[0].cost, deterministic_cost(f));
    let last = rep.cost();
    assert!(last > rep.history[0].cost);
    let second = rep.history[1].cost;
    assert!((second - last).abs() <= 0.005 * last, "{second} vs {last}");
    let crit = ConvergenceCriteria::default();
    assert!(rep.history.last().unwrap().eta.within(&crit));
}

#[test]
fn rts96_converges_quickly() {
    check_convergence(&common::rts96());
}

#[test]
fn case118_converges_quickly() {
    check_convergence(&common::case118());
}

#[test]
fn monte_carlo_report_independent_of_thread_count() {
    let f = common::rts96();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let rep = solve_cc_acopf(
                &f.net,
                &f.y,
                &f.model,
                &Engine::MonteCarlo { n_samples: 1000 },
                &Default::default(),
            )
            .unwrap();
            write_reproducible_report(&rep).unwrap()
        })
    };
    let one = run(1);
    assert_eq!(one, run(4));
    assert!(!one.contains("timings"));
}

#[test]
fn eta_ignores_entry_order() {
    let f = common::rts96();
    let sol = solve_acopf(&f.net, &f.y, &TightenedBounds::untightened(&f.net), None).unwrap();
    let sens = compute_sensitivities(&f.net, &f.y, &sol.point, &f.model).unwrap();
    let a = analytical_margins(&f.net, &sens, &f.model).unwrap();
    let b = a.scaled(1.3);
    let e = compute_eta(&a, &b, f.net.base_mva).unwrap();
    let mut ra = a.clone();
    let mut rb = b.clone();
    ra.lambda_p.reverse();
    rb.lambda_p.reverse();
    ra.lambda_v.rotate_left(5);
    rb.lambda_v.rotate_left(5);
    ra.lambda_i.reverse();
    rb.lambda_i.reverse();
    assert_eq!(compute_eta(&ra, &rb, f.net.base_mva).unwrap(), e);
    assert!(e.p > 0.0 && e.v > 0.0);
}
