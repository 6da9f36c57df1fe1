mod common;

use ccopf::margins::{
    analytical_margins, monte_carlo_margins, scenario_margins, upper_quantile_index,
    MarginMethod, QuantileModel, UncertaintyMargins,
};
use ccopf::network::BusKind;
use ccopf::opf::{solve_acopf, OPFSolution, TightenedBounds};
use ccopf::sensitivity::compute_sensitivities;
use ccopf::validation::{sample_omega, SampleKind};
use proptest::prelude::*;

fn deterministic(f: &common::Fixture) -> OPFSolution {
    solve_acopf(&f.net, &f.y, &TightenedBounds::untightened(&f.net), None).unwrap()
}

/// Every margin entry paired with its category and index.
fn entries(m: &UncertaintyMargins) -> Vec<(&'static str, usize, f64, f64)> {
    let mut out = Vec::new();
    out.extend(m.lambda_p.iter().enumerate().map(|(i, p)| ("p", i, p.upper, p.lower)));
    out.extend(m.lambda_q.iter().enumerate().map(|(i, p)| ("q", i, p.upper, p.lower)));
    out.extend(m.lambda_v.iter().enumerate().map(|(i, p)| ("v", i, p.upper, p.lower)));
    out.extend(m.lambda_i.iter().enumerate().map(|(i, &x)| ("i", i, x, 0.0)));
    out
}

#[test]
fn analytical_structure() {
    let f = common::rts96();
    let sol = deterministic(&f);
    let sens = compute_sensitivities(&f.net, &f.y, &sol.point, &f.model).unwrap();
    let m = analytical_margins(&f.net, &sens, &f.model).unwrap();
    assert_eq!(m.method, MarginMethod::Analytical);
    for (_, _, up, lo) in entries(&m) {
        assert!(up >= 0.0 && lo >= 0.0);
    }
    for p in m.lambda_p.iter().chain(&m.lambda_q).chain(&m.lambda_v) {
        assert_eq!(p.upper, p.lower);
    }
    for (i, p) in m.lambda_v.iter().enumerate() {
        if f.net.kind(i) != BusKind::PQ {
            assert_eq!(p.upper, 0.0);
        }
    }
    for (k, &b) in f.net.gen_buses.iter().enumerate() {
        if f.net.kind(b) == BusKind::PQ {
            assert_eq!(m.lambda_q[k].upper, 0.0);
        }
    }
    // non-slack units: α·Φ⁻¹(0.99)·σ_Ω
    let mult = QuantileModel::Gaussian.multiplier(0.01).unwrap();
    let so = f.model.sigma_omega();
    for (g, unit) in f.net.gens.iter().enumerate() {
        if unit.bus != f.net.slack_bus {
            let expect = f.model.alpha[g] * mult * so;
            assert!((m.lambda_p[g].upper - expect).abs() < 1e-12);
        }
    }
}

#[test]
fn sample_engines_on_shared_draws() {
    let f = common::rts96();
    let sol = deterministic(&f);
    let sens = compute_sensitivities(&f.net, &f.y, &sol.point, &f.model).unwrap();
    let an = analytical_margins(&f.net, &sens, &f.model).unwrap();
    let s = sample_omega(&f.model.sigma, 1000, SampleKind::Gaussian, 11).unwrap();
    let mc = monte_carlo_margins(&f.net, &f.y, &sol.point, &sol.dispatch, &f.model, &s).unwrap();
    let sc = scenario_margins(&f.net, &f.y, &sol.point, &sol.dispatch, &f.model, &s).unwrap();
    for ((c, i, su, sl), (_, _, mu, ml)) in entries(&sc).into_iter().zip(entries(&mc)) {
        assert!(su >= mu && sl >= ml, "{c}{i}");
    }
    // analytical vs Monte-Carlo on the exposed constraints
    let floor = 1e-3;
    let mut worst = 0.0f64;
    for ((c, i, au, al), (_, _, mu, ml)) in entries(&an).into_iter().zip(entries(&mc)) {
        for (a, m) in [(au, mu), (al, ml)] {
            if c != "i" || a > 0.0 {
                if m.max(a) > floor {
                    let rel = (a - m).abs() / m.max(floor);
                    worst = worst.max(rel);
                    assert!(rel <= 0.2, "{c}{i}: analytical {a:.5} vs mc {m:.5}");
                }
            }
        }
    }
    assert!(worst > 0.0);
}

#[test]
fn zero_or_single_scenario_gives_zero_margins() {
    let f = common::rts96();
    let sol = deterministic(&f);
    let mut s = sample_omega(&f.model.sigma, 1, SampleKind::Gaussian, 1).unwrap();
    s.omega[0].iter_mut().for_each(|w| *w = 0.0);
    let sc = scenario_margins(&f.net, &f.y, &sol.point, &sol.dispatch, &f.model, &s).unwrap();
    assert!(entries(&sc).iter().all(|e| e.2.abs() < 1e-9 && e.3.abs() < 1e-9));
    let mut s = sample_omega(&f.model.sigma, 1000, SampleKind::Gaussian, 1).unwrap();
    s.omega.iter_mut().flatten().for_each(|w| *w = 0.0);
    let mc = monte_carlo_margins(&f.net, &f.y, &sol.point, &sol.dispatch, &f.model, &s).unwrap();
    assert!(entries(&mc).iter().all(|e| e.2.abs() < 1e-9 && e.3.abs() < 1e-9));
}

#[test]
fn monte_carlo_needs_enough_samples() {
    let f = common::rts96();
    let sol = deterministic(&f);
    let s = sample_omega(&f.model.sigma, 999, SampleKind::Gaussian, 1).unwrap();
    assert!(monte_carlo_margins(&f.net, &f.y, &sol.point, &sol.dispatch, &f.model, &s).is_err());
}

#[test]
fn monte_carlo_converges_on_linear_response() {
    // Units off the slack bus respond exactly linearly: p − α·Ω.
    let f = common::rts96();
    let model = f.model.with_epsilon(0.05);
    let sol = deterministic(&f);
    let sens = compute_sensitivities(&f.net, &f.y, &sol.point, &model).unwrap();
    let an = analytical_margins(&f.net, &sens, &model).unwrap();
    let s = sample_omega(&model.sigma, 20_000, SampleKind::Gaussian, 5).unwrap();
    let mc = monte_carlo_margins(&f.net, &f.y, &sol.point, &sol.dispatch, &model, &s).unwrap();
    for (g, unit) in f.net.gens.iter().enumerate() {
        if unit.bus != f.net.slack_bus && model.alpha[g] > 0.0 {
            let a = an.lambda_p[g].upper;
            for m in [mc.lambda_p[g].upper, mc.lambda_p[g].lower] {
                assert!((m - a).abs() <= 0.05 * a, "unit {g}: {m} vs {a}");
            }
        }
    }
}

#[test]
fn chebyshev_dominates_gaussian_on_grid() {
    for k in 1..=50 {
        let eps = 0.5 * k as f64 / 51.0;
        let g = QuantileModel::Gaussian.multiplier(eps).unwrap();
        let c = QuantileModel::Chebyshev.multiplier(eps).unwrap();
        assert!(c >= g && g > 0.0, "ε = {eps}");
    }
}

#[test]
fn chebyshev_margins_dominate_gaussian_margins() {
    let f = common::rts96();
    let sol = deterministic(&f);
    let sens = compute_sensitivities(&f.net, &f.y, &sol.point, &f.model).unwrap();
    let g = analytical_margins(&f.net, &sens, &f.model).unwrap();
    let mut cm = f.model.clone();
    cm.quantile = QuantileModel::Chebyshev;
    let c = analytical_margins(&f.net, &sens, &cm).unwrap();
    for (a, b) in entries(&c).into_iter().zip(entries(&g)) {
        assert!(a.2 >= b.2 && a.3 >= b.3);
    }
}

/// The k-th largest of distinct values, found by repeated removal of the maximum.
fn kth_largest(values: &[f64], k: usize) -> f64 {
    let mut v = values.to_vec();
    for _ in 1..k {
        let (i, _) = v
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        v.swap_remove(i);
    }
    v.into_iter().fold(f64::NEG_INFINITY, f64::max)
}

#[test]
fn thousand_samples_use_tenth_largest() {
    let v: Vec<f64> = (0..1000).map(|i| ((i * 7919) % 1000) as f64).collect();
    let mut sorted = v.clone();
    sorted.sort_by(f64::total_cmp);
    assert_eq!(sorted[upper_quantile_index(1000, 0.01)], kth_largest(&v, 10));
}

proptest! {
    #[test]
    fn quantile_index_matches_sort_oracle(
        n in 1usize..400,
        eps in 0.005..0.45f64,
        seed in 0u64..1000,
    ) {
        let v: Vec<f64> = (0..n).map(|i| ((i as u64 * 2654435761 + seed) % 100_003) as f64 + i as f64 * 1e-6).collect();
        let mut sorted = v.clone();
        sorted.sort_by(f64::total_cmp);
        let k = ((eps * n as f64 + 1e-9).floor() as usize).max(1);
        prop_assert_eq!(sorted[upper_quantile_index(n, eps)], kth_largest(&v, k));
    }

    #[test]
    fn analytical_margins_are_homogeneous(s in 0.0..3.0f64) {
        let f = common::rts96();
        let sol = deterministic(&f);
        let base = analytical_margins(
            &f.net,
            &compute_sensitivities(&f.net, &f.y, &sol.point, &f.model).unwrap(),
            &f.model,
        ).unwrap();
        let scaled_model = f.model.scaled(s);
        let scaled = analytical_margins(
            &f.net,
            &compute_sensitivities(&f.net, &f.y, &sol.point, &scaled_model).unwrap(),
            &scaled_model,
        ).unwrap();
        for (a, b) in entries(&scaled).into_iter().zip(entries(&base.scaled(s))) {
            prop_assert!((a.2 - b.2).abs() <= 1e-10 && (a.3 - b.3).abs() <= 1e-10);
        }
    }
}
