mod common;

use std::time::Instant;

use ccopf::admittance::build_admittance;
use ccopf::network::build_network;
use ccopf::powerflow::{mismatch, power_flow_jacobian, solve_power_flow, Schedule, PF_TOL};

fn stock(name: &str) -> (ccopf::network::NetworkCase, ccopf::admittance::AdmittanceMatrix) {
    let net = build_network(&common::raw(name)).unwrap();
    let y = build_admittance(&net).unwrap();
    (net, y)
}

fn warm_start(net: &ccopf::network::NetworkCase) -> (Vec<f64>, Vec<f64>) {
    (
        net.buses.iter().map(|b| b.theta_init).collect(),
        net.buses.iter().map(|b| b.v_init).collect(),
    )
}

#[test]
fn stock_cases_converge_tightly() {
    for name in ["case24_ieee_rts.m", "case118.m"] {
        let (net, y) = stock(name);
        let sched = Schedule::from_network(&net);
        let t = Instant::now();
        let x = solve_power_flow(&net, &y, &sched, None).unwrap();
        assert!(t.elapsed().as_secs_f64() < 1.0, "{name}");
        assert!(x.converged);
        assert!(x.max_mismatch <= PF_TOL, "{name}: {}", x.max_mismatch);
        let f = mismatch(&net, &y, &x.theta, &x.v, &sched);
        assert!(f.iter().all(|r| r.abs() <= 1e-8));
    }
}

#[test]
fn flat_and_warm_starts_agree() {
    for name in ["case24_ieee_rts.m", "case118.m"] {
        let (net, y) = stock(name);
        let sched = Schedule::from_network(&net);
        let (t0, v0) = warm_start(&net);
        let a = solve_power_flow(&net, &y, &sched, None).unwrap();
        let b = solve_power_flow(&net, &y, &sched, Some((&t0, &v0))).unwrap();
        for i in 0..net.n_bus() {
            assert!((a.theta[i] - b.theta[i]).abs() < 1e-7, "{name} bus {i}");
            assert!((a.v[i] - b.v[i]).abs() < 1e-7, "{name} bus {i}");
        }
    }
}

#[test]
fn jacobian_matches_central_differences() {
    for name in ["case24_ieee_rts.m", "case118.m"] {
        let (net, y) = stock(name);
        let sched = Schedule::from_network(&net);
        let x = solve_power_flow(&net, &y, &sched, None).unwrap();
        let jac = power_flow_jacobian(&net, &y, &x);
        let dense = jac.matrix.to_dense();
        let idx = &jac.index;
        let h = 1e-6;
        let scale = dense.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut worst = 0.0f64;
        for c in 0..idx.dim() {
            let perturb = |s: f64| {
                let (mut t, mut v) = (x.theta.clone(), x.v.clone());
                if c < idx.theta_buses.len() {
                    t[idx.theta_buses[c]] += s;
                } else {
                    v[idx.v_buses[c - idx.theta_buses.len()]] += s;
                }
                mismatch(&net, &y, &t, &v, &sched)
            };
            let (fp, fm) = (perturb(h), perturb(-h));
            for r in 0..idx.dim() {
                let fd = (fp[r] - fm[r]) / (2.0 * h);
                worst = worst.max((fd - dense[r][c]).abs() / scale);
            }
        }
        assert!(worst <= 1e-5, "{name}: {worst:.3e}");
    }
}

#[test]
fn modified_cases_still_solve() {
    for f in [common::rts96(), common::case118()] {
        let x = solve_power_flow(&f.net, &f.y, &Schedule::from_network(&f.net), None).unwrap();
        assert!(x.max_mismatch <= PF_TOL);
    }
}
