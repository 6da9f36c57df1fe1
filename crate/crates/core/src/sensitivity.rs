//! Linear response of slack generation, reactive outputs, PQ voltages and
//! branch currents to the fluctuations ω, by the implicit function theorem
//! on the power-flow equations.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::admittance::AdmittanceMatrix;
use crate::error::{Error, Result};
use crate::network::{BusKind, NetworkCase};
use crate::powerflow::{power_flow_jacobian, OperatingPoint, PowerFlowSolver, Schedule};
use crate::sparse::LuFactorizer;
use crate::uncertainty::UncertaintyModel;

/// Below this current magnitude (p.u.) the gradient of |i| is replaced by a
/// directional derivative along the dominant axis of the response.
pub const CURRENT_GUARD: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityFactors {
    /// d(total generation at the slack bus)/dω_k. Contains the AGC share of
    /// the slack units as well as the loss response.
    pub gamma_p_slack: Vec<f64>,
    /// PV and slack generator buses, one row of `gamma_q` each.
    pub q_buses: Vec<usize>,
    pub gamma_q: Vec<Vec<f64>>,
    /// PQ buses, one row of `gamma_v` each.
    pub v_buses: Vec<usize>,
    pub gamma_v: Vec<Vec<f64>>,
    /// Current-limited branches; `gamma_i[l][end]` with end 0 = from, 1 = to.
    pub i_branches: Vec<usize>,
    pub gamma_i: Vec<[Vec<f64>; 2]>,
    /// End with the larger forecast current.
    pub monitored_end: Vec<usize>,
    pub alpha: Vec<f64>,
    pub gamma_ratio: Vec<f64>,
}

/// Per-bus change of the scheduled injections for a unit ω_k.
pub fn injection_perturbation(
    net: &NetworkCase,
    model: &UncertaintyModel,
    k: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if k >= model.n_sources() {
        return Err(Error::Domain(format!(
            "source {k} out of range ({} sources)",
            model.n_sources()
        )));
    }
    let n = net.n_bus();
    let mut dp = vec![0.0; n];
    let mut dq = vec![0.0; n];
    let bus = model.buses[k];
    dp[bus] += 1.0;
    for (g, unit) in net.gens.iter().enumerate() {
        dp[unit.bus] -= model.alpha[g];
    }
    if net.kind(bus) == BusKind::PQ {
        dq[bus] += model.gamma[k];
    }
    Ok((dp, dq))
}

/// Complex current at one branch end and its differential for `(dθ, dv)`.
fn current_and_differential(
    y: &AdmittanceMatrix,
    net: &NetworkCase,
    l: usize,
    end: usize,
    x: &OperatingPoint,
    dtheta: &[f64],
    dv: &[f64],
) -> (Complex64, Complex64) {
    let br = &net.branches[l];
    let ya = &y.branches[l];
    let (own, other, y_own, y_other) = if end == 0 {
        (br.from, br.to, ya.yff, ya.yft)
    } else {
        (br.to, br.from, ya.ytt, ya.ytf)
    };
    let volt = |i: usize| Complex64::from_polar(x.v[i], x.theta[i]);
    let dvolt = |i: usize| {
        Complex64::from_polar(1.0, x.theta[i]) * Complex64::new(dv[i], x.v[i] * dtheta[i])
    };
    (
        y_own * volt(own) + y_other * volt(other),
        y_own * dvolt(own) + y_other * dvolt(other),
    )
}

/// Sensitivity factors at a converged operating point.
pub fn compute_sensitivities(
    net: &NetworkCase,
    y: &AdmittanceMatrix,
    x: &OperatingPoint,
    model: &UncertaintyModel,
) -> Result<SensitivityFactors> {
    let n = net.n_bus();
    let m = model.n_sources();
    let jac = power_flow_jacobian(net, y, x);
    let index = &jac.index;
    let off = index.theta_buses.len();
    let rhs: Vec<Vec<f64>> = (0..m)
        .map(|k| {
            let (dp, dq) = injection_perturbation(net, model, k)?;
            Ok(index
                .theta_buses
                .iter()
                .map(|&j| dp[j])
                .chain(index.v_buses.iter().map(|&j| dq[j]))
                .collect())
        })
        .collect::<Result<_>>()?;
    let sol = LuFactorizer::new().factor(&jac.matrix)?.solve_many(&rhs)?;

    let mut dtheta = vec![vec![0.0; n]; m];
    let mut dv = vec![vec![0.0; n]; m];
    for k in 0..m {
        for (c, &b) in index.theta_buses.iter().enumerate() {
            dtheta[k][b] = sol[k][c];
        }
        for (c, &b) in index.v_buses.iter().enumerate() {
            dv[k][b] = sol[k][off + c];
        }
    }

    // differential of the computed injection at bus j
    let d_injection = |terms: &[crate::polar::PolarTerm], k: usize| -> f64 {
        terms
            .iter()
            .map(|t| {
                let (_, g) = t.gradient(&x.theta, &x.v);
                g[0] * dtheta[k][t.a] + g[1] * dtheta[k][t.b] + g[2] * dv[k][t.a] + g[3] * dv[k][t.b]
            })
            .sum()
    };
    let source_at = |k: usize, bus: usize| if model.buses[k] == bus { 1.0 } else { 0.0 };

    let slack = net.slack_bus;
    let gamma_p_slack = (0..m)
        .map(|k| d_injection(y.p_terms(slack), k) - source_at(k, slack))
        .collect();
    let q_buses = net.voltage_controlled_gen_buses();
    let gamma_q = q_buses
        .iter()
        .map(|&j| {
            (0..m)
                .map(|k| d_injection(y.q_terms(j), k) - model.gamma[k] * source_at(k, j))
                .collect()
        })
        .collect();
    let v_buses = net.pq_buses();
    let gamma_v = v_buses
        .iter()
        .map(|&j| (0..m).map(|k| dv[k][j]).collect())
        .collect();

    let i_branches = net.limited_branches();
    let mut gamma_i = Vec::with_capacity(i_branches.len());
    let mut monitored_end = Vec::with_capacity(i_branches.len());
    for &l in &i_branches {
        let mut rows: [Vec<f64>; 2] = [Vec::with_capacity(m), Vec::with_capacity(m)];
        let mut mags = [0.0; 2];
        for (end, row) in rows.iter_mut().enumerate() {
            let pairs: Vec<(Complex64, Complex64)> = (0..m)
                .map(|k| current_and_differential(y, net, l, end, x, &dtheta[k], &dv[k]))
                .collect();
            let current = pairs.first().map_or_else(
                || current_and_differential(y, net, l, end, x, &vec![0.0; n], &vec![0.0; n]).0,
                |p| p.0,
            );
            mags[end] = current.norm();
            let axis = if mags[end] >= CURRENT_GUARD {
                current / mags[end]
            } else {
                // dominant direction of the response
                let dom = pairs
                    .iter()
                    .map(|p| p.1)
                    .fold(Complex64::new(0.0, 0.0), |a, d| if d.norm() > a.norm() { d } else { a });
                if dom.norm() > 0.0 {
                    dom / dom.norm()
                } else {
                    Complex64::new(1.0, 0.0)
                }
            };
            row.extend(pairs.iter().map(|p| (axis.conj() * p.1).re));
        }
        monitored_end.push(if mags[1] > mags[0] { 1 } else { 0 });
        gamma_i.push(rows);
    }

    let factors = SensitivityFactors {
        gamma_p_slack,
        q_buses,
        gamma_q,
        v_buses,
        gamma_v,
        i_branches,
        gamma_i,
        monitored_end,
        alpha: model.alpha.clone(),
        gamma_ratio: model.gamma.clone(),
    };
    if !factors.all_finite() {
        return Err(Error::SingularJacobian);
    }
    Ok(factors)
}

impl SensitivityFactors {
    fn all_finite(&self) -> bool {
        let rows = self
            .gamma_q
            .iter()
            .chain(&self.gamma_v)
            .chain(self.gamma_i.iter().flatten());
        self.gamma_p_slack.iter().all(|v| v.is_finite())
            && rows.flatten().all(|v| v.is_finite())
    }

    pub fn n_sources(&self) -> usize {
        self.gamma_p_slack.len()
    }
}

/// One compared entry of the finite-difference check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdEntry {
    pub factor: String,
    pub row: usize,
    pub source: usize,
    pub analytical: f64,
    pub finite_difference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdReport {
    pub step: f64,
    /// Largest column-normalised relative error per factor
    /// (`‖fd − an‖∞ / max(‖fd‖∞, 1e-8)` over the rows of one column).
    pub max_rel_p: f64,
    pub max_rel_q: f64,
    pub max_rel_v: f64,
    pub max_rel_i: f64,
    pub passed: bool,
    pub entries: Vec<FdEntry>,
}

impl FdReport {
    pub fn max_rel(&self) -> f64 {
        self.max_rel_p.max(self.max_rel_q).max(self.max_rel_v).max(self.max_rel_i)
    }
}

/// Observable quantities in the layout of [`SensitivityFactors`].
struct Observables {
    p_slack: f64,
    q: Vec<f64>,
    v: Vec<f64>,
    i: Vec<[f64; 2]>,
}

fn observe(
    net: &NetworkCase,
    y: &AdmittanceMatrix,
    sens: &SensitivityFactors,
    x: &OperatingPoint,
) -> Observables {
    let cur = y.branch_currents(&x.theta, &x.v, net);
    Observables {
        p_slack: x.p_inj[net.slack_bus],
        q: sens.q_buses.iter().map(|&j| x.q_inj[j]).collect(),
        v: sens.v_buses.iter().map(|&j| x.v[j]).collect(),
        i: sens.i_branches.iter().map(|&l| [cur[l].0, cur[l].1]).collect(),
    }
}

/// Re-derives every Γ column from two power-flow solves at `±step` and
/// compares. Errors only if a perturbed power flow fails.
pub fn check_sensitivities_fd(
    net: &NetworkCase,
    y: &AdmittanceMatrix,
    x: &OperatingPoint,
    model: &UncertaintyModel,
    step: f64,
    tol: f64,
) -> Result<FdReport> {
    let sens = compute_sensitivities(net, y, x, model)?;
    let base = Schedule {
        p: x.p_inj.clone(),
        q: x.q_inj.clone(),
        v: x.v.clone(),
    };
    let mut pf = PowerFlowSolver::new(net);
    pf.tol = 1e-12;
    let mut report = FdReport {
        step,
        max_rel_p: 0.0,
        max_rel_q: 0.0,
        max_rel_v: 0.0,
        max_rel_i: 0.0,
        passed: true,
        entries: Vec::new(),
    };
    for k in 0..model.n_sources() {
        let (dp, dq) = injection_perturbation(net, model, k)?;
        let mut solve = |sign: f64| -> Result<Observables> {
            let mut s = base.clone();
            for j in 0..net.n_bus() {
                s.p[j] += sign * step * dp[j];
                s.q[j] += sign * step * dq[j];
            }
            let xp = pf.solve(net, y, &s, Some((&x.theta, &x.v)))?;
            Ok(observe(net, y, &sens, &xp))
        };
        let plus = solve(1.0)?;
        let minus = solve(-1.0)?;
        let d = |a: f64, b: f64| (a - b) / (2.0 * step);
        let bus_k = model.buses[k];
        let at = |j: usize| if bus_k == j { 1.0 } else { 0.0 };

        let mut column = |name: &str, pairs: Vec<(f64, f64)>, slot: &mut f64| {
            let scale = pairs.iter().fold(0.0f64, |m, p| m.max(p.1.abs())).max(1e-8);
            let err = pairs.iter().fold(0.0f64, |m, p| m.max((p.0 - p.1).abs()));
            *slot = slot.max(err / scale);
            for (row, (an, fd)) in pairs.into_iter().enumerate() {
                report.entries.push(FdEntry {
                    factor: name.to_string(),
                    row,
                    source: k,
                    analytical: an,
                    finite_difference: fd,
                });
            }
        };
        let mut slot = report.max_rel_p;
        column(
            "p_slack",
            vec![(sens.gamma_p_slack[k], d(plus.p_slack, minus.p_slack) - at(net.slack_bus))],
            &mut slot,
        );
        report.max_rel_p = slot;
        slot = report.max_rel_q;
        column(
            "q",
            sens.q_buses
                .iter()
                .enumerate()
                .map(|(r, &j)| {
                    (sens.gamma_q[r][k], d(plus.q[r], minus.q[r]) - model.gamma[k] * at(j))
                })
                .collect(),
            &mut slot,
        );
        report.max_rel_q = slot;
        slot = report.max_rel_v;
        column(
            "v",
            (0..sens.v_buses.len())
                .map(|r| (sens.gamma_v[r][k], d(plus.v[r], minus.v[r])))
                .collect(),
            &mut slot,
        );
        report.max_rel_v = slot;
        slot = report.max_rel_i;
        column(
            "i",
            (0..sens.i_branches.len())
                .flat_map(|r| {
                    let (p, m) = (plus.i[r], minus.i[r]);
                    [
                        (sens.gamma_i[r][0][k], d(p[0], m[0])),
                        (sens.gamma_i[r][1][k], d(p[1], m[1])),
                    ]
                })
                .collect(),
            &mut slot,
        );
        report.max_rel_i = slot;
    }
    report.passed = report.max_rel() <= tol;
    Ok(report)
}
