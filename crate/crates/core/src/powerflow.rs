//! Newton–Raphson AC power flow in polar coordinates.
//!
//! Unknowns are the angles of all non-slack buses followed by the voltage
//! magnitudes of the PQ buses; equations are the active balances at non-slack
//! buses followed by the reactive balances at PQ buses, in ascending bus order.

use serde::{Deserialize, Serialize};

use crate::admittance::AdmittanceMatrix;
use crate::error::{Error, Result};
use crate::network::{BusKind, NetworkCase};
use crate::polar::{PolarTerm, THETA_A, THETA_B, V_A, V_B};
use crate::sparse::{LuFactorizer, Triplets};

pub const PF_TOL: f64 = 1e-8;
pub const PF_MAX_ITER: usize = 30;

/// Net injection targets, indexed by bus. Entries that the bus type does not
/// fix (e.g. `p` at the slack, `q` at PV buses) are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub v: Vec<f64>,
}

impl Schedule {
    /// Stored generation minus load, with voltage set-points from the units.
    pub fn from_network(net: &NetworkCase) -> Self {
        let n = net.n_bus();
        let mut p: Vec<f64> = net.buses.iter().map(|b| -b.p_load).collect();
        let mut q: Vec<f64> = net.buses.iter().map(|b| -b.q_load).collect();
        for g in &net.gens {
            p[g.bus] += g.p_g;
            q[g.bus] += g.q_g;
        }
        let v = (0..n).map(|i| net.buses[i].v_init).collect();
        Self { p, q, v }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub theta: Vec<f64>,
    pub v: Vec<f64>,
    /// Net injections at every bus, including the back-substituted slack
    /// active power and PV/slack reactive power.
    pub p_inj: Vec<f64>,
    pub q_inj: Vec<f64>,
    pub converged: bool,
    pub max_mismatch: f64,
    pub iterations: usize,
}

/// Row/column bookkeeping of the reduced power-flow system.
#[derive(Debug, Clone)]
pub struct PfIndex {
    /// Non-slack buses; position = angle column = active-balance row.
    pub theta_buses: Vec<usize>,
    /// PQ buses; position + `theta_buses.len()` = magnitude column = reactive row.
    pub v_buses: Vec<usize>,
    theta_col: Vec<Option<usize>>,
    v_col: Vec<Option<usize>>,
}

impl PfIndex {
    pub fn new(net: &NetworkCase) -> Self {
        let n = net.n_bus();
        let theta_buses: Vec<usize> = (0..n).filter(|&i| i != net.slack_bus).collect();
        let v_buses = net.pq_buses();
        let mut theta_col = vec![None; n];
        let mut v_col = vec![None; n];
        for (c, &i) in theta_buses.iter().enumerate() {
            theta_col[i] = Some(c);
        }
        for (c, &i) in v_buses.iter().enumerate() {
            v_col[i] = Some(theta_buses.len() + c);
        }
        Self {
            theta_buses,
            v_buses,
            theta_col,
            v_col,
        }
    }

    pub fn dim(&self) -> usize {
        self.theta_buses.len() + self.v_buses.len()
    }

    pub fn theta_col(&self, bus: usize) -> Option<usize> {
        self.theta_col[bus]
    }

    pub fn v_col(&self, bus: usize) -> Option<usize> {
        self.v_col[bus]
    }

    /// Columns of the local variables `(θ_a, θ_b, v_a, v_b)` of a term.
    fn term_cols(&self, t: &PolarTerm) -> [Option<usize>; 4] {
        let mut cols = [None; 4];
        cols[THETA_A] = self.theta_col[t.a];
        cols[THETA_B] = self.theta_col[t.b];
        cols[V_A] = self.v_col[t.a];
        cols[V_B] = self.v_col[t.b];
        cols
    }

    /// Gradient of a sum of terms in reduced-variable coordinates, as sparse
    /// `(column, value)` pairs (duplicates possible).
    pub fn sum_gradient(&self, terms: &[PolarTerm], theta: &[f64], v: &[f64]) -> Vec<(usize, f64)> {
        let mut out = Vec::with_capacity(terms.len() * 4);
        for t in terms {
            let (_, g) = t.gradient(theta, v);
            for (local, col) in self.term_cols(t).into_iter().enumerate() {
                if let Some(c) = col {
                    out.push((c, g[local]));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct PFJacobian {
    pub index: PfIndex,
    pub matrix: Triplets,
}

/// Analytical Jacobian of [`mismatch`] with respect to the reduced unknowns.
pub fn power_flow_jacobian(net: &NetworkCase, y: &AdmittanceMatrix, x: &OperatingPoint) -> PFJacobian {
    let index = PfIndex::new(net);
    let matrix = jacobian_at(&index, y, &x.theta, &x.v);
    PFJacobian { index, matrix }
}

fn jacobian_at(index: &PfIndex, y: &AdmittanceMatrix, theta: &[f64], v: &[f64]) -> Triplets {
    let mut m = Triplets::new(index.dim());
    for (r, &j) in index.theta_buses.iter().enumerate() {
        for (c, val) in index.sum_gradient(y.p_terms(j), theta, v) {
            m.push(r, c, val);
        }
    }
    let off = index.theta_buses.len();
    for (r, &j) in index.v_buses.iter().enumerate() {
        for (c, val) in index.sum_gradient(y.q_terms(j), theta, v) {
            m.push(off + r, c, val);
        }
    }
    m
}

/// Power-flow residuals (computed minus scheduled), in equation order.
pub fn mismatch(
    net: &NetworkCase,
    y: &AdmittanceMatrix,
    theta: &[f64],
    v: &[f64],
    schedule: &Schedule,
) -> Vec<f64> {
    mismatch_indexed(&PfIndex::new(net), y, theta, v, schedule)
}

fn mismatch_indexed(
    index: &PfIndex,
    y: &AdmittanceMatrix,
    theta: &[f64],
    v: &[f64],
    schedule: &Schedule,
) -> Vec<f64> {
    let (p, q) = y.injections(theta, v);
    index
        .theta_buses
        .iter()
        .map(|&j| p[j] - schedule.p[j])
        .chain(index.v_buses.iter().map(|&j| q[j] - schedule.q[j]))
        .collect()
}

fn inf_norm(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Reusable Newton solver; holds the factorization workspace of one network.
pub struct PowerFlowSolver {
    index: PfIndex,
    lu: LuFactorizer,
    pub tol: f64,
    pub max_iter: usize,
    /// Infinity norm of the mismatch before each Newton step of the last solve.
    pub history: Vec<f64>,
}

impl PowerFlowSolver {
    pub fn new(net: &NetworkCase) -> Self {
        Self {
            index: PfIndex::new(net),
            lu: LuFactorizer::new(),
            tol: PF_TOL,
            max_iter: PF_MAX_ITER,
            history: Vec::new(),
        }
    }

    pub fn index(&self) -> &PfIndex {
        &self.index
    }

    /// Solves from a flat start, or from `warm = (θ, v)` when given. Voltage
    /// magnitudes at PV and slack buses always come from the schedule.
    pub fn solve(
        &mut self,
        net: &NetworkCase,
        y: &AdmittanceMatrix,
        schedule: &Schedule,
        warm: Option<(&[f64], &[f64])>,
    ) -> Result<OperatingPoint> {
        let n = net.n_bus();
        let (mut theta, mut v) = match warm {
            Some((t, m)) => (t.to_vec(), m.to_vec()),
            None => (vec![0.0; n], vec![1.0; n]),
        };
        theta[net.slack_bus] = 0.0;
        for i in 0..n {
            if net.kind(i) != BusKind::PQ {
                v[i] = schedule.v[i];
            }
        }
        self.history.clear();
        let off = self.index.theta_buses.len();
        let mut f = mismatch_indexed(&self.index, y, &theta, &v, schedule);
        let mut norm = inf_norm(&f);
        let mut iterations = 0;
        while norm > self.tol || !norm.is_finite() {
            if iterations == self.max_iter || !norm.is_finite() {
                return Err(Error::PowerFlowDiverged {
                    iterations,
                    max_mismatch: norm,
                });
            }
            self.history.push(norm);
            iterations += 1;
            let jac = jacobian_at(&self.index, y, &theta, &v);
            let dx = self.lu.factor(&jac)?.solve(&f)?;
            let mut step = 1.0;
            loop {
                let mut t_new = theta.clone();
                let mut v_new = v.clone();
                for (c, &bus) in self.index.theta_buses.iter().enumerate() {
                    t_new[bus] -= step * dx[c];
                }
                for (c, &bus) in self.index.v_buses.iter().enumerate() {
                    v_new[bus] -= step * dx[off + c];
                }
                let f_new = mismatch_indexed(&self.index, y, &t_new, &v_new, schedule);
                let n_new = inf_norm(&f_new);
                let positive = v_new.iter().all(|&m| m > 0.0);
                if (n_new <= norm && positive) || step < 1e-3 {
                    if !positive {
                        return Err(Error::PowerFlowDiverged {
                            iterations,
                            max_mismatch: n_new,
                        });
                    }
                    theta = t_new;
                    v = v_new;
                    f = f_new;
                    norm = n_new;
                    break;
                }
                step *= 0.5;
            }
        }
        let (p_inj, q_inj) = y.injections(&theta, &v);
        Ok(OperatingPoint {
            theta,
            v,
            p_inj,
            q_inj,
            converged: true,
            max_mismatch: norm,
            iterations,
        })
    }
}

/// One-shot power flow; see [`PowerFlowSolver::solve`].
pub fn solve_power_flow(
    net: &NetworkCase,
    y: &AdmittanceMatrix,
    schedule: &Schedule,
    warm: Option<(&[f64], &[f64])>,
) -> Result<OperatingPoint> {
    PowerFlowSolver::new(net).solve(net, y, schedule, warm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::admittance::build_admittance;
    use crate::testutil::two_bus_network;

    fn two_bus_schedule() -> Schedule {
        Schedule {
            p: vec![0.0, -0.1],
            q: vec![0.0, 0.0],
            v: vec![1.0, 1.0],
        }
    }

    #[test]
    fn two_bus_lossless_solution() {
        let net = two_bus_network(0.0, 0.1, 0.0);
        let y = build_admittance(&net).unwrap();
        let x = solve_power_flow(&net, &y, &two_bus_schedule(), None).unwrap();
        // P2 = 10 v2 sin(θ2) = -0.1 and Q2 = 10 v2² - 10 v2 cos θ2 = 0
        let (t2, v2) = (x.theta[1], x.v[1]);
        assert!((10.0 * v2 * t2.sin() + 0.1).abs() < 1e-10);
        assert!((10.0 * v2 * v2 - 10.0 * v2 * t2.cos()).abs() < 1e-10);
        // closed form: v2 = cos θ2 and sin 2θ2 = -0.02
        assert!((t2 + 0.02f64.asin() / 2.0).abs() < 1e-10);
        assert!((v2 - t2.cos()).abs() < 1e-10);
        assert!((t2 + 0.0100).abs() < 5e-5 && (v2 - 0.99995).abs() < 5e-6);
        assert!(x.max_mismatch <= PF_TOL);
        assert!((x.p_inj[0] - 0.1).abs() < 1e-9);
    }

    #[test]
    fn flat_fixed_point() {
        let net = two_bus_network(0.01, 0.1, 0.0);
        let y = build_admittance(&net).unwrap();
        let sched = Schedule {
            p: vec![0.0; 2],
            q: vec![0.0; 2],
            v: vec![1.0; 2],
        };
        let x = solve_power_flow(&net, &y, &sched, None).unwrap();
        assert!(x.iterations <= 1);
        assert_eq!(x.theta, vec![0.0, 0.0]);
        assert_eq!(x.v, vec![1.0, 1.0]);
        assert_eq!(x.max_mismatch, 0.0);
    }

    #[test]
    fn flat_jacobian_entry() {
        let net = two_bus_network(0.0, 0.1, 0.0);
        let y = build_admittance(&net).unwrap();
        let x = solve_power_flow(&net, &y, &Schedule { p: vec![0.0; 2], q: vec![0.0; 2], v: vec![1.0; 2] }, None)
            .unwrap();
        let j = power_flow_jacobian(&net, &y, &x).matrix.to_dense();
        assert!((j[0][0] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn shunt_residual_on_isolated_quantities() {
        let mut net = two_bus_network(0.0, 0.1, 0.0);
        net.buses[1].bs = 0.2;
        let y = build_admittance(&net).unwrap();
        let sched = Schedule { p: vec![0.0; 2], q: vec![0.0; 2], v: vec![1.0; 2] };
        let f = mismatch(&net, &y, &[0.0, 0.0], &[1.0, 1.1], &sched);
        // Q2 = -B22 v2² - B21 v2 v1 with B22 = -10 + 0.2, B21 = 10
        let expected = -(-10.0 + 0.2) * 1.21 - 10.0 * 1.1;
        assert!((f[1] - expected).abs() < 1e-12);
    }

    #[test]
    fn diverges_on_impossible_load() {
        let net = two_bus_network(0.0, 0.1, 0.0);
        let y = build_admittance(&net).unwrap();
        let sched = Schedule { p: vec![0.0, -20.0], q: vec![0.0, 0.0], v: vec![1.0, 1.0] };
        assert!(solve_power_flow(&net, &y, &sched, None).is_err());
    }
}
