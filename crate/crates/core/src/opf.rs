//! Deterministic AC OPF with tightened bounds.
//!
//! Variables: `θ` and `v` at every bus, `p` per unit, and one reactive output
//! per generator bus. Equalities: active and reactive balance at every bus and
//! `θ_slack = 0`. Inequalities: variable bounds and squared current magnitudes
//! at both ends of each limited branch.

use serde::{Deserialize, Serialize};

use crate::admittance::AdmittanceMatrix;
use crate::error::{Error, Result};
use crate::ipm::{self, Evaluation, IpmOptions, KktResiduals, NlpProblem, SparseRow};
pub use crate::ipm::SolverStatus;
use crate::margins::UncertaintyMargins;
use crate::network::{BusKind, NetworkCase};
use crate::polar::PolarTerm;
use crate::powerflow::{OperatingPoint, PowerFlowSolver, Schedule};
use crate::sparse::Triplets;
use crate::validation::Category;

/// Bounds closer than this are treated as a fixed variable.
const FIXED_TOL: f64 = 1e-10;
/// Objective scaling inside the interior-point iteration.
pub const COST_MULT: f64 = 1e-4;

/// Generator set-points: everything needed to rebuild a power-flow schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dispatch {
    /// Active output per unit (p.u.).
    pub p_gen: Vec<f64>,
    /// Total reactive generation per bus (p.u.), zero where there is no unit.
    pub q_bus: Vec<f64>,
    /// Voltage magnitude per bus; set-points at PV and slack buses.
    pub v: Vec<f64>,
}

impl Dispatch {
    pub fn from_network(net: &NetworkCase) -> Self {
        let mut q_bus = vec![0.0; net.n_bus()];
        for g in &net.gens {
            q_bus[g.bus] += g.q_g;
        }
        Self {
            p_gen: net.gens.iter().map(|g| g.p_g).collect(),
            q_bus,
            v: net.buses.iter().map(|b| b.v_init).collect(),
        }
    }

    pub fn schedule(&self, net: &NetworkCase) -> Schedule {
        let mut p: Vec<f64> = net.buses.iter().map(|b| -b.p_load).collect();
        for (g, unit) in net.gens.iter().enumerate() {
            p[unit.bus] += self.p_gen[g];
        }
        let q = net
            .buses
            .iter()
            .zip(&self.q_bus)
            .map(|(b, q)| q - b.q_load)
            .collect();
        Schedule {
            p,
            q,
            v: self.v.clone(),
        }
    }
}

/// Cost in $/h of active outputs given in p.u.
pub fn evaluate_objective(net: &NetworkCase, p_gen: &[f64]) -> f64 {
    net.gens
        .iter()
        .zip(p_gen)
        .map(|(g, &p)| {
            let mw = p * net.base_mva;
            g.c2 * mw * mw + g.c1 * mw + g.c0
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TightenedBounds {
    /// Per unit.
    pub p: Vec<(f64, f64)>,
    /// Per generator bus, aligned with [`NetworkCase::gen_buses`].
    pub q: Vec<(f64, f64)>,
    /// Per bus.
    pub v: Vec<(f64, f64)>,
    /// Per branch.
    pub i_max: Vec<Option<f64>>,
}

impl TightenedBounds {
    pub fn untightened(net: &NetworkCase) -> Self {
        Self {
            p: net.gens.iter().map(|g| (g.p_min, g.p_max)).collect(),
            q: net.gen_buses.iter().map(|&b| net.bus_q_limits(b)).collect(),
            v: net.buses.iter().map(|b| (b.v_min, b.v_max)).collect(),
            i_max: net.branches.iter().map(|b| b.i_max).collect(),
        }
    }

    /// Original limits shrunk by the margins. Voltage margins only act at PQ
    /// buses and reactive margins only at PV and slack buses.
    pub fn new(net: &NetworkCase, m: &UncertaintyMargins) -> Result<Self> {
        let mut b = Self::untightened(net);
        for (g, r) in b.p.iter_mut().enumerate() {
            r.0 += m.lambda_p[g].lower;
            r.1 -= m.lambda_p[g].upper;
        }
        for (k, &bus) in net.gen_buses.iter().enumerate() {
            if net.kind(bus) != BusKind::PQ {
                b.q[k].0 += m.lambda_q[k].lower;
                b.q[k].1 -= m.lambda_q[k].upper;
            }
        }
        for (i, r) in b.v.iter_mut().enumerate() {
            if net.kind(i) == BusKind::PQ {
                r.0 += m.lambda_v[i].lower;
                r.1 -= m.lambda_v[i].upper;
            }
        }
        for (l, lim) in b.i_max.iter_mut().enumerate() {
            if let Some(x) = lim {
                *x -= m.lambda_i[l];
            }
        }
        b.check(net)?;
        Ok(b)
    }

    pub fn check(&self, net: &NetworkCase) -> Result<()> {
        let bad = |what: String, (lo, hi): (f64, f64)| -> Result<()> {
            if lo > hi + FIXED_TOL {
                Err(Error::InfeasibleBounds(format!("{what}: lower {lo:.6} > upper {hi:.6}")))
            } else {
                Ok(())
            }
        };
        for (g, &r) in self.p.iter().enumerate() {
            bad(format!("p of unit {g}"), r)?;
        }
        for (k, &r) in self.q.iter().enumerate() {
            bad(format!("q at bus {}", net.buses[net.gen_buses[k]].id), r)?;
        }
        for (i, &r) in self.v.iter().enumerate() {
            bad(format!("v at bus {}", net.buses[i].id), r)?;
        }
        for (l, lim) in self.i_max.iter().enumerate() {
            if let Some(x) = lim {
                if *x <= 0.0 {
                    return Err(Error::InfeasibleBounds(format!(
                        "current limit of branch {l} tightened to {x:.6}"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Lower,
    Upper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Binding {
    pub category: Category,
    /// Unit index for P, generator-bus position for Q, bus for V, branch for I.
    pub index: usize,
    pub side: Side,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OPFSolution {
    pub point: OperatingPoint,
    pub dispatch: Dispatch,
    /// $/h.
    pub cost: f64,
    pub status: SolverStatus,
    pub iterations: usize,
    pub residuals: KktResiduals,
    pub binding: Vec<Binding>,
}

struct Layout {
    n: usize,
    ng: usize,
    nq: usize,
    /// Generator-bus position per bus.
    q_pos: Vec<Option<usize>>,
}

impl Layout {
    fn theta(&self, i: usize) -> usize {
        i
    }
    fn v(&self, i: usize) -> usize {
        self.n + i
    }
    fn p(&self, g: usize) -> usize {
        2 * self.n + g
    }
    fn q(&self, k: usize) -> usize {
        2 * self.n + self.ng + k
    }
    fn dim(&self) -> usize {
        2 * self.n + self.ng + self.nq
    }
}

enum Bound {
    Upper(usize, f64),
    Lower(usize, f64),
}

struct AcOpfProblem<'a> {
    net: &'a NetworkCase,
    y: &'a AdmittanceMatrix,
    lay: Layout,
    /// Variables pinned by equal bounds.
    fixed: Vec<(usize, f64)>,
    bounds: Vec<Bound>,
    /// `(terms of |I|², limit²)`.
    currents: Vec<(&'a [PolarTerm], f64)>,
}

impl<'a> AcOpfProblem<'a> {
    fn new(net: &'a NetworkCase, y: &'a AdmittanceMatrix, tb: &TightenedBounds) -> Self {
        let n = net.n_bus();
        let mut q_pos = vec![None; n];
        for (k, &b) in net.gen_buses.iter().enumerate() {
            q_pos[b] = Some(k);
        }
        let lay = Layout {
            n,
            ng: net.gens.len(),
            nq: net.gen_buses.len(),
            q_pos,
        };
        let mut fixed = Vec::new();
        let mut bounds = Vec::new();
        let mut add = |var: usize, (lo, hi): (f64, f64)| {
            if (hi - lo).abs() <= FIXED_TOL {
                fixed.push((var, 0.5 * (lo + hi)));
                return;
            }
            if lo.is_finite() {
                bounds.push(Bound::Lower(var, lo));
            }
            if hi.is_finite() {
                bounds.push(Bound::Upper(var, hi));
            }
        };
        for i in 0..n {
            add(lay.v(i), tb.v[i]);
        }
        for g in 0..lay.ng {
            add(lay.p(g), tb.p[g]);
        }
        for k in 0..lay.nq {
            add(lay.q(k), tb.q[k]);
        }
        let mut currents = Vec::new();
        for (l, lim) in tb.i_max.iter().enumerate() {
            if let Some(x) = lim {
                for end in 0..2 {
                    currents.push((y.current_sq_terms(l, end), x * x));
                }
            }
        }
        Self {
            net,
            y,
            lay,
            fixed,
            bounds,
            currents,
        }
    }

    fn split<'x>(&self, x: &'x [f64]) -> (&'x [f64], &'x [f64]) {
        (&x[..self.lay.n], &x[self.lay.n..2 * self.lay.n])
    }

    fn term_vars(&self, t: &PolarTerm) -> [usize; 4] {
        [self.lay.theta(t.a), self.lay.theta(t.b), self.lay.v(t.a), self.lay.v(t.b)]
    }

    fn sum_terms(&self, terms: &[PolarTerm], theta: &[f64], v: &[f64]) -> (f64, SparseRow) {
        let mut val = 0.0;
        let mut row = Vec::with_capacity(terms.len() * 4);
        for t in terms {
            let (f, g) = t.gradient(theta, v);
            val += f;
            for (local, var) in self.term_vars(t).into_iter().enumerate() {
                if t.a != t.b || local == crate::polar::V_A {
                    row.push((var, g[local]));
                }
            }
        }
        (val, row)
    }

    fn push_term_hessians(&self, terms: &[PolarTerm], w: f64, theta: &[f64], v: &[f64], out: &mut Triplets) {
        for t in terms {
            let d = t.derivatives(theta, v);
            let vars = self.term_vars(t);
            for a in 0..4 {
                for b in 0..4 {
                    out.push(vars[a], vars[b], w * d.hess[a][b]);
                }
            }
        }
    }
}

impl NlpProblem for AcOpfProblem<'_> {
    fn dim(&self) -> usize {
        self.lay.dim()
    }

    fn evaluate(&self, x: &[f64]) -> Evaluation {
        let net = self.net;
        let lay = &self.lay;
        let (theta, v) = self.split(x);
        let mut ev = Evaluation {
            df: vec![0.0; lay.dim()],
            ..Default::default()
        };
        for (g, unit) in net.gens.iter().enumerate() {
            let mw = x[lay.p(g)] * net.base_mva;
            ev.f += unit.c2 * mw * mw + unit.c1 * mw + unit.c0;
            ev.df[lay.p(g)] = (2.0 * unit.c2 * mw + unit.c1) * net.base_mva;
        }
        for j in 0..lay.n {
            let (val, mut row) = self.sum_terms(self.y.p_terms(j), theta, v);
            let mut gen = 0.0;
            for &g in &net.bus_gens[j] {
                gen += x[lay.p(g)];
                row.push((lay.p(g), -1.0));
            }
            ev.g.push(val - gen + net.buses[j].p_load);
            ev.dg.push(row);
        }
        for j in 0..lay.n {
            let (val, mut row) = self.sum_terms(self.y.q_terms(j), theta, v);
            let mut gen = 0.0;
            if let Some(k) = lay.q_pos[j] {
                gen = x[lay.q(k)];
                row.push((lay.q(k), -1.0));
            }
            ev.g.push(val - gen + net.buses[j].q_load);
            ev.dg.push(row);
        }
        ev.g.push(x[lay.theta(net.slack_bus)]);
        ev.dg.push(vec![(lay.theta(net.slack_bus), 1.0)]);
        for &(var, val) in &self.fixed {
            ev.g.push(x[var] - val);
            ev.dg.push(vec![(var, 1.0)]);
        }
        for b in &self.bounds {
            match *b {
                Bound::Upper(var, u) => {
                    ev.h.push(x[var] - u);
                    ev.dh.push(vec![(var, 1.0)]);
                }
                Bound::Lower(var, l) => {
                    ev.h.push(l - x[var]);
                    ev.dh.push(vec![(var, -1.0)]);
                }
            }
        }
        for &(terms, lim_sq) in &self.currents {
            let (val, row) = self.sum_terms(terms, theta, v);
            ev.h.push(val - lim_sq);
            ev.dh.push(row);
        }
        ev
    }

    fn hessian(&self, x: &[f64], lam: &[f64], mu: &[f64], obj: f64, out: &mut Triplets) {
        let net = self.net;
        let lay = &self.lay;
        let (theta, v) = self.split(x);
        for (g, unit) in net.gens.iter().enumerate() {
            out.push(lay.p(g), lay.p(g), obj * 2.0 * unit.c2 * net.base_mva * net.base_mva);
        }
        for j in 0..lay.n {
            self.push_term_hessians(self.y.p_terms(j), lam[j], theta, v, out);
            self.push_term_hessians(self.y.q_terms(j), lam[lay.n + j], theta, v, out);
        }
        let off = self.bounds.len();
        for (c, &(terms, _)) in self.currents.iter().enumerate() {
            self.push_term_hessians(terms, mu[off + c], theta, v, out);
        }
    }
}

fn midpoint((lo, hi): (f64, f64)) -> f64 {
    let lo = if lo.is_finite() { lo } else { -1e10 };
    let hi = if hi.is_finite() { hi } else { 1e10 };
    0.5 * (lo + hi)
}

/// Options used by [`solve_acopf`].
pub fn default_options() -> IpmOptions {
    IpmOptions {
        cost_mult: COST_MULT,
        ..IpmOptions::default()
    }
}

/// Solves the OPF; `warm` supplies a primal starting point (duals are reset).
pub fn solve_acopf(
    net: &NetworkCase,
    y: &AdmittanceMatrix,
    bounds: &TightenedBounds,
    warm: Option<&OPFSolution>,
) -> Result<OPFSolution> {
    solve_acopf_with(net, y, bounds, warm, &default_options())
}

pub fn solve_acopf_with(
    net: &NetworkCase,
    y: &AdmittanceMatrix,
    bounds: &TightenedBounds,
    warm: Option<&OPFSolution>,
    opts: &IpmOptions,
) -> Result<OPFSolution> {
    bounds.check(net)?;
    let problem = AcOpfProblem::new(net, y, bounds);
    let lay = &problem.lay;
    let mut x0 = vec![0.0; lay.dim()];
    match warm {
        Some(w) => {
            for i in 0..lay.n {
                x0[lay.theta(i)] = w.point.theta[i];
                x0[lay.v(i)] = w.point.v[i];
            }
            for g in 0..lay.ng {
                x0[lay.p(g)] = w.dispatch.p_gen[g];
            }
            for (k, &b) in net.gen_buses.iter().enumerate() {
                x0[lay.q(k)] = w.dispatch.q_bus[b];
            }
        }
        None => {
            let ref_angle = net.buses[net.slack_bus].theta_init;
            for i in 0..lay.n {
                x0[lay.theta(i)] = ref_angle;
                x0[lay.v(i)] = midpoint(bounds.v[i]);
            }
            for g in 0..lay.ng {
                x0[lay.p(g)] = midpoint(bounds.p[g]);
            }
            for k in 0..lay.nq {
                x0[lay.q(k)] = midpoint(bounds.q[k]);
            }
        }
    }

    let mut res = ipm::solve(&problem, &x0, opts);
    if res.status != SolverStatus::Converged && opts.predictor_corrector {
        log::debug!("predictor-corrector run ended with {}; retrying plain steps", res.status);
        let plain = IpmOptions {
            predictor_corrector: false,
            ..*opts
        };
        let retry = ipm::solve(&problem, &x0, &plain);
        if retry.status == SolverStatus::Converged {
            res = retry;
        }
    }
    if res.status != SolverStatus::Converged {
        return Err(Error::OpfFailed {
            status: res.status,
            iterations: res.iterations,
            detail: format!(
                "feascond {:.2e}, gradcond {:.2e}, compcond {:.2e}",
                res.residuals.feascond, res.residuals.gradcond, res.residuals.compcond
            ),
        });
    }

    let x = &res.x;
    let mut dispatch = Dispatch {
        p_gen: (0..lay.ng).map(|g| x[lay.p(g)]).collect(),
        q_bus: vec![0.0; lay.n],
        v: (0..lay.n).map(|i| x[lay.v(i)]).collect(),
    };
    for (k, &b) in net.gen_buses.iter().enumerate() {
        dispatch.q_bus[b] = x[lay.q(k)];
    }
    let theta: Vec<f64> = (0..lay.n).map(|i| x[lay.theta(i)]).collect();
    let point = polish(net, y, &mut dispatch, &theta)?;

    let mut binding = Vec::new();
    let near = |a: f64, b: f64| (a - b).abs() < 1e-5;
    for (g, &(lo, hi)) in bounds.p.iter().enumerate() {
        let p = dispatch.p_gen[g];
        if near(p, hi) {
            binding.push(Binding { category: Category::P, index: g, side: Side::Upper });
        } else if near(p, lo) {
            binding.push(Binding { category: Category::P, index: g, side: Side::Lower });
        }
    }
    for (k, &(lo, hi)) in bounds.q.iter().enumerate() {
        let q = dispatch.q_bus[net.gen_buses[k]];
        if near(q, hi) {
            binding.push(Binding { category: Category::Q, index: k, side: Side::Upper });
        } else if near(q, lo) {
            binding.push(Binding { category: Category::Q, index: k, side: Side::Lower });
        }
    }
    for (i, &(lo, hi)) in bounds.v.iter().enumerate() {
        if near(point.v[i], hi) {
            binding.push(Binding { category: Category::V, index: i, side: Side::Upper });
        } else if near(point.v[i], lo) {
            binding.push(Binding { category: Category::V, index: i, side: Side::Lower });
        }
    }
    let currents = y.branch_currents(&point.theta, &point.v, net);
    for (l, lim) in bounds.i_max.iter().enumerate() {
        if let Some(m) = lim {
            if near(currents[l].0.max(currents[l].1), *m) {
                binding.push(Binding { category: Category::I, index: l, side: Side::Upper });
            }
        }
    }

    Ok(OPFSolution {
        cost: evaluate_objective(net, &dispatch.p_gen),
        point,
        dispatch,
        status: res.status,
        iterations: res.iterations,
        residuals: res.residuals,
        binding,
    })
}

/// Re-solves the power flow at the dispatch so the reported point satisfies
/// the power-flow tolerance; slack and PV reactive outputs are updated.
fn polish(
    net: &NetworkCase,
    y: &AdmittanceMatrix,
    dispatch: &mut Dispatch,
    theta: &[f64],
) -> Result<OperatingPoint> {
    let sched = dispatch.schedule(net);
    let x = PowerFlowSolver::new(net).solve(net, y, &sched, Some((theta, &dispatch.v)))?;
    let slack = net.slack_bus;
    let units = &net.bus_gens[slack];
    let slack_gen = x.p_inj[slack] + net.buses[slack].p_load;
    let residual = slack_gen - units.iter().map(|&g| dispatch.p_gen[g]).sum::<f64>();
    let room: Vec<f64> = units
        .iter()
        .map(|&g| (net.gens[g].p_max - net.gens[g].p_min).max(0.0))
        .collect();
    let total: f64 = room.iter().sum();
    for (u, &g) in units.iter().enumerate() {
        let share = if total > 0.0 { room[u] / total } else { 1.0 / units.len() as f64 };
        dispatch.p_gen[g] += share * residual;
    }
    for &b in &net.gen_buses {
        if net.kind(b) != BusKind::PQ {
            dispatch.q_bus[b] = x.q_inj[b] + net.buses[b].q_load;
        }
    }
    dispatch.v = x.v.clone();
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::admittance::build_admittance;
    use crate::testutil;

    #[test]
    fn objective_is_polynomial() {
        let mut net = testutil::two_bus_network(0.0, 0.1, 0.0);
        net.base_mva = 1.0;
        net.gens[0].c2 = 0.5;
        net.gens[0].c1 = 3.0;
        net.gens[0].c0 = 7.0;
        assert_eq!(evaluate_objective(&net, &[2.0]), 15.0);
        assert_eq!(evaluate_objective(&net, &[0.0]), 7.0);
    }

    #[test]
    fn single_bus_single_point() {
        let mut b = testutil::bus(1, BusKind::ThetaV);
        b.p_load = 1.0;
        let mut g = testutil::unit(0, 2.0);
        g.c2 = 1.0;
        g.c1 = 10.0;
        let net = NetworkCase::from_parts(1.0, vec![b], vec![], vec![g]).unwrap();
        let y = build_admittance(&net).unwrap();
        let sol = solve_acopf(&net, &y, &TightenedBounds::untightened(&net), None).unwrap();
        assert!((sol.dispatch.p_gen[0] - 1.0).abs() < 1e-8);
        assert!((sol.cost - 11.0).abs() < 1e-6);
    }

    #[test]
    fn inverted_bounds_rejected_before_solving() {
        let net = testutil::two_bus_network(0.0, 0.1, 0.0);
        let y = build_admittance(&net).unwrap();
        let mut tb = TightenedBounds::untightened(&net);
        tb.p[0] = (0.5, 0.2);
        assert!(matches!(solve_acopf(&net, &y, &tb, None), Err(Error::InfeasibleBounds(_))));
    }
}
