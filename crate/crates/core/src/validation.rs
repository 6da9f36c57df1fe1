//! Monte-Carlo assessment of a dispatch: sampling ω, applying the system
//! response, and counting limit violations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::admittance::AdmittanceMatrix;
use crate::error::{Error, Result};
use crate::network::{BusKind, NetworkCase};
use crate::opf::Dispatch;
use crate::powerflow::{OperatingPoint, PowerFlowSolver, Schedule};
use crate::uncertainty::{psd_sqrt, UncertaintyModel};

/// Samples whose power flow diverges may make up at most this fraction.
pub const MAX_DIVERGED_FRACTION: f64 = 0.01;
/// A value counts as violating only beyond this distance from its limit (p.u.).
pub const VIOLATION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleKind {
    Gaussian,
    /// Colored Laplace noise with unit-variance marginals before coloring.
    LaplaceSurrogate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    /// One draw of ω (p.u.) per row.
    pub omega: Vec<Vec<f64>>,
    pub kind: SampleKind,
    pub seed: u64,
    pub sigma: Vec<Vec<f64>>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.omega.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega.is_empty()
    }

    /// Mean over columns of the sample excess kurtosis; 0 for fewer than two draws.
    pub fn excess_kurtosis(&self) -> f64 {
        let m = self.omega.first().map_or(0, |r| r.len());
        if self.len() < 2 || m == 0 {
            return 0.0;
        }
        let k: f64 = (0..m)
            .map(|c| {
                let col: Vec<f64> = self.omega.iter().map(|r| r[c]).collect();
                moments(&col).2
            })
            .filter(|k| k.is_finite())
            .sum();
        k / m as f64
    }

    /// The first `n` draws.
    pub fn truncated(&self, n: usize) -> Self {
        let mut out = self.clone();
        out.omega.truncate(n);
        out
    }
}

/// Mean, variance and excess kurtosis of a column.
fn moments(col: &[f64]) -> (f64, f64, f64) {
    let n = col.len() as f64;
    let mean = col.iter().sum::<f64>() / n;
    let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m4 = col.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    (mean, var, m4 / (var * var) - 3.0)
}

/// Draws `n` samples of ω with covariance `sigma`. The stream depends only on
/// `(sigma, n, kind, seed)`.
pub fn sample_omega(sigma: &[Vec<f64>], n: usize, kind: SampleKind, seed: u64) -> Result<SampleSet> {
    let root = psd_sqrt(sigma)?;
    let m = sigma.len();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    let mut z = vec![0.0; m];
    let omega = (0..n)
        .map(|_| {
            for zi in z.iter_mut() {
                *zi = match kind {
                    SampleKind::Gaussian => rng.sample(StandardNormal),
                    SampleKind::LaplaceSurrogate => loop {
                        let u: f64 = rng.random::<f64>() - 0.5;
                        let tail = 1.0 - 2.0 * u.abs();
                        if tail > 0.0 {
                            break -scale * u.signum() * tail.ln();
                        }
                    },
                };
            }
            (0..m)
                .map(|i| (0..m).map(|k| root[i][k] * z[k]).sum())
                .collect()
        })
        .collect();
    Ok(SampleSet {
        omega,
        kind,
        seed,
        sigma: sigma.to_vec(),
    })
}

/// Power-flow schedule after the fluctuation `omega` and the AGC response.
pub fn apply_response(
    net: &NetworkCase,
    dispatch: &Dispatch,
    model: &UncertaintyModel,
    omega: &[f64],
) -> Schedule {
    let mut s = dispatch.schedule(net);
    let total: f64 = omega.iter().sum();
    for (k, &w) in omega.iter().enumerate() {
        let bus = model.buses[k];
        s.p[bus] += w;
        if net.kind(bus) == BusKind::PQ {
            s.q[bus] += model.gamma[k] * w;
        }
    }
    for (g, unit) in net.gens.iter().enumerate() {
        s.p[unit.bus] -= model.alpha[g] * total;
    }
    s
}

/// Which quantities are monitored, fixed per network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintLayout {
    /// PV and slack generator buses.
    pub q_buses: Vec<usize>,
    pub v_buses: Vec<usize>,
    pub i_branches: Vec<usize>,
}

impl ConstraintLayout {
    pub fn new(net: &NetworkCase) -> Self {
        Self {
            q_buses: net.voltage_controlled_gen_buses(),
            v_buses: net.pq_buses(),
            i_branches: net.limited_branches(),
        }
    }
}

/// Monitored quantities at one operating point, in [`ConstraintLayout`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintValues {
    /// Active output per unit.
    pub p: Vec<f64>,
    /// Reactive generation per monitored bus.
    pub q: Vec<f64>,
    pub v: Vec<f64>,
    /// Larger of the two end currents per monitored branch.
    pub i: Vec<f64>,
}

/// Active output of every unit: units off the slack bus follow the AGC rule;
/// the slack units share the remaining slack-bus generation in proportion to α.
pub fn unit_outputs(
    net: &NetworkCase,
    dispatch: &Dispatch,
    model: &UncertaintyModel,
    omega: &[f64],
    x: &OperatingPoint,
) -> Vec<f64> {
    let total: f64 = omega.iter().sum();
    let slack = net.slack_bus;
    let mut p: Vec<f64> = (0..net.gens.len())
        .map(|g| dispatch.p_gen[g] - model.alpha[g] * total)
        .collect();
    let at_slack: f64 = omega
        .iter()
        .zip(&model.buses)
        .filter(|(_, &b)| b == slack)
        .map(|(w, _)| w)
        .sum();
    let slack_gen = x.p_inj[slack] + net.buses[slack].p_load - at_slack;
    let units = &net.bus_gens[slack];
    let residual = slack_gen - units.iter().map(|&g| p[g]).sum::<f64>();
    let alpha_slack: f64 = units.iter().map(|&g| model.alpha[g]).sum();
    for &g in units {
        let share = if alpha_slack > 0.0 {
            model.alpha[g] / alpha_slack
        } else {
            1.0 / units.len() as f64
        };
        p[g] += share * residual;
    }
    p
}

pub fn constraint_values(
    net: &NetworkCase,
    dispatch: &Dispatch,
    model: &UncertaintyModel,
    omega: &[f64],
    x: &OperatingPoint,
    y: &AdmittanceMatrix,
) -> ConstraintValues {
    let layout = ConstraintLayout::new(net);
    let currents = y.branch_currents(&x.theta, &x.v, net);
    let q = layout
        .q_buses
        .iter()
        .map(|&j| {
            let load_change: f64 = omega
                .iter()
                .enumerate()
                .filter(|(k, _)| model.buses[*k] == j)
                .map(|(k, w)| model.gamma[k] * w)
                .sum();
            x.q_inj[j] + net.buses[j].q_load - load_change
        })
        .collect();
    ConstraintValues {
        p: unit_outputs(net, dispatch, model, omega, x),
        q,
        v: layout.v_buses.iter().map(|&j| x.v[j]).collect(),
        i: layout
            .i_branches
            .iter()
            .map(|&l| currents[l].0.max(currents[l].1))
            .collect(),
    }
}

/// Solves the power flow of every sample in parallel; results are in sample order.
fn solve_samples(
    net: &NetworkCase,
    y: &AdmittanceMatrix,
    x: &OperatingPoint,
    dispatch: &Dispatch,
    model: &UncertaintyModel,
    samples: &SampleSet,
) -> Vec<Result<ConstraintValues>> {
    samples
        .omega
        .par_iter()
        .map_init(
            || PowerFlowSolver::new(net),
            |pf, omega| {
                let sched = apply_response(net, dispatch, model, omega);
                let xs = pf.solve(net, y, &sched, Some((&x.theta, &x.v)))?;
                Ok(constraint_values(net, dispatch, model, omega, &xs, y))
            },
        )
        .collect()
}

/// Constraint values at every sample; the first diverged sample aborts.
pub fn sample_values(
    net: &NetworkCase,
    y: &AdmittanceMatrix,
    x: &OperatingPoint,
    dispatch: &Dispatch,
    model: &UncertaintyModel,
    samples: &SampleSet,
) -> Result<Vec<ConstraintValues>> {
    solve_samples(net, y, x, dispatch, model, samples)
        .into_iter()
        .enumerate()
        .map(|(sample, r)| {
            r.map_err(|e| Error::SampleFailed {
                sample,
                source: Box::new(e),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    P,
    Q,
    V,
    I,
}

impl Category {
    pub const ALL: [Category; 4] = [Category::P, Category::Q, Category::V, Category::I];

    pub fn name(&self) -> &'static str {
        match self {
            Category::P => "p",
            Category::Q => "q",
            Category::V => "v",
            Category::I => "i",
        }
    }
}

/// Original operating limits, in [`ConstraintLayout`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Limits {
    pub p: Vec<(f64, f64)>,
    pub q: Vec<(f64, f64)>,
    pub v: Vec<(f64, f64)>,
    pub i: Vec<f64>,
}

impl Limits {
    pub fn from_network(net: &NetworkCase) -> Self {
        let layout = ConstraintLayout::new(net);
        Self {
            p: net.gens.iter().map(|g| (g.p_min, g.p_max)).collect(),
            q: layout.q_buses.iter().map(|&b| net.bus_q_limits(b)).collect(),
            v: layout
                .v_buses
                .iter()
                .map(|&b| (net.buses[b].v_min, net.buses[b].v_max))
                .collect(),
            i: layout
                .i_branches
                .iter()
                .map(|&l| net.branches[l].i_max.unwrap_or(f64::INFINITY))
                .collect(),
        }
    }

    pub fn unbounded(net: &NetworkCase) -> Self {
        let mut l = Self::from_network(net);
        let inf = (f64::NEG_INFINITY, f64::INFINITY);
        l.p.iter_mut().for_each(|b| *b = inf);
        l.q.iter_mut().for_each(|b| *b = inf);
        l.v.iter_mut().for_each(|b| *b = inf);
        l.i.iter_mut().for_each(|b| *b = f64::INFINITY);
        l
    }

    fn overshoots(&self, c: &ConstraintValues) -> Vec<f64> {
        let band = |x: f64, (lo, hi): (f64, f64)| (lo - x).max(x - hi).max(0.0);
        c.p.iter()
            .zip(&self.p)
            .map(|(&x, &b)| band(x, b))
            .chain(c.q.iter().zip(&self.q).map(|(&x, &b)| band(x, b)))
            .chain(c.v.iter().zip(&self.v).map(|(&x, &b)| band(x, b)))
            .chain(c.i.iter().zip(&self.i).map(|(&x, &hi)| (x - hi).max(0.0)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintId {
    pub category: Category,
    /// Unit index for P, bus index for Q and V, branch index for I.
    pub index: usize,
}

/// Constraint order used by [`ViolationStats`].
pub fn constraint_ids(net: &NetworkCase) -> Vec<ConstraintId> {
    let layout = ConstraintLayout::new(net);
    let id = |category, index| ConstraintId { category, index };
    (0..net.gens.len())
        .map(|g| id(Category::P, g))
        .chain(layout.q_buses.iter().map(|&b| id(Category::Q, b)))
        .chain(layout.v_buses.iter().map(|&b| id(Category::V, b)))
        .chain(layout.i_branches.iter().map(|&l| id(Category::I, l)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationStats {
    pub constraints: Vec<ConstraintId>,
    /// Fraction of converged samples violating each constraint.
    pub eps_emp: Vec<f64>,
    /// Mean overshoot per constraint (p.u.), zero for satisfied samples.
    pub expected_size: Vec<f64>,
    /// Fraction of converged samples with at least one violation.
    pub eps_joint: f64,
    pub n_samples: usize,
    pub n_diverged: usize,
}

impl ViolationStats {
    pub fn max_eps_emp(&self) -> f64 {
        self.eps_emp.iter().fold(0.0, |m, &e| m.max(e))
    }

    fn max_where(&self, values: &[f64], cat: Category) -> f64 {
        self.constraints
            .iter()
            .zip(values)
            .filter(|(c, _)| c.category == cat)
            .fold(0.0, |m, (_, &v)| m.max(v))
    }

    pub fn max_eps_emp_in(&self, cat: Category) -> f64 {
        self.max_where(&self.eps_emp, cat)
    }

    pub fn max_expected_size_in(&self, cat: Category) -> f64 {
        self.max_where(&self.expected_size, cat)
    }
}

/// Empirical violation probabilities of a dispatch against `limits`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_violations(
    net: &NetworkCase,
    y: &AdmittanceMatrix,
    x: &OperatingPoint,
    dispatch: &Dispatch,
    model: &UncertaintyModel,
    samples: &SampleSet,
    limits: &Limits,
) -> Result<ViolationStats> {
    let constraints = constraint_ids(net);
    let nc = constraints.len();
    let mut count = vec![0usize; nc];
    let mut size = vec![0.0; nc];
    let mut joint = 0usize;
    let mut diverged = 0usize;
    for r in solve_samples(net, y, x, dispatch, model, samples) {
        let Ok(values) = r else {
            diverged += 1;
            continue;
        };
        let over = limits.overshoots(&values);
        let mut any = false;
        for (c, &o) in over.iter().enumerate() {
            if o > VIOLATION_TOL {
                count[c] += 1;
                size[c] += o;
                any = true;
            }
        }
        joint += usize::from(any);
    }
    let total = samples.len();
    if total > 0 && diverged as f64 > MAX_DIVERGED_FRACTION * total as f64 {
        return Err(Error::TooManyDiverged { diverged, total });
    }
    let ok = (total - diverged).max(1) as f64;
    Ok(ViolationStats {
        constraints,
        eps_emp: count.iter().map(|&c| c as f64 / ok).collect(),
        expected_size: size.iter().map(|&s| s / ok).collect(),
        eps_joint: joint as f64 / ok,
        n_samples: total,
        n_diverged: diverged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_sample_set() {
        let s = sample_omega(&[vec![1.0]], 0, SampleKind::Gaussian, 1).unwrap();
        assert!(s.is_empty());
    }

    #[test]
    fn gaussian_variance_and_laplace_kurtosis() {
        let eye = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let g = sample_omega(&eye, 100_000, SampleKind::Gaussian, 3).unwrap();
        let l = sample_omega(&eye, 100_000, SampleKind::LaplaceSurrogate, 3).unwrap();
        for c in 0..2 {
            let col: Vec<f64> = g.omega.iter().map(|r| r[c]).collect();
            let (mean, var, _) = moments(&col);
            assert!(mean.abs() < 3.0 / (100_000f64).sqrt());
            assert!((0.95..=1.05).contains(&var), "{var}");
            let col: Vec<f64> = l.omega.iter().map(|r| r[c]).collect();
            let (_, var, kurt) = moments(&col);
            assert!((0.95..=1.05).contains(&var), "{var}");
            assert!((2.0..=4.0).contains(&kurt), "{kurt}");
        }
    }

    #[test]
    fn sampling_is_reproducible() {
        let s = vec![vec![0.04, 0.01], vec![0.01, 0.09]];
        let a = sample_omega(&s, 50, SampleKind::Gaussian, 9).unwrap();
        let b = sample_omega(&s, 50, SampleKind::Gaussian, 9).unwrap();
        assert_eq!(a, b);
        let c = sample_omega(&s, 50, SampleKind::Gaussian, 10).unwrap();
        assert_ne!(a.omega, c.omega);
    }

    #[test]
    fn non_psd_sigma_rejected() {
        let s = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
        assert!(sample_omega(&s, 5, SampleKind::Gaussian, 0).is_err());
    }
}
