//! Iterative chance-constrained AC OPF: deterministic solves alternate with
//! margin updates at the new operating point until the margins settle.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::admittance::AdmittanceMatrix;
use crate::error::{Error, Result};
use crate::margins::{
    analytical_margins, monte_carlo_margins, scenario_dimension, scenario_margins,
    scenario_sample_count, MarginMethod, Pair, UncertaintyMargins, SCENARIO_BETA,
};
use crate::network::NetworkCase;
use crate::opf::{solve_acopf, OPFSolution, TightenedBounds};
use crate::sensitivity::compute_sensitivities;
use crate::uncertainty::UncertaintyModel;
use crate::validation::{
    evaluate_violations, sample_omega, Category, Limits, SampleKind, SampleSet,
};

pub use crate::uncertainty::participation_factors;

/// Stopping thresholds. Powers in MVA, voltage and current in p.u.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceCriteria {
    pub eta_hat_p: f64,
    pub eta_hat_q: f64,
    pub eta_hat_v: f64,
    pub eta_hat_i: f64,
    pub max_outer_iters: usize,
}

impl Default for ConvergenceCriteria {
    fn default() -> Self {
        Self {
            eta_hat_p: 1e-3,
            eta_hat_q: 1e-3,
            eta_hat_v: 1e-5,
            eta_hat_i: 1e-3,
            max_outer_iters: 20,
        }
    }
}

impl ConvergenceCriteria {
    pub fn validate(&self) -> Result<()> {
        let all = [self.eta_hat_p, self.eta_hat_q, self.eta_hat_v, self.eta_hat_i];
        if all.iter().any(|&x| !(x > 0.0)) {
            return Err(Error::Domain("every η̂ must be positive".into()));
        }
        if self.max_outer_iters == 0 {
            return Err(Error::Domain("max_outer_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// Largest change of the margins between two iterations, per category.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Eta {
    /// MVA.
    pub p: f64,
    /// MVA.
    pub q: f64,
    /// p.u.
    pub v: f64,
    /// p.u.
    pub i: f64,
}

impl Eta {
    pub fn within(&self, crit: &ConvergenceCriteria) -> bool {
        self.p <= crit.eta_hat_p
            && self.q <= crit.eta_hat_q
            && self.v <= crit.eta_hat_v
            && self.i <= crit.eta_hat_i
    }

    /// Largest ratio η/η̂ over the categories.
    pub fn normalized_max(&self, crit: &ConvergenceCriteria) -> f64 {
        (self.p / crit.eta_hat_p)
            .max(self.q / crit.eta_hat_q)
            .max(self.v / crit.eta_hat_v)
            .max(self.i / crit.eta_hat_i)
    }
}

fn max_pair_change(a: &[Pair], b: &[Pair]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x.upper - y.upper).abs().max((x.lower - y.lower).abs()))
        .fold(0.0, f64::max)
}

/// Per-category maximum of |λ^κ − λ^{κ−1}|; active and reactive changes are
/// returned in MVA.
pub fn compute_eta(
    prev: &UncertaintyMargins,
    curr: &UncertaintyMargins,
    base_mva: f64,
) -> Result<Eta> {
    if prev.lambda_p.len() != curr.lambda_p.len()
        || prev.lambda_q.len() != curr.lambda_q.len()
        || prev.lambda_v.len() != curr.lambda_v.len()
        || prev.lambda_i.len() != curr.lambda_i.len()
    {
        return Err(Error::Domain("margin index sets differ".into()));
    }
    Ok(Eta {
        p: max_pair_change(&prev.lambda_p, &curr.lambda_p) * base_mva,
        q: max_pair_change(&prev.lambda_q, &curr.lambda_q) * base_mva,
        v: max_pair_change(&prev.lambda_v, &curr.lambda_v),
        i: prev
            .lambda_i
            .iter()
            .zip(&curr.lambda_i)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    Analytical,
    /// Empirical quantiles of `n_samples` Gaussian draws.
    MonteCarlo { n_samples: usize },
    /// Extremes over N_S draws; `n_x` defaults to [`scenario_dimension`].
    Scenario { beta: f64, n_x: Option<usize> },
}

impl Engine {
    pub fn scenario() -> Self {
        Engine::Scenario {
            beta: SCENARIO_BETA,
            n_x: None,
        }
    }

    pub fn method(&self) -> MarginMethod {
        match self {
            Engine::Analytical => MarginMethod::Analytical,
            Engine::MonteCarlo { .. } => MarginMethod::MonteCarlo,
            Engine::Scenario { .. } => MarginMethod::Scenario,
        }
    }

    /// Draws used by the sample-based engines, fixed over all iterations.
    pub fn samples(&self, net: &NetworkCase, model: &UncertaintyModel) -> Result<Option<SampleSet>> {
        let n = match *self {
            Engine::Analytical => return Ok(None),
            Engine::MonteCarlo { n_samples } => {
                let eps_min = model.epsilons.min_separate();
                if (n_samples as f64) < 10.0 / eps_min {
                    return Err(Error::Domain(format!(
                        "{n_samples} samples cannot resolve the {eps_min} quantile (need at least {})",
                        (10.0 / eps_min).ceil()
                    )));
                }
                n_samples
            }
            Engine::Scenario { beta, n_x } => {
                let n_x = n_x.unwrap_or_else(|| scenario_dimension(net));
                let n = scenario_sample_count(model.epsilons.eps_joint, beta, n_x)?;
                log::info!(
                    "scenario approach: N_S = {n} (ε_J = {}, β = {beta}, n_x = {n_x})",
                    model.epsilons.eps_joint
                );
                n
            }
        };
        sample_omega(&model.sigma, n, SampleKind::Gaussian, model.seed).map(Some)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub kappa: usize,
    /// $/h of the OPF solved with the previous margins.
    pub cost: f64,
    pub eta: Eta,
    pub opf_iterations: usize,
    /// Margins computed at this iteration's operating point.
    pub margins: UncertaintyMargins,
}

/// Wall-clock seconds per phase.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub opf: f64,
    pub margins: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub method: MarginMethod,
    pub converged: bool,
    /// κ of the reported iterate.
    pub iteration: usize,
    pub solution: OPFSolution,
    /// Margins evaluated at the reported solution.
    pub margins: UncertaintyMargins,
    pub history: Vec<IterationRecord>,
    /// Draws used by a sample-based engine.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_samples: Option<usize>,
    pub timings: Timings,
}

impl SolveReport {
    pub fn cost(&self) -> f64 {
        self.solution.cost
    }
}

fn engine_margins(
    net: &NetworkCase,
    y: &AdmittanceMatrix,
    model: &UncertaintyModel,
    engine: &Engine,
    samples: Option<&SampleSet>,
    sol: &OPFSolution,
) -> Result<UncertaintyMargins> {
    match (engine, samples) {
        (Engine::Analytical, _) => {
            let sens = compute_sensitivities(net, y, &sol.point, model)?;
            analytical_margins(net, &sens, model)
        }
        (Engine::MonteCarlo { .. }, Some(s)) => {
            monte_carlo_margins(net, y, &sol.point, &sol.dispatch, model, s)
        }
        (Engine::Scenario { .. }, Some(s)) => {
            scenario_margins(net, y, &sol.point, &sol.dispatch, model, s)
        }
        _ => Err(Error::Domain("sample-based engine without samples".into())),
    }
}

/// Runs the outer iteration. Without convergence the iterate with the
/// smallest normalized η is returned with `converged = false`.
pub fn solve_cc_acopf(
    net: &NetworkCase,
    y: &AdmittanceMatrix,
    model: &UncertaintyModel,
    engine: &Engine,
    crit: &ConvergenceCriteria,
) -> Result<SolveReport> {
    crit.validate()?;
    let start = Instant::now();
    let mut timings = Timings::default();
    let samples = engine.samples(net, model)?;

    let mut prev = UncertaintyMargins::zero(net, engine.method(), model.epsilons);
    let mut warm: Option<OPFSolution> = None;
    let mut history = Vec::new();
    // (normalized η, κ, solution, margins)
    let mut best: Option<(f64, usize, OPFSolution, UncertaintyMargins)> = None;
    let mut converged = false;

    for kappa in 1..=crit.max_outer_iters {
        let wrap = |e: Error| Error::OuterIteration {
            iteration: kappa,
            source: Box::new(e),
        };
        let t = Instant::now();
        let bounds = TightenedBounds::new(net, &prev).map_err(wrap)?;
        let sol = solve_acopf(net, y, &bounds, warm.as_ref()).map_err(wrap)?;
        timings.opf += t.elapsed().as_secs_f64();

        let t = Instant::now();
        let curr = engine_margins(net, y, model, engine, samples.as_ref(), &sol).map_err(wrap)?;
        timings.margins += t.elapsed().as_secs_f64();

        let eta = compute_eta(&prev, &curr, net.base_mva)?;
        log::info!(
            "κ = {kappa}: cost {:.2}, η = ({:.2e} MVA, {:.2e} MVA, {:.2e}, {:.2e})",
            sol.cost,
            eta.p,
            eta.q,
            eta.v,
            eta.i
        );
        history.push(IterationRecord {
            kappa,
            cost: sol.cost,
            eta,
            opf_iterations: sol.iterations,
            margins: curr.clone(),
        });
        let score = eta.normalized_max(crit);
        if best.as_ref().is_none_or(|b| score < b.0) {
            best = Some((score, kappa, sol.clone(), curr.clone()));
        }
        if eta.within(crit) {
            converged = true;
            best = Some((score, kappa, sol, curr));
            break;
        }
        prev = curr;
        warm = Some(sol);
    }

    let (_, iteration, solution, margins) = best.expect("at least one outer iteration");
    if !converged {
        log::warn!(
            "no convergence after {} iterations; reporting iteration {iteration}",
            crit.max_outer_iters
        );
    }
    timings.total = start.elapsed().as_secs_f64();
    Ok(SolveReport {
        method: engine.method(),
        converged,
        iteration,
        solution,
        margins,
        history,
        n_samples: samples.map(|s| s.len()),
        timings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub eps: f64,
    /// Largest expected violation size per category, in the order of
    /// [`Category::ALL`]; `None` when the solve failed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_expected_size: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_eps_emp: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

/// Analytical solve and in-sample validation for each ε of the grid. A
/// failed point is recorded and the sweep continues.
pub fn violation_size_sweep(
    net: &NetworkCase,
    y: &AdmittanceMatrix,
    model: &UncertaintyModel,
    eps_grid: &[f64],
    n_samples: usize,
    seed: u64,
    crit: &ConvergenceCriteria,
) -> Result<Vec<SweepRow>> {
    let samples = sample_omega(&model.sigma, n_samples, SampleKind::Gaussian, seed)?;
    let limits = Limits::from_network(net);
    let rows = eps_grid
        .iter()
        .map(|&eps| {
            let run = || -> Result<_> {
                let m = model.with_epsilon(eps);
                let rep = solve_cc_acopf(net, y, &m, &Engine::Analytical, crit)?;
                let sol = &rep.solution;
                evaluate_violations(net, y, &sol.point, &sol.dispatch, &m, &samples, &limits)
            };
            match run() {
                Ok(stats) => SweepRow {
                    eps,
                    max_expected_size: Some(Category::ALL.map(|c| stats.max_expected_size_in(c))),
                    max_eps_emp: Some(stats.max_eps_emp()),
                    failure: None,
                },
                Err(e) => SweepRow {
                    eps,
                    max_expected_size: None,
                    max_eps_emp: None,
                    failure: Some(e.to_string()),
                },
            }
        })
        .collect();
    Ok(rows)
}
