//! Uncertainty margins: analytical (Gaussian or Chebyshev multiplier),
//! Monte-Carlo quantiles and scenario extremes.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::admittance::AdmittanceMatrix;
use crate::error::{Error, Result};
use crate::network::NetworkCase;
use crate::opf::Dispatch;
use crate::powerflow::OperatingPoint;
use crate::sensitivity::SensitivityFactors;
use crate::uncertainty::{psd_sqrt, Epsilons, UncertaintyModel};
use crate::validation::{
    constraint_values, sample_values, ConstraintLayout, ConstraintValues, SampleSet,
};

/// Maps a violation probability ε to the multiplier of the standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantileModel {
    /// Φ⁻¹(1 − ε).
    Gaussian,
    /// sqrt((1 − ε)/ε), distribution free.
    Chebyshev,
}

impl QuantileModel {
    pub fn multiplier(&self, eps: f64) -> Result<f64> {
        if !(eps > 0.0 && eps < 0.5) {
            return Err(Error::Domain(format!("ε = {eps} is outside (0, 0.5)")));
        }
        Ok(match self {
            QuantileModel::Gaussian => Normal::standard().inverse_cdf(1.0 - eps),
            QuantileModel::Chebyshev => ((1.0 - eps) / eps).sqrt(),
        })
    }
}

/// Reactive-to-active ratio of a fluctuation at constant power factor.
pub fn gamma_from_power_factor(cos_phi: f64) -> Result<f64> {
    if !(cos_phi > 0.0 && cos_phi <= 1.0) {
        return Err(Error::Domain(format!("power factor {cos_phi} is outside (0, 1]")));
    }
    Ok(((1.0 - cos_phi * cos_phi) / (cos_phi * cos_phi)).sqrt())
}

/// Standard deviation of Ω = Σω, `sqrt(1ᵀ Σ 1)`.
pub fn sigma_omega(sigma: &[Vec<f64>]) -> Result<f64> {
    psd_sqrt(sigma)?;
    Ok(sigma.iter().flatten().sum::<f64>().max(0.0).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginMethod {
    Analytical,
    MonteCarlo,
    Scenario,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Pair {
    pub upper: f64,
    pub lower: f64,
}

impl Pair {
    pub fn symmetric(x: f64) -> Self {
        Self { upper: x, lower: x }
    }
}

/// Tightenings in p.u.; all entries are non-negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyMargins {
    pub method: MarginMethod,
    /// Per unit.
    pub lambda_p: Vec<Pair>,
    /// Per generator bus, aligned with [`NetworkCase::gen_buses`]; zero at PQ buses.
    pub lambda_q: Vec<Pair>,
    /// Per bus; zero at PV and slack buses.
    pub lambda_v: Vec<Pair>,
    /// Per branch; zero for unlimited branches.
    pub lambda_i: Vec<f64>,
    pub epsilons: Epsilons,
}

impl UncertaintyMargins {
    pub fn zero(net: &NetworkCase, method: MarginMethod, epsilons: Epsilons) -> Self {
        Self {
            method,
            lambda_p: vec![Pair::default(); net.gens.len()],
            lambda_q: vec![Pair::default(); net.gen_buses.len()],
            lambda_v: vec![Pair::default(); net.n_bus()],
            lambda_i: vec![0.0; net.branches.len()],
            epsilons,
        }
    }

    /// Same margins with every entry multiplied by `s ≥ 0`.
    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        let sc = |p: &mut Pair| {
            p.upper *= s;
            p.lower *= s;
        };
        out.lambda_p.iter_mut().for_each(sc);
        out.lambda_q.iter_mut().for_each(sc);
        out.lambda_v.iter_mut().for_each(sc);
        out.lambda_i.iter_mut().for_each(|x| *x *= s);
        out
    }
}

/// `‖row · S‖₂` for a symmetric square root `S`.
fn row_norm(row: &[f64], sqrt_sigma: &[Vec<f64>]) -> f64 {
    let m = row.len();
    (0..m)
        .map(|j| (0..m).map(|k| row[k] * sqrt_sigma[k][j]).sum::<f64>().powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Response of each unit's active output to ω, per source. Units outside
/// the slack bus follow −α; slack units split the slack response in
/// proportion to α (equally when their α sum to zero).
pub fn unit_response_rows(net: &NetworkCase, sens: &SensitivityFactors) -> Vec<Vec<f64>> {
    let m = sens.n_sources();
    let slack_units = &net.bus_gens[net.slack_bus];
    let alpha_slack: f64 = slack_units.iter().map(|&g| sens.alpha[g]).sum();
    (0..net.gens.len())
        .map(|g| {
            if net.gens[g].bus != net.slack_bus {
                vec![-sens.alpha[g]; m]
            } else {
                let share = if alpha_slack > 0.0 {
                    sens.alpha[g] / alpha_slack
                } else {
                    1.0 / slack_units.len() as f64
                };
                sens.gamma_p_slack.iter().map(|s| share * s).collect()
            }
        })
        .collect()
}

/// Analytical margins from the sensitivity factors.
pub fn analytical_margins(
    net: &NetworkCase,
    sens: &SensitivityFactors,
    model: &UncertaintyModel,
) -> Result<UncertaintyMargins> {
    let eps = model.epsilons;
    let qm = model.quantile;
    let (mp, mq, mv, mi) = (
        qm.multiplier(eps.eps_p)?,
        qm.multiplier(eps.eps_q)?,
        qm.multiplier(eps.eps_v)?,
        qm.multiplier(eps.eps_i)?,
    );
    let s = &model.sqrt_sigma;
    let mut out = UncertaintyMargins::zero(net, MarginMethod::Analytical, eps);
    let sigma_total = model.sigma_omega();
    for (g, row) in unit_response_rows(net, sens).iter().enumerate() {
        let lam = if net.gens[g].bus == net.slack_bus {
            mp * row_norm(row, s)
        } else {
            mp * model.alpha[g] * sigma_total
        };
        out.lambda_p[g] = Pair::symmetric(lam);
    }
    for (r, &bus) in sens.q_buses.iter().enumerate() {
        let pos = net.gen_buses.binary_search(&bus).expect("q bus is a generator bus");
        out.lambda_q[pos] = Pair::symmetric(mq * row_norm(&sens.gamma_q[r], s));
    }
    for (r, &bus) in sens.v_buses.iter().enumerate() {
        out.lambda_v[bus] = Pair::symmetric(mv * row_norm(&sens.gamma_v[r], s));
    }
    for (r, &l) in sens.i_branches.iter().enumerate() {
        let [from, to] = &sens.gamma_i[r];
        out.lambda_i[l] = mi * row_norm(from, s).max(row_norm(to, s));
    }
    Ok(out)
}

/// 0-based index of the (1 − ε) order statistic in an ascending sort of `n` values.
pub fn upper_quantile_index(n: usize, eps: f64) -> usize {
    let idx = ((1.0 - eps) * n as f64 - 1e-9).ceil().max(0.0) as usize;
    idx.min(n.saturating_sub(1))
}

fn upper_quantile(sorted: &[f64], eps: f64) -> f64 {
    sorted[upper_quantile_index(sorted.len(), eps)]
}

fn lower_quantile(sorted: &[f64], eps: f64) -> f64 {
    sorted[sorted.len() - 1 - upper_quantile_index(sorted.len(), eps)]
}

/// Builds margins from sampled constraint values with per-category
/// statistics `upper(values, ε)` and `lower(values, ε)`.
fn sample_based_margins(
    net: &NetworkCase,
    forecast: &ConstraintValues,
    samples: &[ConstraintValues],
    method: MarginMethod,
    eps: Epsilons,
    upper: impl Fn(&[f64], f64) -> f64,
    lower: impl Fn(&[f64], f64) -> f64,
) -> UncertaintyMargins {
    let layout = ConstraintLayout::new(net);
    let mut out = UncertaintyMargins::zero(net, method, eps);
    if samples.is_empty() {
        return out;
    }
    let column = |get: &dyn Fn(&ConstraintValues) -> f64| {
        let mut v: Vec<f64> = samples.iter().map(get).collect();
        v.sort_by(f64::total_cmp);
        v
    };
    let pair = |col: &[f64], fc: f64, e: f64| Pair {
        upper: (upper(col, e) - fc).max(0.0),
        lower: (fc - lower(col, e)).max(0.0),
    };
    for g in 0..net.gens.len() {
        let col = column(&|c| c.p[g]);
        out.lambda_p[g] = pair(&col, forecast.p[g], eps.eps_p);
    }
    for (r, &bus) in layout.q_buses.iter().enumerate() {
        let col = column(&|c| c.q[r]);
        let pos = net.gen_buses.binary_search(&bus).expect("q bus is a generator bus");
        out.lambda_q[pos] = pair(&col, forecast.q[r], eps.eps_q);
    }
    for (r, &bus) in layout.v_buses.iter().enumerate() {
        let col = column(&|c| c.v[r]);
        out.lambda_v[bus] = pair(&col, forecast.v[r], eps.eps_v);
    }
    for (r, &l) in layout.i_branches.iter().enumerate() {
        let col = column(&|c| c.i[r]);
        out.lambda_i[l] = (upper(&col, eps.eps_i) - forecast.i[r]).max(0.0);
    }
    out
}

/// Empirical-quantile margins from power flows at every sample.
pub fn monte_carlo_margins(
    net: &NetworkCase,
    y: &AdmittanceMatrix,
    x: &OperatingPoint,
    dispatch: &Dispatch,
    model: &UncertaintyModel,
    samples: &SampleSet,
) -> Result<UncertaintyMargins> {
    let n = samples.len();
    let eps_min = model.epsilons.min_separate();
    if (n as f64) < 10.0 / eps_min {
        return Err(Error::Domain(format!(
            "{n} samples cannot resolve the {eps_min} quantile (need at least {})",
            (10.0 / eps_min).ceil()
        )));
    }
    let forecast = constraint_values(net, dispatch, model, &vec![0.0; model.n_sources()], x, y);
    let values = sample_values(net, y, x, dispatch, model, samples)?;
    Ok(sample_based_margins(
        net,
        &forecast,
        &values,
        MarginMethod::MonteCarlo,
        model.epsilons,
        upper_quantile,
        lower_quantile,
    ))
}

/// N_S = ceil((2/ε_J)(ln(1/β) + n_x)).
pub fn scenario_sample_count(eps_joint: f64, beta: f64, n_x: usize) -> Result<usize> {
    if !(eps_joint > 0.0 && eps_joint < 1.0) {
        return Err(Error::Domain(format!("ε_J = {eps_joint} is outside (0, 1)")));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::Domain(format!("β = {beta} is outside (0, 1)")));
    }
    if n_x == 0 {
        return Err(Error::Domain("n_x must be at least 1".into()));
    }
    Ok(((2.0 / eps_joint) * ((1.0 / beta).ln() + n_x as f64)).ceil() as usize)
}

/// Default confidence parameter of the scenario approach.
pub const SCENARIO_BETA: f64 = 1e-4;

/// Decision-variable count used for N_S: θ and v per bus, p and q per unit.
pub fn scenario_dimension(net: &NetworkCase) -> usize {
    2 * net.gens.len() + 2 * net.n_bus()
}

/// Margins spanning the extremes over all scenarios.
pub fn scenario_margins(
    net: &NetworkCase,
    y: &AdmittanceMatrix,
    x: &OperatingPoint,
    dispatch: &Dispatch,
    model: &UncertaintyModel,
    scenarios: &SampleSet,
) -> Result<UncertaintyMargins> {
    let forecast = constraint_values(net, dispatch, model, &vec![0.0; model.n_sources()], x, y);
    let values = sample_values(net, y, x, dispatch, model, scenarios)?;
    Ok(sample_based_margins(
        net,
        &forecast,
        &values,
        MarginMethod::Scenario,
        model.epsilons,
        |v, _| v[v.len() - 1],
        |v, _| v[0],
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_ratio() {
        assert_eq!(gamma_from_power_factor(1.0).unwrap(), 0.0);
        assert!((gamma_from_power_factor(0.95).unwrap() - 0.32868).abs() < 5e-6);
        assert!(gamma_from_power_factor(0.0).is_err());
        assert!(gamma_from_power_factor(1.2).is_err());
    }

    #[test]
    fn total_imbalance_deviation() {
        let diag: Vec<Vec<f64>> = (0..17)
            .map(|i| (0..17).map(|j| if i == j { 0.01 } else { 0.0 }).collect())
            .collect();
        assert!((sigma_omega(&diag).unwrap() - 0.1 * 17f64.sqrt()).abs() < 1e-12);
        assert!((sigma_omega(&diag).unwrap() - 0.41231).abs() < 5e-6);
        assert_eq!(sigma_omega(&[vec![0.0]]).unwrap(), 0.0);
        assert!(sigma_omega(&[vec![1.0, -1.0], vec![-1.0, 1.0]]).unwrap() < 1e-7);
        assert!(sigma_omega(&[vec![1.0, 2.0], vec![2.0, 1.0]]).is_err());
    }

    #[test]
    fn multipliers() {
        let g = QuantileModel::Gaussian.multiplier(0.01).unwrap();
        assert!((g - 2.326_347_874).abs() < 1e-8);
        let c = QuantileModel::Chebyshev.multiplier(0.01).unwrap();
        assert!((c * 0.1 - 0.99499).abs() < 5e-6);
        assert!(QuantileModel::Gaussian.multiplier(0.5).is_err());
    }

    #[test]
    fn order_statistic_index() {
        assert_eq!(upper_quantile_index(1000, 0.01), 990);
        let v: Vec<f64> = (0..1000).map(f64::from).collect();
        assert_eq!(upper_quantile(&v, 0.01), 990.0);
        assert_eq!(lower_quantile(&v, 0.01), 9.0);
        assert_eq!(upper_quantile_index(1, 0.01), 0);
    }

    #[test]
    fn sample_counts() {
        assert_eq!(scenario_sample_count(0.1, 1e-4, 114).unwrap(), 2465);
        assert!(scenario_sample_count(1.0, 1e-4, 114).is_err());
        assert!(scenario_sample_count(0.1, 0.0, 114).is_err());
        assert!(scenario_sample_count(0.1, 1e-4, 0).is_err());
    }
}
