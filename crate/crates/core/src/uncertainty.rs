//! Uncertainty specification files and the resolved model (Σ, γ, α, ε).

use faer::{Mat, Side};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::margins::{gamma_from_power_factor, QuantileModel};
use crate::network::NetworkCase;

/// Eigenvalues below this are treated as a genuinely indefinite matrix.
pub const PSD_TOL: f64 = 1e-10;

/// A scalar applied to every source, or one value per source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Values {
    Uniform(f64),
    PerBus(Vec<f64>),
}

impl Values {
    fn get(&self, k: usize) -> f64 {
        match self {
            Values::Uniform(v) => *v,
            Values::PerBus(v) => v[k],
        }
    }

    fn check_len(&self, n: usize, what: &str) -> Result<()> {
        match self {
            Values::PerBus(v) if v.len() != n => Err(Error::Schema(format!(
                "{what} has {} entries for {n} uncertain buses",
                v.len()
            ))),
            _ => Ok(()),
        }
    }

    fn iter(&self, n: usize) -> impl Iterator<Item = f64> + '_ {
        (0..n).map(move |k| match self {
            Values::PerBus(v) if k >= v.len() => f64::NAN,
            _ => self.get(k),
        })
    }
}

/// Relative values are fractions of the forecast active load at the bus;
/// absolute values are per unit on the case base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum StdDev {
    Relative(Values),
    Absolute(Values),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Correlation {
    /// Coefficient between two sources in the same zone and in different zones.
    Zonal {
        intra_zone: f64,
        #[serde(default)]
        inter_zone: f64,
    },
    Matrix(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PowerFactor {
    /// cos φ of the forecast load at each bus.
    FromLoad,
    CosPhi(Values),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Epsilons {
    pub eps_p: f64,
    pub eps_q: f64,
    pub eps_v: f64,
    pub eps_i: f64,
    pub eps_joint: f64,
}

impl Epsilons {
    pub fn uniform(eps: f64, eps_joint: f64) -> Self {
        Self {
            eps_p: eps,
            eps_q: eps,
            eps_v: eps,
            eps_i: eps,
            eps_joint,
        }
    }

    pub fn min_separate(&self) -> f64 {
        self.eps_p.min(self.eps_q).min(self.eps_v).min(self.eps_i)
    }

    fn validate(&self) -> Result<()> {
        for (name, e) in [
            ("eps_p", self.eps_p),
            ("eps_q", self.eps_q),
            ("eps_v", self.eps_v),
            ("eps_i", self.eps_i),
            ("eps_joint", self.eps_joint),
        ] {
            if !(e > 0.0 && e < 0.5) {
                return Err(Error::Schema(format!("{name} = {e} is outside (0, 0.5)")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum AlphaRule {
    /// α_i proportional to the unit's maximum output.
    ProportionalPmax,
    /// One factor per in-service unit, in case order.
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UncertaintySpecFile {
    pub uncertain_buses: Vec<i64>,
    pub std_dev: StdDev,
    pub correlation: Correlation,
    pub power_factor: PowerFactor,
    pub epsilons: Epsilons,
    pub alpha_rule: AlphaRule,
    pub quantile_model: QuantileModel,
    pub seed: u64,
    /// Bus ids grouped by zone, used by zonal correlation. Without it all
    /// sources share one zone.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zones: Option<Vec<Vec<i64>>>,
}

/// Parses and validates an uncertainty specification (JSON).
pub fn parse_uncertainty(text: &str) -> Result<UncertaintySpecFile> {
    let spec: UncertaintySpecFile =
        serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
    spec.validate()?;
    Ok(spec)
}

impl UncertaintySpecFile {
    pub fn validate(&self) -> Result<()> {
        let n = self.uncertain_buses.len();
        if n == 0 {
            return Err(Error::NoUncertaintySources);
        }
        let mut sorted = self.uncertain_buses.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Schema("duplicate uncertain bus".into()));
        }
        let std = match &self.std_dev {
            StdDev::Relative(v) | StdDev::Absolute(v) => v,
        };
        std.check_len(n, "std_dev")?;
        if std.iter(n).any(|s| !(s >= 0.0 && s.is_finite())) {
            return Err(Error::Schema("std_dev must be finite and non-negative".into()));
        }
        if let PowerFactor::CosPhi(pf) = &self.power_factor {
            pf.check_len(n, "power_factor")?;
            if pf.iter(n).any(|c| !(c > 0.0 && c <= 1.0)) {
                return Err(Error::Schema("power factor must lie in (0, 1]".into()));
            }
        }
        self.epsilons.validate()?;
        if let AlphaRule::Explicit(a) = &self.alpha_rule {
            check_alpha(a)?;
        }
        match &self.correlation {
            Correlation::Zonal {
                intra_zone,
                inter_zone,
            } => {
                if !(-1.0..=1.0).contains(intra_zone) || !(-1.0..=1.0).contains(inter_zone) {
                    return Err(Error::Schema("correlation outside [-1, 1]".into()));
                }
            }
            Correlation::Matrix(m) => {
                if m.len() != n || m.iter().any(|r| r.len() != n) {
                    return Err(Error::Schema(format!("correlation matrix must be {n}x{n}")));
                }
                for i in 0..n {
                    if (m[i][i] - 1.0).abs() > 1e-12 {
                        return Err(Error::Schema("correlation diagonal must be 1".into()));
                    }
                    for j in 0..i {
                        if (m[i][j] - m[j][i]).abs() > 1e-12 {
                            return Err(Error::Schema("correlation matrix is not symmetric".into()));
                        }
                    }
                }
                psd_sqrt(m)?;
            }
        }
        if let Some(zones) = &self.zones {
            let mut seen = std::collections::HashSet::new();
            for id in zones.iter().flatten() {
                if !seen.insert(*id) {
                    return Err(Error::Schema(format!("bus {id} appears in two zones")));
                }
            }
        }
        Ok(())
    }

    fn correlation(&self, a: usize, b: usize) -> f64 {
        if a == b {
            return 1.0;
        }
        match &self.correlation {
            Correlation::Matrix(m) => m[a][b],
            Correlation::Zonal {
                intra_zone,
                inter_zone,
            } => {
                let zone_of = |id: i64| {
                    self.zones
                        .as_ref()
                        .map_or(Some(0), |z| z.iter().position(|members| members.contains(&id)))
                };
                match (zone_of(self.uncertain_buses[a]), zone_of(self.uncertain_buses[b])) {
                    (Some(x), Some(y)) if x == y => *intra_zone,
                    _ => *inter_zone,
                }
            }
        }
    }
}

fn check_alpha(a: &[f64]) -> Result<()> {
    if a.iter().any(|&x| !(x >= 0.0)) {
        return Err(Error::Schema("participation factors must be non-negative".into()));
    }
    let sum: f64 = a.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Schema(format!("participation factors sum to {sum}, not 1")));
    }
    Ok(())
}

/// AGC participation factors of the in-service units.
pub fn participation_factors(net: &NetworkCase, rule: &AlphaRule) -> Result<Vec<f64>> {
    match rule {
        AlphaRule::ProportionalPmax => {
            let total: f64 = net.gens.iter().map(|g| g.p_max.max(0.0)).sum();
            if total <= 0.0 {
                return Err(Error::Domain("all units have p_max = 0".into()));
            }
            Ok(net.gens.iter().map(|g| g.p_max.max(0.0) / total).collect())
        }
        AlphaRule::Explicit(a) => {
            if a.len() != net.gens.len() {
                return Err(Error::Schema(format!(
                    "{} participation factors for {} in-service units",
                    a.len(),
                    net.gens.len()
                )));
            }
            check_alpha(a)?;
            Ok(a.clone())
        }
    }
}

/// Symmetric square root via eigendecomposition. Eigenvalues in
/// `[-PSD_TOL, 0)` are clamped to zero; anything lower is rejected.
pub fn psd_sqrt(m: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = m.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let a = Mat::from_fn(n, n, |i, j| m[i][j]);
    let evd = a
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Domain(format!("eigendecomposition failed: {e:?}")))?;
    let u = evd.U();
    let s = evd.S().column_vector();
    let mut root = Vec::with_capacity(n);
    for k in 0..n {
        let lam = s[k];
        if lam < -PSD_TOL {
            return Err(Error::NotPositiveSemidefinite { min_eigenvalue: lam });
        }
        root.push(lam.max(0.0).sqrt());
    }
    Ok((0..n)
        .map(|i| {
            (0..n)
                .map(|j| (0..n).map(|k| u[(i, k)] * root[k] * u[(j, k)]).sum())
                .collect()
        })
        .collect())
}

/// Uncertainty model resolved against a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyModel {
    /// Bus index of each source.
    pub buses: Vec<usize>,
    /// Covariance of ω in p.u.².
    pub sigma: Vec<Vec<f64>>,
    pub sqrt_sigma: Vec<Vec<f64>>,
    /// Reactive-to-active fluctuation ratio per source.
    pub gamma: Vec<f64>,
    /// Participation factor per in-service unit.
    pub alpha: Vec<f64>,
    pub epsilons: Epsilons,
    pub quantile: QuantileModel,
    pub seed: u64,
}

impl UncertaintyModel {
    pub fn resolve(spec: &UncertaintySpecFile, net: &NetworkCase) -> Result<Self> {
        spec.validate()?;
        let n = spec.uncertain_buses.len();
        let buses = spec
            .uncertain_buses
            .iter()
            .map(|&id| net.index_of(id).ok_or(Error::UnknownBus(id)))
            .collect::<Result<Vec<_>>>()?;
        if let Some(zones) = &spec.zones {
            if let Some(&id) = zones.iter().flatten().find(|&&id| net.index_of(id).is_none()) {
                return Err(Error::UnknownBus(id));
            }
        }
        let std: Vec<f64> = match &spec.std_dev {
            StdDev::Relative(v) => v
                .iter(n)
                .zip(&buses)
                .map(|(s, &b)| s * net.buses[b].p_load.abs())
                .collect(),
            StdDev::Absolute(v) => v.iter(n).collect(),
        };
        let sigma: Vec<Vec<f64>> = (0..n)
            .map(|a| {
                (0..n)
                    .map(|b| std[a] * std[b] * spec.correlation(a, b))
                    .collect()
            })
            .collect();
        let sqrt_sigma = psd_sqrt(&sigma)?;
        let gamma = match &spec.power_factor {
            PowerFactor::FromLoad => buses
                .iter()
                .map(|&b| {
                    let (p, q) = (net.buses[b].p_load, net.buses[b].q_load);
                    if p == 0.0 {
                        0.0
                    } else {
                        (q / p).abs()
                    }
                })
                .collect(),
            PowerFactor::CosPhi(v) => v
                .iter(n)
                .map(gamma_from_power_factor)
                .collect::<Result<Vec<_>>>()?,
        };
        Ok(Self {
            buses,
            sigma,
            sqrt_sigma,
            gamma,
            alpha: participation_factors(net, &spec.alpha_rule)?,
            epsilons: spec.epsilons,
            quantile: spec.quantile_model,
            seed: spec.seed,
        })
    }

    pub fn n_sources(&self) -> usize {
        self.buses.len()
    }

    /// Same model with Σ multiplied by `s²`.
    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        for row in &mut out.sigma {
            row.iter_mut().for_each(|x| *x *= s * s);
        }
        for row in &mut out.sqrt_sigma {
            row.iter_mut().for_each(|x| *x *= s.abs());
        }
        out
    }

    /// Same model with every separate ε set to `eps`.
    pub fn with_epsilon(&self, eps: f64) -> Self {
        let mut out = self.clone();
        out.epsilons = Epsilons::uniform(eps, self.epsilons.eps_joint);
        out
    }

    /// Standard deviation of the total imbalance Ω = Σω.
    pub fn sigma_omega(&self) -> f64 {
        self.sigma.iter().flatten().sum::<f64>().max(0.0).sqrt()
    }
}
