//! JSON and CSV output. JSON documents have sorted keys and floats rounded
//! to 12 significant digits so equal inputs give byte-identical files.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::admittance::AdmittanceMatrix;
use crate::driver::{IterationRecord, SolveReport, SweepRow, Timings};
use crate::error::{Error, Result};
use crate::ipm::SolverStatus;
use crate::margins::{MarginMethod, UncertaintyMargins};
use crate::network::NetworkCase;
use crate::opf::{Binding, Dispatch};
use crate::powerflow::OperatingPoint;
use crate::uncertainty::UncertaintyModel;
use crate::validation::{
    constraint_values, Category, ConstraintId, ConstraintLayout, Limits, SampleKind,
    ViolationStats,
};

/// Serialized form of a [`SolveReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub method: MarginMethod,
    pub converged: bool,
    /// $/h.
    pub objective_cost: f64,
    /// Outer iterations run.
    pub iterations: usize,
    /// κ of the reported iterate.
    pub selected_iteration: usize,
    pub dispatch: Dispatch,
    pub operating_point: OperatingPoint,
    pub opf_status: SolverStatus,
    pub opf_iterations: usize,
    pub binding: Vec<Binding>,
    pub margins: UncertaintyMargins,
    pub convergence_history: Vec<IterationRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_samples: Option<usize>,
    /// Wall-clock seconds; omitted from reproducible output.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<Timings>,
}

impl ReportDocument {
    /// Drops the wall-clock timings, which differ between runs.
    pub fn without_timings(mut self) -> Self {
        self.timings = None;
        self
    }
}

impl From<&SolveReport> for ReportDocument {
    fn from(r: &SolveReport) -> Self {
        Self {
            method: r.method,
            converged: r.converged,
            objective_cost: r.solution.cost,
            iterations: r.history.len(),
            selected_iteration: r.iteration,
            dispatch: r.solution.dispatch.clone(),
            operating_point: r.solution.point.clone(),
            opf_status: r.solution.status,
            opf_iterations: r.solution.iterations,
            binding: r.solution.binding.clone(),
            margins: r.margins.clone(),
            convergence_history: r.history.clone(),
            n_samples: r.n_samples,
            timings: Some(r.timings),
        }
    }
}

fn round12(x: f64) -> f64 {
    let r: f64 = format!("{x:.11e}").parse().expect("formatted float parses");
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

fn canonicalize(v: &mut Value, path: &mut Vec<String>) -> Result<()> {
    match v {
        Value::Null => Err(Error::NonFinite(if path.is_empty() {
            "<root>".into()
        } else {
            path.join(".")
        })),
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().expect("f64 number");
            *v = serde_json::Number::from_f64(round12(x))
                .map(Value::Number)
                .ok_or_else(|| Error::NonFinite(path.join(".")))?;
            Ok(())
        }
        Value::Array(items) => {
            for (i, item) in items.iter_mut().enumerate() {
                path.push(i.to_string());
                canonicalize(item, path)?;
                path.pop();
            }
            Ok(())
        }
        Value::Object(map) => {
            for (k, item) in map.iter_mut() {
                path.push(k.clone());
                canonicalize(item, path)?;
                path.pop();
            }
            Ok(())
        }
        _ => Ok(()),
    }
}

/// Deterministic JSON of any serializable value. Missing optional fields
/// are omitted; any other null (a NaN or infinity) is an error.
pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<String> {
    let mut v = serde_json::to_value(value)?;
    canonicalize(&mut v, &mut Vec::new())?;
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}

pub fn write_report(report: &SolveReport) -> Result<String> {
    to_canonical_json(&ReportDocument::from(report))
}

/// [`write_report`] without timings: identical inputs give identical bytes.
pub fn write_reproducible_report(report: &SolveReport) -> Result<String> {
    to_canonical_json(&ReportDocument::from(report).without_timings())
}

pub fn read_report(text: &str) -> Result<ReportDocument> {
    Ok(serde_json::from_str(text)?)
}

fn csv_string<R: Serialize>(rows: impl IntoIterator<Item = R>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Domain(format!("csv: {e}")))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Domain(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Readable label of a monitored quantity, using case bus ids.
pub fn constraint_label(net: &NetworkCase, c: ConstraintId) -> String {
    match c.category {
        Category::P => format!("P_G{}@{}", c.index, net.buses[net.gens[c.index].bus].id),
        Category::Q => format!("Q_G@{}", net.buses[c.index].id),
        Category::V => format!("V@{}", net.buses[c.index].id),
        Category::I => {
            let br = &net.branches[c.index];
            format!(
                "I{}:{}-{}",
                c.index, net.buses[br.from].id, net.buses[br.to].id
            )
        }
    }
}

#[derive(Serialize)]
struct MarginRow {
    constraint_id: String,
    kind: &'static str,
    lambda_upper: f64,
    lambda_lower: f64,
    forecast_value: f64,
    /// Upper limit; the lower limits are in the JSON report.
    limit: f64,
}

/// One row per monitored constraint, values in p.u.
pub fn margins_csv(
    net: &NetworkCase,
    y: &AdmittanceMatrix,
    model: &UncertaintyModel,
    dispatch: &Dispatch,
    point: &OperatingPoint,
    margins: &UncertaintyMargins,
) -> Result<String> {
    let layout = ConstraintLayout::new(net);
    let forecast = constraint_values(net, dispatch, model, &vec![0.0; model.n_sources()], point, y);
    let limits = Limits::from_network(net);
    let mut rows = Vec::new();
    let mut push = |c: ConstraintId, up: f64, lo: f64, fc: f64, lim: f64| {
        rows.push(MarginRow {
            constraint_id: constraint_label(net, c),
            kind: c.category.name(),
            lambda_upper: round12(up),
            lambda_lower: round12(lo),
            forecast_value: round12(fc),
            limit: round12(lim),
        })
    };
    for g in 0..net.gens.len() {
        let m = margins.lambda_p[g];
        push(ConstraintId { category: Category::P, index: g }, m.upper, m.lower, forecast.p[g], limits.p[g].1);
    }
    for (r, &b) in layout.q_buses.iter().enumerate() {
        let pos = net.gen_buses.binary_search(&b).expect("q bus is a generator bus");
        let m = margins.lambda_q[pos];
        push(ConstraintId { category: Category::Q, index: b }, m.upper, m.lower, forecast.q[r], limits.q[r].1);
    }
    for (r, &b) in layout.v_buses.iter().enumerate() {
        let m = margins.lambda_v[b];
        push(ConstraintId { category: Category::V, index: b }, m.upper, m.lower, forecast.v[r], limits.v[r].1);
    }
    for (r, &l) in layout.i_branches.iter().enumerate() {
        let m = margins.lambda_i[l];
        push(ConstraintId { category: Category::I, index: l }, m, 0.0, forecast.i[r], limits.i[r]);
    }
    csv_string(rows)
}

#[derive(Serialize)]
struct IterationRow {
    kappa: usize,
    cost: f64,
    eta_p_mva: f64,
    eta_q_mva: f64,
    eta_v: f64,
    eta_i: f64,
    opf_iterations: usize,
}

pub fn iterations_csv(report: &SolveReport) -> Result<String> {
    csv_string(report.history.iter().map(|h| IterationRow {
        kappa: h.kappa,
        cost: round12(h.cost),
        eta_p_mva: round12(h.eta.p),
        eta_q_mva: round12(h.eta.q),
        eta_v: round12(h.eta.v),
        eta_i: round12(h.eta.i),
        opf_iterations: h.opf_iterations,
    }))
}

#[derive(Serialize)]
struct ViolationRow {
    constraint_id: String,
    kind: &'static str,
    eps_emp: f64,
    expected_size: f64,
}

/// Per-constraint violation table followed by a `joint` row.
pub fn violations_csv(net: &NetworkCase, stats: &ViolationStats) -> Result<String> {
    let rows = stats
        .constraints
        .iter()
        .zip(&stats.eps_emp)
        .zip(&stats.expected_size)
        .map(|((&c, &e), &s)| ViolationRow {
            constraint_id: constraint_label(net, c),
            kind: c.category.name(),
            eps_emp: round12(e),
            expected_size: round12(s),
        })
        .chain(std::iter::once(ViolationRow {
            constraint_id: "joint".into(),
            kind: "joint",
            eps_emp: round12(stats.eps_joint),
            expected_size: 0.0,
        }));
    csv_string(rows)
}

#[derive(Serialize)]
struct SweepCsvRow {
    eps: f64,
    category: &'static str,
    max_expected_size: Option<f64>,
    status: &'static str,
}

/// Long format: one row per (ε, category). Failed points have an empty size.
pub fn sweep_csv(rows: &[SweepRow]) -> Result<String> {
    csv_string(rows.iter().flat_map(|r| {
        Category::ALL.iter().enumerate().map(move |(k, c)| SweepCsvRow {
            eps: round12(r.eps),
            category: c.name(),
            max_expected_size: r.max_expected_size.map(|s| round12(s[k])),
            status: if r.failure.is_some() { "failed" } else { "ok" },
        })
    }))
}

/// Summary of one validation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationSummary {
    pub kind: SampleKind,
    pub seed: u64,
    pub n_samples: usize,
    pub n_diverged: usize,
    /// Sample excess kurtosis of ω, averaged over sources.
    pub excess_kurtosis: f64,
    pub max_eps_emp: f64,
    pub eps_joint: f64,
    pub max_eps_emp_by_category: std::collections::BTreeMap<Category, f64>,
    pub max_expected_size_by_category: std::collections::BTreeMap<Category, f64>,
}

impl ValidationSummary {
    pub fn new(stats: &ViolationStats, kind: SampleKind, seed: u64, excess_kurtosis: f64) -> Self {
        Self {
            kind,
            seed,
            n_samples: stats.n_samples,
            n_diverged: stats.n_diverged,
            excess_kurtosis,
            max_eps_emp: stats.max_eps_emp(),
            eps_joint: stats.eps_joint,
            max_eps_emp_by_category: Category::ALL
                .iter()
                .map(|&c| (c, stats.max_eps_emp_in(c)))
                .collect(),
            max_expected_size_by_category: Category::ALL
                .iter()
                .map(|&c| (c, stats.max_expected_size_in(c)))
                .collect(),
        }
    }
}
