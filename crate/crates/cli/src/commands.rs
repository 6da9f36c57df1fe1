use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use ccopf::admittance::{build_admittance, AdmittanceMatrix};
use ccopf::case::{derive_stochastic_case, parse_case, ModificationRecipe};
use ccopf::driver::{
    solve_cc_acopf, violation_size_sweep, ConvergenceCriteria, Engine, SolveReport,
};
use ccopf::margins::{
    analytical_margins, monte_carlo_margins, scenario_dimension, scenario_margins,
    scenario_sample_count, QuantileModel, UncertaintyMargins, SCENARIO_BETA,
};
use ccopf::network::{build_network, NetworkCase};
use ccopf::opf::{solve_acopf, TightenedBounds};
use ccopf::powerflow::{solve_power_flow, Schedule};
use ccopf::report::{
    constraint_label, iterations_csv, margins_csv, read_report, sweep_csv, to_canonical_json,
    violations_csv, write_reproducible_report, ValidationSummary,
};
use ccopf::sensitivity::{check_sensitivities_fd, compute_sensitivities};
use ccopf::uncertainty::{parse_uncertainty, UncertaintyModel};
use ccopf::validation::{
    constraint_ids, evaluate_violations, sample_omega, Category, Limits, SampleKind,
};
use ccopf::{Error, Result};

use crate::{CaseArgs, CritArgs, EngineArg, Failure, KindArg, Quantile, UncArgs};

type CmdResult = std::result::Result<(), Failure>;

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

fn stdout(text: &str) -> Result<()> {
    use std::io::Write;
    let mut h = std::io::stdout().lock();
    h.write_all(text.as_bytes())?;
    h.flush()?;
    Ok(())
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write(p, text),
        None => stdout(text),
    }
}

fn load_case(args: &CaseArgs) -> Result<(NetworkCase, AdmittanceMatrix)> {
    let mut raw = parse_case(&read(&args.case)?)?;
    if let Some(r) = &args.recipe {
        raw = derive_stochastic_case(&raw, &ModificationRecipe::from_json(&read(r)?)?);
    }
    let net = build_network(&raw)?;
    let y = build_admittance(&net)?;
    Ok((net, y))
}

fn load_model(args: &UncArgs, net: &NetworkCase) -> Result<UncertaintyModel> {
    let mut spec = parse_uncertainty(&read(&args.unc)?)?;
    if let Some(e) = args.eps {
        spec.epsilons.eps_p = e;
        spec.epsilons.eps_q = e;
        spec.epsilons.eps_v = e;
        spec.epsilons.eps_i = e;
    }
    if let Some(e) = args.eps_joint {
        spec.epsilons.eps_joint = e;
    }
    if let Some(q) = args.quantile {
        spec.quantile_model = match q {
            Quantile::Gaussian => QuantileModel::Gaussian,
            Quantile::Chebyshev => QuantileModel::Chebyshev,
        };
    }
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    let model = UncertaintyModel::resolve(&spec, net)?;
    Ok(match args.sigma_scale {
        Some(s) if !(s >= 0.0) => {
            return Err(Error::Domain(format!("sigma scale {s} must be non-negative")))
        }
        Some(s) => model.scaled(s),
        None => model,
    })
}

fn criteria(c: &CritArgs) -> ConvergenceCriteria {
    ConvergenceCriteria {
        eta_hat_p: c.eta_power,
        eta_hat_q: c.eta_power,
        eta_hat_v: c.eta_v,
        eta_hat_i: c.eta_i,
        max_outer_iters: c.max_iters,
    }
}

fn engine(arg: EngineArg, samples: usize) -> Engine {
    match arg {
        EngineArg::Analytical => Engine::Analytical,
        EngineArg::Mc => Engine::MonteCarlo { n_samples: samples },
        EngineArg::Scenario => Engine::scenario(),
    }
}

fn engine_name(arg: EngineArg) -> &'static str {
    match arg {
        EngineArg::Analytical => "analytical",
        EngineArg::Mc => "mc",
        EngineArg::Scenario => "scenario",
    }
}

fn sample_kind(k: KindArg) -> SampleKind {
    match k {
        KindArg::Gaussian => SampleKind::Gaussian,
        KindArg::Laplace => SampleKind::LaplaceSurrogate,
    }
}

/// Evaluation draws use a stream separate from the engine draws.
fn evaluation_seed(model: &UncertaintyModel) -> u64 {
    model.seed.wrapping_add(1)
}

#[derive(Serialize)]
struct PfOutput<'a> {
    converged: bool,
    iterations: usize,
    max_mismatch: f64,
    bus_ids: Vec<i64>,
    theta: &'a [f64],
    v: &'a [f64],
    p_inj: &'a [f64],
    q_inj: &'a [f64],
}

pub fn pf(case: &CaseArgs, flat_start: bool, out: Option<&Path>) -> CmdResult {
    let (net, y) = load_case(case)?;
    let sched = Schedule::from_network(&net);
    let theta: Vec<f64> = net.buses.iter().map(|b| b.theta_init).collect();
    let v: Vec<f64> = net.buses.iter().map(|b| b.v_init).collect();
    let warm = (!flat_start).then_some((theta.as_slice(), v.as_slice()));
    let x = solve_power_flow(&net, &y, &sched, warm)?;
    let doc = PfOutput {
        converged: x.converged,
        iterations: x.iterations,
        max_mismatch: x.max_mismatch,
        bus_ids: net.buses.iter().map(|b| b.id).collect(),
        theta: &x.theta,
        v: &x.v,
        p_inj: &x.p_inj,
        q_inj: &x.q_inj,
    };
    emit(out, &to_canonical_json(&doc)?)?;
    Ok(())
}

pub fn opf(case: &CaseArgs, margins: Option<&Path>, out: Option<&Path>) -> CmdResult {
    let (net, y) = load_case(case)?;
    let bounds = match margins {
        Some(p) => {
            // either bare margins or a solve report carrying them
            let mut v: serde_json::Value = serde_json::from_str(&read(p)?).map_err(Error::from)?;
            if let Some(inner) = v.get_mut("margins") {
                v = inner.take();
            }
            let m: UncertaintyMargins = serde_json::from_value(v).map_err(Error::from)?;
            if m.lambda_p.len() != net.gens.len()
                || m.lambda_q.len() != net.gen_buses.len()
                || m.lambda_v.len() != net.n_bus()
                || m.lambda_i.len() != net.branches.len()
            {
                return Err(Error::Domain("margins do not match the case".into()).into());
            }
            TightenedBounds::new(&net, &m)?
        }
        None => TightenedBounds::untightened(&net),
    };
    let sol = solve_acopf(&net, &y, &bounds, None)?;
    log::info!("cost {:.2} $/h after {} iterations", sol.cost, sol.iterations);
    emit(out, &to_canonical_json(&sol)?)?;
    Ok(())
}

fn write_solve_outputs(
    dir: &Path,
    prefix: &str,
    net: &NetworkCase,
    y: &AdmittanceMatrix,
    model: &UncertaintyModel,
    rep: &SolveReport,
) -> Result<()> {
    write(&dir.join(format!("{prefix}.json")), &write_reproducible_report(rep)?)?;
    write(&dir.join(format!("{prefix}_timings.json")), &to_canonical_json(&rep.timings)?)?;
    write(&dir.join(format!("{prefix}_iterations.csv")), &iterations_csv(rep)?)?;
    write(
        &dir.join(format!("{prefix}_margins.csv")),
        &margins_csv(net, y, model, &rep.solution.dispatch, &rep.solution.point, &rep.margins)?,
    )
}

pub fn solve(
    case: &CaseArgs,
    unc: &UncArgs,
    crit: &CritArgs,
    eng: EngineArg,
    samples: usize,
    out_dir: &Path,
) -> CmdResult {
    let (net, y) = load_case(case)?;
    let model = load_model(unc, &net)?;
    let rep = solve_cc_acopf(&net, &y, &model, &engine(eng, samples), &criteria(crit))?;
    write_solve_outputs(out_dir, "solve", &net, &y, &model, &rep)?;
    stdout(&format!(
        "{}: cost {:.2} $/h, {} iterations, converged {}\n",
        engine_name(eng),
        rep.cost(),
        rep.history.len(),
        rep.converged
    ))?;
    if rep.converged {
        Ok(())
    } else {
        Err(Failure {
            code: 1,
            message: format!(
                "outer iteration did not converge in {} iterations; iteration {} reported",
                rep.history.len(),
                rep.iteration
            ),
        })
    }
}

pub fn validate(
    case: &CaseArgs,
    unc: &UncArgs,
    report: &Path,
    n: usize,
    kind: KindArg,
    out_dir: &Path,
) -> CmdResult {
    let (net, y) = load_case(case)?;
    let model = load_model(unc, &net)?;
    let doc = read_report(&read(report)?)?;
    if doc.dispatch.p_gen.len() != net.gens.len() || doc.operating_point.v.len() != net.n_bus() {
        return Err(Error::Domain("report does not match the case".into()).into());
    }
    let seed = evaluation_seed(&model);
    let samples = sample_omega(&model.sigma, n, sample_kind(kind), seed)?;
    let stats = evaluate_violations(
        &net,
        &y,
        &doc.operating_point,
        &doc.dispatch,
        &model,
        &samples,
        &Limits::from_network(&net),
    )?;
    let summary = ValidationSummary::new(&stats, samples.kind, seed, samples.excess_kurtosis());
    let text = to_canonical_json(&summary)?;
    write(&out_dir.join("validation.json"), &text)?;
    write(&out_dir.join("violations.csv"), &violations_csv(&net, &stats)?)?;
    stdout(&text)?;
    Ok(())
}

#[derive(Serialize)]
struct CompareRow {
    engine: &'static str,
    status: String,
    converged: Option<bool>,
    iterations: Option<usize>,
    cost: Option<f64>,
    max_eps_emp: Option<f64>,
    eps_joint: Option<f64>,
    seconds: Option<f64>,
}

#[allow(clippy::too_many_arguments)]
pub fn compare(
    case: &CaseArgs,
    unc: &UncArgs,
    crit: &CritArgs,
    engines: &[EngineArg],
    samples: usize,
    eval_samples: usize,
    eval_kind: KindArg,
    out_dir: &Path,
) -> CmdResult {
    let (net, y) = load_case(case)?;
    let model = load_model(unc, &net)?;
    let crit = criteria(crit);
    let limits = Limits::from_network(&net);
    let eval = sample_omega(
        &model.sigma,
        eval_samples,
        sample_kind(eval_kind),
        evaluation_seed(&model),
    )?;

    let mut summary = Vec::new();
    let mut analytical: Option<SolveReport> = None;
    for &e in engines {
        let name = engine_name(e);
        let t = Instant::now();
        let run = solve_cc_acopf(&net, &y, &model, &engine(e, samples), &crit).and_then(|rep| {
            let s = &rep.solution;
            let stats = evaluate_violations(&net, &y, &s.point, &s.dispatch, &model, &eval, &limits)?;
            Ok((rep, stats))
        });
        let secs = t.elapsed().as_secs_f64();
        match run {
            Ok((rep, stats)) => {
                write_solve_outputs(out_dir, &format!("compare_{name}"), &net, &y, &model, &rep)?;
                summary.push(CompareRow {
                    engine: name,
                    status: "ok".into(),
                    converged: Some(rep.converged),
                    iterations: Some(rep.history.len()),
                    cost: Some(rep.cost()),
                    max_eps_emp: Some(stats.max_eps_emp()),
                    eps_joint: Some(stats.eps_joint),
                    seconds: Some(secs),
                });
                if e == EngineArg::Analytical {
                    analytical = Some(rep);
                }
            }
            Err(err) => {
                log::warn!("{name} engine failed: {err}");
                summary.push(CompareRow {
                    engine: name,
                    status: format!("failed: {err}"),
                    converged: None,
                    iterations: None,
                    cost: None,
                    max_eps_emp: None,
                    eps_joint: None,
                    seconds: Some(secs),
                });
            }
        }
    }
    write(&out_dir.join("compare_summary.json"), &to_canonical_json(&summary)?)?;
    let mut w = String::from("engine,status,converged,iterations,cost,max_eps_emp,eps_joint,seconds\n");
    let opt = |x: Option<f64>| x.map(|v| format!("{v:.6}")).unwrap_or_default();
    for r in &summary {
        w.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.engine,
            r.status.replace(',', ";"),
            r.converged.map(|c| c.to_string()).unwrap_or_default(),
            r.iterations.map(|c| c.to_string()).unwrap_or_default(),
            opt(r.cost),
            opt(r.max_eps_emp),
            opt(r.eps_joint),
            opt(r.seconds),
        ));
    }
    write(&out_dir.join("compare_summary.csv"), &w)?;
    stdout(&w)?;

    // Margins of every engine at one operating point and on one sample set.
    let point = match analytical {
        Some(rep) => rep.solution,
        None => solve_acopf(&net, &y, &TightenedBounds::untightened(&net), None)?,
    };
    let n_s = scenario_sample_count(model.epsilons.eps_joint, SCENARIO_BETA, scenario_dimension(&net))?;
    let shared = sample_omega(&model.sigma, n_s, SampleKind::Gaussian, model.seed)?;
    let mut columns: Vec<(&str, UncertaintyMargins)> = Vec::new();
    for &e in engines {
        let m = match e {
            EngineArg::Analytical => {
                let sens = compute_sensitivities(&net, &y, &point.point, &model)?;
                analytical_margins(&net, &sens, &model)?
            }
            EngineArg::Mc => monte_carlo_margins(&net, &y, &point.point, &point.dispatch, &model, &shared)?,
            EngineArg::Scenario => scenario_margins(&net, &y, &point.point, &point.dispatch, &model, &shared)?,
        };
        columns.push((engine_name(e), m));
    }
    write(&out_dir.join("compare_margins.csv"), &margin_table(&net, &columns))?;
    Ok(())
}

fn margin_table(net: &NetworkCase, columns: &[(&str, UncertaintyMargins)]) -> String {
    let mut out = String::from("constraint_id,kind");
    for (name, _) in columns {
        out.push_str(&format!(",{name}_upper,{name}_lower"));
    }
    out.push('\n');
    for c in constraint_ids(net) {
        out.push_str(&format!("{},{}", constraint_label(net, c), c.category.name()));
        for (_, m) in columns {
            let (up, lo) = match c.category {
                Category::P => (m.lambda_p[c.index].upper, m.lambda_p[c.index].lower),
                Category::Q => {
                    let pos = net.gen_buses.binary_search(&c.index).expect("generator bus");
                    (m.lambda_q[pos].upper, m.lambda_q[pos].lower)
                }
                Category::V => (m.lambda_v[c.index].upper, m.lambda_v[c.index].lower),
                Category::I => (m.lambda_i[c.index], 0.0),
            };
            out.push_str(&format!(",{up:.9e},{lo:.9e}"));
        }
        out.push('\n');
    }
    out
}

fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let bad = || Error::Domain(format!("cannot parse ε grid `{text}`"));
    let parts: Vec<&str> = text.split(':').collect();
    let grid = if parts.len() == 3 {
        let v: Vec<f64> = parts
            .iter()
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let (start, stop, step) = (v[0], v[1], v[2]);
        if !(step > 0.0) || stop < start {
            return Err(bad());
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize;
        (0..=n).map(|k| start + k as f64 * step).collect()
    } else {
        text.split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?
    };
    if grid.is_empty() || grid.iter().any(|&e| !(e > 0.0 && e < 0.5)) {
        return Err(Error::Domain("every ε of the grid must lie in (0, 0.5)".into()));
    }
    Ok(grid)
}

pub fn sweep(
    case: &CaseArgs,
    unc: &UncArgs,
    crit: &CritArgs,
    grid: &str,
    samples: usize,
    out_dir: &Path,
) -> CmdResult {
    let grid = parse_grid(grid)?;
    let (net, y) = load_case(case)?;
    let model = load_model(unc, &net)?;
    let rows = violation_size_sweep(
        &net,
        &y,
        &model,
        &grid,
        samples,
        evaluation_seed(&model),
        &criteria(crit),
    )?;
    let csv = sweep_csv(&rows)?;
    write(&out_dir.join("sweep.csv"), &csv)?;
    write(&out_dir.join("sweep.json"), &to_canonical_json(&rows)?)?;
    stdout(&csv)?;
    Ok(())
}

#[derive(Serialize)]
struct SensitivityOutput {
    factors: ccopf::sensitivity::SensitivityFactors,
    #[serde(skip_serializing_if = "Option::is_none")]
    finite_difference: Option<ccopf::sensitivity::FdReport>,
}

pub fn sensitivities(
    case: &CaseArgs,
    unc: &UncArgs,
    fd_step: Option<f64>,
    out: Option<&Path>,
) -> CmdResult {
    let (net, y) = load_case(case)?;
    let model = load_model(unc, &net)?;
    let sol = solve_acopf(&net, &y, &TightenedBounds::untightened(&net), None)?;
    let factors = compute_sensitivities(&net, &y, &sol.point, &model)?;
    let finite_difference = match fd_step {
        Some(h) => {
            let r = check_sensitivities_fd(&net, &y, &sol.point, &model, h, 1e-3)?;
            log::info!("largest finite-difference deviation {:.3e}", r.max_rel());
            Some(r)
        }
        None => None,
    };
    emit(
        out,
        &to_canonical_json(&SensitivityOutput {
            factors,
            finite_difference,
        })?,
    )?;
    Ok(())
}
