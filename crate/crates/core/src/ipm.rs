//! Primal-dual interior-point method for
//! `min f(x)  s.t.  g(x) = 0,  h(x) ≤ 0`,
//! following the MIPS formulation with slacks `z` and the reduced KKT system
//! `[M dgᵀ; dg 0]`, plus an optional Mehrotra predictor-corrector step.

use serde::{Deserialize, Serialize};

use crate::sparse::{LuFactorizer, Triplets};

/// Sparse row of a constraint Jacobian: `(variable, ∂)` pairs.
pub type SparseRow = Vec<(usize, f64)>;

#[derive(Debug, Clone, Default)]
pub struct Evaluation {
    pub f: f64,
    pub df: Vec<f64>,
    pub g: Vec<f64>,
    pub dg: Vec<SparseRow>,
    pub h: Vec<f64>,
    pub dh: Vec<SparseRow>,
}

pub trait NlpProblem {
    fn dim(&self) -> usize;
    fn evaluate(&self, x: &[f64]) -> Evaluation;
    /// Pushes the Hessian of `obj_factor·f + lamᵀg + muᵀh` as full (both
    /// triangles) triplets. The emitted pattern must not depend on values.
    fn hessian(&self, x: &[f64], lam: &[f64], mu: &[f64], obj_factor: f64, out: &mut Triplets);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverStatus {
    Converged,
    IterationLimit,
    Infeasible,
    NumericalFailure,
}

impl std::fmt::Display for SolverStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SolverStatus::Converged => "converged",
            SolverStatus::IterationLimit => "iteration limit",
            SolverStatus::Infeasible => "infeasible",
            SolverStatus::NumericalFailure => "numerical failure",
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct KktResiduals {
    pub feascond: f64,
    pub gradcond: f64,
    pub compcond: f64,
    pub costcond: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IpmOptions {
    pub feastol: f64,
    pub gradtol: f64,
    pub comptol: f64,
    pub costtol: f64,
    pub max_iter: usize,
    /// Fraction-to-boundary factor.
    pub xi: f64,
    /// Centering parameter of the plain step.
    pub sigma: f64,
    pub z0: f64,
    pub alpha_min: f64,
    pub cost_mult: f64,
    pub predictor_corrector: bool,
}

impl Default for IpmOptions {
    fn default() -> Self {
        Self {
            feastol: 1e-6,
            gradtol: 1e-6,
            comptol: 1e-6,
            costtol: 1e-6,
            max_iter: 150,
            xi: 0.99995,
            sigma: 0.1,
            z0: 1.0,
            alpha_min: 1e-8,
            cost_mult: 1.0,
            predictor_corrector: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IpmResult {
    pub x: Vec<f64>,
    /// Unscaled objective.
    pub f: f64,
    pub lam: Vec<f64>,
    pub mu: Vec<f64>,
    pub z: Vec<f64>,
    pub status: SolverStatus,
    pub iterations: usize,
    pub residuals: KktResiduals,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `df + dgᵀλ + dhᵀμ`.
fn lagrangian_gradient(ev: &Evaluation, lam: &[f64], mu: &[f64], obj: f64) -> Vec<f64> {
    let mut lx: Vec<f64> = ev.df.iter().map(|d| d * obj).collect();
    for (row, &l) in ev.dg.iter().zip(lam) {
        for &(c, v) in row {
            lx[c] += v * l;
        }
    }
    for (row, &m) in ev.dh.iter().zip(mu) {
        for &(c, v) in row {
            lx[c] += v * m;
        }
    }
    lx
}

fn row_dot(row: &SparseRow, x: &[f64]) -> f64 {
    row.iter().map(|&(c, v)| v * x[c]).sum()
}

/// Largest step in (0, 1] keeping `v + α dv ≥ (1 − xi) v`.
fn max_step(v: &[f64], dv: &[f64], xi: f64) -> f64 {
    let mut a = 1.0f64;
    for (&vi, &di) in v.iter().zip(dv) {
        if di < 0.0 {
            a = a.min(xi * vi / -di);
        }
    }
    a
}

struct Conditions {
    res: KktResiduals,
}

impl Conditions {
    fn new(x: &[f64], z: &[f64], lam: &[f64], mu: &[f64], ev: &Evaluation, lx: &[f64], f: f64, f0: f64) -> Self {
        let maxh = ev.h.iter().fold(0.0f64, |m, &v| m.max(v));
        let feascond = inf_norm(&ev.g).max(maxh) / (1.0 + inf_norm(x).max(inf_norm(z)));
        let gradcond = inf_norm(lx) / (1.0 + inf_norm(lam).max(inf_norm(mu)));
        let compcond = dot(z, mu) / (1.0 + inf_norm(x));
        let costcond = (f - f0).abs() / (1.0 + f0.abs());
        Self {
            res: KktResiduals {
                feascond,
                gradcond,
                compcond,
                costcond,
            },
        }
    }

    fn converged(&self, o: &IpmOptions) -> bool {
        self.res.feascond < o.feastol
            && self.res.gradcond < o.gradtol
            && self.res.compcond < o.comptol
            && self.res.costcond < o.costtol
    }
}

/// Runs the interior-point iteration from `x0`.
pub fn solve<P: NlpProblem>(problem: &P, x0: &[f64], opts: &IpmOptions) -> IpmResult {
    let nx = problem.dim();
    let cm = opts.cost_mult;
    let mut x = x0.to_vec();
    let mut ev = problem.evaluate(&x);
    let neq = ev.g.len();
    let niq = ev.h.len();

    let mut gamma = 1.0;
    let mut lam = vec![0.0; neq];
    let mut z: Vec<f64> = ev.h.iter().map(|&h| if h < -opts.z0 { -h } else { opts.z0 }).collect();
    let mut mu: Vec<f64> = z.iter().map(|&zi| if gamma / zi > opts.z0 { gamma / zi } else { opts.z0 }).collect();

    let mut f = ev.f * cm;
    let mut lx = lagrangian_gradient(&ev, &lam, &mu, cm);
    let mut cond = Conditions::new(&x, &z, &lam, &mu, &ev, &lx, f, f);
    let mut status = SolverStatus::IterationLimit;
    let mut iterations = 0;
    let mut lu = LuFactorizer::new();
    let mut hess = Triplets::new(nx);

    if cond.converged(opts) {
        status = SolverStatus::Converged;
    }
    while status == SolverStatus::IterationLimit && iterations < opts.max_iter {
        iterations += 1;
        hess.entries.clear();
        problem.hessian(&x, &lam, &mu, cm, &mut hess);
        let mut kkt = Triplets::new(nx + neq);
        kkt.entries.extend_from_slice(&hess.entries);
        for (i, row) in ev.dh.iter().enumerate() {
            let w = mu[i] / z[i];
            for &(a, va) in row {
                for &(b, vb) in row {
                    kkt.push(a, b, w * va * vb);
                }
            }
        }
        for (j, row) in ev.dg.iter().enumerate() {
            for &(c, v) in row {
                kkt.push(c, nx + j, v);
                kkt.push(nx + j, c, v);
            }
        }
        let Ok(factor) = lu.factor(&kkt) else {
            status = SolverStatus::NumericalFailure;
            break;
        };

        // Direction for complementarity target `gamma_t` and correction `corr`.
        let direction = |gamma_t: f64, corr: &[f64]| -> Option<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
            let mut rhs = vec![0.0; nx + neq];
            for c in 0..nx {
                rhs[c] = -lx[c];
            }
            for (i, row) in ev.dh.iter().enumerate() {
                let s = (mu[i] * ev.h[i] + gamma_t + corr[i]) / z[i];
                for &(c, v) in row {
                    rhs[c] -= v * s;
                }
            }
            for j in 0..neq {
                rhs[nx + j] = -ev.g[j];
            }
            let sol = factor.solve(&rhs).ok()?;
            let dx = sol[..nx].to_vec();
            let dlam = sol[nx..].to_vec();
            let dz: Vec<f64> = (0..niq).map(|i| -ev.h[i] - z[i] - row_dot(&ev.dh[i], &dx)).collect();
            let dmu: Vec<f64> = (0..niq)
                .map(|i| -mu[i] + (gamma_t + corr[i] - mu[i] * dz[i]) / z[i])
                .collect();
            let finite = dx.iter().chain(&dlam).chain(&dz).chain(&dmu).all(|v| v.is_finite());
            finite.then_some((dx, dlam, dz, dmu))
        };

        let zeros = vec![0.0; niq];
        let mut step = None;
        if opts.predictor_corrector && niq > 0 {
            if let Some((_, _, dz_a, dmu_a)) = direction(0.0, &zeros) {
                let ap = max_step(&z, &dz_a, 1.0);
                let ad = max_step(&mu, &dmu_a, 1.0);
                let mu_cur = dot(&z, &mu) / niq as f64;
                let mu_aff = (0..niq)
                    .map(|i| (z[i] + ap * dz_a[i]) * (mu[i] + ad * dmu_a[i]))
                    .sum::<f64>()
                    / niq as f64;
                let sigma = (mu_aff / mu_cur).clamp(0.0, 1.0).powi(3);
                let corr: Vec<f64> = (0..niq).map(|i| -dz_a[i] * dmu_a[i]).collect();
                step = direction(sigma * mu_cur, &corr);
            }
        }
        let Some((dx, dlam, dz, dmu)) = step.or_else(|| direction(gamma, &zeros)) else {
            status = SolverStatus::NumericalFailure;
            break;
        };

        let alphap = max_step(&z, &dz, opts.xi);
        let alphad = max_step(&mu, &dmu, opts.xi);
        for c in 0..nx {
            x[c] += alphap * dx[c];
        }
        for i in 0..niq {
            z[i] += alphap * dz[i];
            mu[i] += alphad * dmu[i];
        }
        for j in 0..neq {
            lam[j] += alphad * dlam[j];
        }
        if niq > 0 {
            gamma = opts.sigma * dot(&z, &mu) / niq as f64;
        }

        let f0 = f;
        ev = problem.evaluate(&x);
        f = ev.f * cm;
        lx = lagrangian_gradient(&ev, &lam, &mu, cm);
        cond = Conditions::new(&x, &z, &lam, &mu, &ev, &lx, f, f0);
        if cond.converged(opts) {
            status = SolverStatus::Converged;
            break;
        }
        if x.iter().any(|v| !v.is_finite()) || gamma < f64::EPSILON || gamma > 1.0 / f64::EPSILON {
            status = SolverStatus::NumericalFailure;
            break;
        }
        if alphap < opts.alpha_min || alphad < opts.alpha_min {
            status = if cond.res.feascond > opts.feastol {
                SolverStatus::Infeasible
            } else {
                SolverStatus::NumericalFailure
            };
            break;
        }
    }
    IpmResult {
        f: ev.f,
        x,
        lam,
        mu,
        z,
        status,
        iterations,
        residuals: cond.res,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// min (x0 - 0.5)² + (x1 - 2)²  s.t.  x0 + x1 = 2,  x0² ≤ 0.25
    struct Toy;

    impl NlpProblem for Toy {
        fn dim(&self) -> usize {
            2
        }

        fn evaluate(&self, x: &[f64]) -> Evaluation {
            Evaluation {
                f: (x[0] - 0.5).powi(2) + (x[1] - 2.0).powi(2),
                df: vec![2.0 * (x[0] - 0.5), 2.0 * (x[1] - 2.0)],
                g: vec![x[0] + x[1] - 2.0],
                dg: vec![vec![(0, 1.0), (1, 1.0)]],
                h: vec![x[0] * x[0] - 0.25],
                dh: vec![vec![(0, 2.0 * x[0])]],
            }
        }

        fn hessian(&self, _x: &[f64], _lam: &[f64], mu: &[f64], obj: f64, out: &mut Triplets) {
            out.push(0, 0, 2.0 * obj + 2.0 * mu[0]);
            out.push(1, 1, 2.0 * obj);
        }
    }

    #[test]
    fn solves_toy_problem_both_variants() {
        for pc in [false, true] {
            let opts = IpmOptions {
                predictor_corrector: pc,
                ..Default::default()
            };
            let r = solve(&Toy, &[0.0, 0.0], &opts);
            assert_eq!(r.status, SolverStatus::Converged, "pc = {pc}");
            // the inequality is inactive at (0.25, 1.75)
            assert!((r.x[0] - 0.25).abs() < 1e-5 && (r.x[1] - 1.75).abs() < 1e-5, "{:?}", r.x);
        }
    }

    #[test]
    fn active_inequality() {
        // the equality-only optimum x0 = 2 violates x0² ≤ 0.25, so the bound binds
        struct Tight;
        impl NlpProblem for Tight {
            fn dim(&self) -> usize {
                2
            }
            fn evaluate(&self, x: &[f64]) -> Evaluation {
                let mut e = Toy.evaluate(x);
                e.f = (x[0] - 2.0).powi(2) + (x[1] - 0.0).powi(2);
                e.df = vec![2.0 * (x[0] - 2.0), 2.0 * x[1]];
                e
            }
            fn hessian(&self, x: &[f64], lam: &[f64], mu: &[f64], obj: f64, out: &mut Triplets) {
                Toy.hessian(x, lam, mu, obj, out)
            }
        }
        let r = solve(&Tight, &[0.0, 0.0], &IpmOptions::default());
        assert_eq!(r.status, SolverStatus::Converged);
        assert!((r.x[0] - 0.5).abs() < 1e-5 && (r.x[1] - 1.5).abs() < 1e-5, "{:?}", r.x);
        assert!(r.mu[0] > 0.0);
    }
}
