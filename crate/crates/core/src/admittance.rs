//! Bus admittance matrix (Π-model with taps and phase shifters) and branch currents.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::network::NetworkCase;
use crate::polar::PolarTerm;

/// Terminal admittances of one branch: `I_f = yff·V_f + yft·V_t`, `I_t = ytf·V_f + ytt·V_t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchAdmittance {
    pub yff: Complex64,
    pub yft: Complex64,
    pub ytf: Complex64,
    pub ytt: Complex64,
}

#[derive(Debug, Clone)]
pub struct AdmittanceMatrix {
    n: usize,
    /// Row-wise nonzeros `(column, G + jB)`, columns ascending.
    rows: Vec<Vec<(usize, Complex64)>>,
    pub branches: Vec<BranchAdmittance>,
    p_terms: Vec<Vec<PolarTerm>>,
    q_terms: Vec<Vec<PolarTerm>>,
    current_terms: Vec<[Vec<PolarTerm>; 2]>,
}

impl AdmittanceMatrix {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, j: usize, k: usize) -> Complex64 {
        self.rows[j]
            .binary_search_by_key(&k, |&(c, _)| c)
            .map_or(Complex64::new(0.0, 0.0), |pos| self.rows[j][pos].1)
    }

    pub fn g(&self, j: usize, k: usize) -> f64 {
        self.get(j, k).re
    }

    pub fn b(&self, j: usize, k: usize) -> f64 {
        self.get(j, k).im
    }

    pub fn row(&self, j: usize) -> &[(usize, Complex64)] {
        &self.rows[j]
    }

    /// Terms whose sum is the active injection at bus `j`.
    pub fn p_terms(&self, j: usize) -> &[PolarTerm] {
        &self.p_terms[j]
    }

    pub fn q_terms(&self, j: usize) -> &[PolarTerm] {
        &self.q_terms[j]
    }

    /// Terms whose sum is `|I|²` at branch end `end` (0 = from, 1 = to).
    pub fn current_sq_terms(&self, branch: usize, end: usize) -> &[PolarTerm] {
        &self.current_terms[branch][end]
    }

    /// Complex bus injections `S = V ∘ conj(Y V)`.
    pub fn injections(&self, theta: &[f64], v: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let volt: Vec<Complex64> = theta
            .iter()
            .zip(v)
            .map(|(&a, &m)| Complex64::from_polar(m, a))
            .collect();
        let mut p = vec![0.0; self.n];
        let mut q = vec![0.0; self.n];
        for j in 0..self.n {
            let current: Complex64 = self.rows[j].iter().map(|&(k, y)| y * volt[k]).sum();
            let s = volt[j] * current.conj();
            p[j] = s.re;
            q[j] = s.im;
        }
        (p, q)
    }

    /// Current magnitudes `(i_from, i_to)` for every in-service branch.
    pub fn branch_currents(&self, theta: &[f64], v: &[f64], net: &NetworkCase) -> Vec<(f64, f64)> {
        net.branches
            .iter()
            .zip(&self.branches)
            .map(|(br, y)| {
                let vf = Complex64::from_polar(v[br.from], theta[br.from]);
                let vt = Complex64::from_polar(v[br.to], theta[br.to]);
                ((y.yff * vf + y.yft * vt).norm(), (y.ytf * vf + y.ytt * vt).norm())
            })
            .collect()
    }
}

/// Assembles the bus admittance matrix of `net`.
pub fn build_admittance(net: &NetworkCase) -> Result<AdmittanceMatrix> {
    let n = net.n_bus();
    let mut dense: Vec<std::collections::BTreeMap<usize, Complex64>> = vec![Default::default(); n];
    let mut branches = Vec::with_capacity(net.branches.len());

    for (l, br) in net.branches.iter().enumerate() {
        let z = Complex64::new(br.r, br.x);
        if z.norm_sqr() == 0.0 {
            return Err(Error::ZeroImpedance { branch: l });
        }
        let ys = z.inv();
        let charging = Complex64::new(0.0, br.b / 2.0);
        let t = Complex64::from_polar(br.tap, br.shift);
        let ytt = ys + charging;
        let y = BranchAdmittance {
            yff: ytt / (br.tap * br.tap),
            yft: -ys / t.conj(),
            ytf: -ys / t,
            ytt,
        };
        *dense[br.from].entry(br.from).or_default() += y.yff;
        *dense[br.from].entry(br.to).or_default() += y.yft;
        *dense[br.to].entry(br.from).or_default() += y.ytf;
        *dense[br.to].entry(br.to).or_default() += y.ytt;
        branches.push(y);
    }
    for (i, bus) in net.buses.iter().enumerate() {
        let shunt = Complex64::new(bus.gs, bus.bs);
        if shunt != Complex64::new(0.0, 0.0) {
            *dense[i].entry(i).or_default() += shunt;
        }
    }

    let rows: Vec<Vec<(usize, Complex64)>> = dense
        .into_iter()
        .map(|r| r.into_iter().collect())
        .collect();
    for (j, row) in rows.iter().enumerate() {
        if row.iter().any(|(_, y)| !(y.re.is_finite() && y.im.is_finite())) {
            return Err(Error::Network(format!("non-finite admittance in row {j}")));
        }
    }

    let minus_i = Complex64::new(0.0, -1.0);
    let p_terms = rows
        .iter()
        .enumerate()
        .map(|(j, row)| row.iter().map(|&(k, y)| PolarTerm::new(y.conj(), j, k)).collect())
        .collect();
    let q_terms = rows
        .iter()
        .enumerate()
        .map(|(j, row)| {
            row.iter()
                .map(|&(k, y)| PolarTerm::new(minus_i * y.conj(), j, k))
                .collect()
        })
        .collect();
    let current_terms = net
        .branches
        .iter()
        .zip(&branches)
        .map(|(br, y)| {
            let end = |own: usize, other: usize, ya: Complex64, yb: Complex64| {
                vec![
                    PolarTerm::new(Complex64::new(ya.norm_sqr(), 0.0), own, own),
                    PolarTerm::new(Complex64::new(yb.norm_sqr(), 0.0), other, other),
                    PolarTerm::new(2.0 * ya * yb.conj(), own, other),
                ]
            };
            [
                end(br.from, br.to, y.yff, y.yft),
                end(br.to, br.from, y.ytt, y.ytf),
            ]
        })
        .collect();

    Ok(AdmittanceMatrix {
        n,
        rows,
        branches,
        p_terms,
        q_terms,
        current_terms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_bus(x: f64) -> NetworkCase {
        crate::testutil::two_bus_network(0.0, x, 0.0)
    }

    #[test]
    fn lossless_line_susceptance() {
        let net = two_bus(0.1);
        let y = build_admittance(&net).unwrap();
        assert!((y.b(0, 1) - 10.0).abs() < 1e-12);
        assert!((y.b(1, 0) - 10.0).abs() < 1e-12);
        assert!((y.b(0, 0) + 10.0).abs() < 1e-12);
        assert!((y.b(1, 1) + 10.0).abs() < 1e-12);
        for j in 0..2 {
            for k in 0..2 {
                assert_eq!(y.g(j, k), 0.0);
            }
        }
    }

    #[test]
    fn no_branches_gives_zero_matrix() {
        let mut net = two_bus(0.1);
        net.branches.clear();
        let y = build_admittance(&net).unwrap();
        assert!(y.row(0).is_empty() && y.row(1).is_empty());
    }

    #[test]
    fn unit_tap_equals_plain_line() {
        let plain = build_admittance(&crate::testutil::two_bus_network(0.02, 0.1, 0.05)).unwrap();
        let mut net = crate::testutil::two_bus_network(0.02, 0.1, 0.05);
        net.branches[0].tap = 1.0;
        net.branches[0].shift = 0.0;
        let tapped = build_admittance(&net).unwrap();
        for j in 0..2 {
            for k in 0..2 {
                assert_eq!(plain.get(j, k), tapped.get(j, k));
            }
        }
    }

    #[test]
    fn zero_impedance_rejected() {
        let net = crate::testutil::two_bus_network(0.0, 0.0, 0.0);
        assert!(matches!(build_admittance(&net), Err(Error::ZeroImpedance { branch: 0 })));
    }

    #[test]
    fn flat_profile_has_no_current() {
        let net = two_bus(0.1);
        let y = build_admittance(&net).unwrap();
        let cur = y.branch_currents(&[0.0, 0.0], &[1.0, 1.0], &net);
        assert_eq!(cur, vec![(0.0, 0.0)]);
    }

    #[test]
    fn two_bus_current_by_hand() {
        let net = two_bus(0.1);
        let y = build_admittance(&net).unwrap();
        let (i_f, i_t) = y.branch_currents(&[0.0, -0.01], &[1.0, 1.0], &net)[0];
        // |(V1 - V2) / (j x)| with V2 = e^{-0.01 j}
        let expected = (2.0 * (1.0 - 0.01f64.cos())).sqrt() / 0.1;
        assert!((i_f - expected).abs() < 1e-12);
        assert!((i_f - 0.099_999_583).abs() < 1e-8);
        assert_eq!(i_f, i_t);
    }

    #[test]
    fn shunt_enters_diagonal() {
        let mut net = two_bus(0.1);
        net.buses[1].bs = 0.3;
        net.buses[1].gs = 0.1;
        let y = build_admittance(&net).unwrap();
        assert!((y.b(1, 1) - (-10.0 + 0.3)).abs() < 1e-12);
        assert!((y.g(1, 1) - 0.1).abs() < 1e-12);
    }
}
