//! Bilinear polar terms `Re(w · v_a · v_b · e^{i(θ_a − θ_b)})`.
//!
//! Bus injections, squared branch currents and their derivatives are all
//! sums of such terms, so value, gradient and Hessian are computed here once.

use num_complex::Complex64;

/// `Re(w · v_a · v_b · e^{i(θ_a − θ_b)})`; when `a == b` this is `Re(w) · v_a²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarTerm {
    pub w: Complex64,
    pub a: usize,
    pub b: usize,
}

/// Local derivatives of a term with respect to `(θ_a, θ_b, v_a, v_b)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct TermDerivatives {
    pub value: f64,
    pub grad: [f64; 4],
    /// Upper triangle is sufficient; stored full for convenience.
    pub hess: [[f64; 4]; 4],
}

pub const THETA_A: usize = 0;
pub const THETA_B: usize = 1;
pub const V_A: usize = 2;
pub const V_B: usize = 3;

impl PolarTerm {
    pub fn new(w: Complex64, a: usize, b: usize) -> Self {
        Self { w, a, b }
    }

    fn phasor(&self, theta: &[f64], v: &[f64]) -> Complex64 {
        let ang = theta[self.a] - theta[self.b];
        self.w * Complex64::from_polar(v[self.a] * v[self.b], ang)
    }

    pub fn value(&self, theta: &[f64], v: &[f64]) -> f64 {
        if self.a == self.b {
            self.w.re * v[self.a] * v[self.a]
        } else {
            self.phasor(theta, v).re
        }
    }

    /// Gradient only (value included).
    pub fn gradient(&self, theta: &[f64], v: &[f64]) -> (f64, [f64; 4]) {
        if self.a == self.b {
            let va = v[self.a];
            let value = self.w.re * va * va;
            return (value, [0.0, 0.0, 2.0 * self.w.re * va, 0.0]);
        }
        let t = self.phasor(theta, v);
        let (va, vb) = (v[self.a], v[self.b]);
        (t.re, [-t.im, t.im, t.re / va, t.re / vb])
    }

    pub fn derivatives(&self, theta: &[f64], v: &[f64]) -> TermDerivatives {
        let mut d = TermDerivatives::default();
        if self.a == self.b {
            let va = v[self.a];
            d.value = self.w.re * va * va;
            d.grad[V_A] = 2.0 * self.w.re * va;
            d.hess[V_A][V_A] = 2.0 * self.w.re;
            return d;
        }
        let t = self.phasor(theta, v);
        let (va, vb) = (v[self.a], v[self.b]);
        d.value = t.re;
        d.grad = [-t.im, t.im, t.re / va, t.re / vb];
        let h = &mut d.hess;
        h[THETA_A][THETA_A] = -t.re;
        h[THETA_B][THETA_B] = -t.re;
        h[THETA_A][THETA_B] = t.re;
        h[THETA_A][V_A] = -t.im / va;
        h[THETA_A][V_B] = -t.im / vb;
        h[THETA_B][V_A] = t.im / va;
        h[THETA_B][V_B] = t.im / vb;
        h[V_A][V_B] = t.re / (va * vb);
        for i in 0..4 {
            for j in 0..i {
                h[i][j] = h[j][i];
            }
        }
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval(term: &PolarTerm, x: &[f64; 4]) -> f64 {
        let mut theta = vec![0.0; 3];
        let mut v = vec![1.0; 3];
        theta[term.a] = x[0];
        theta[term.b] = x[1];
        v[term.a] = x[2];
        v[term.b] = x[3];
        term.value(&theta, &v)
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let term = PolarTerm::new(Complex64::new(0.7, -1.3), 0, 2);
        let x = [0.11, -0.2, 1.03, 0.97];
        let mut theta = vec![0.0; 3];
        let mut v = vec![1.0; 3];
        theta[0] = x[0];
        theta[2] = x[1];
        v[0] = x[2];
        v[2] = x[3];
        let d = term.derivatives(&theta, &v);
        let h = 1e-6;
        for i in 0..4 {
            let mut xp = x;
            let mut xm = x;
            xp[i] += h;
            xm[i] -= h;
            let fd = (eval(&term, &xp) - eval(&term, &xm)) / (2.0 * h);
            assert!((fd - d.grad[i]).abs() < 1e-8, "grad {i}: {fd} vs {}", d.grad[i]);
            for j in 0..4 {
                let mut xpp = x;
                let mut xpm = x;
                let mut xmp = x;
                let mut xmm = x;
                let hh = 1e-4;
                xpp[i] += hh;
                xpp[j] += hh;
                xpm[i] += hh;
                xpm[j] -= hh;
                xmp[i] -= hh;
                xmp[j] += hh;
                xmm[i] -= hh;
                xmm[j] -= hh;
                let fd2 = (eval(&term, &xpp) - eval(&term, &xpm) - eval(&term, &xmp)
                    + eval(&term, &xmm))
                    / (4.0 * hh * hh);
                assert!((fd2 - d.hess[i][j]).abs() < 1e-6, "hess {i}{j}");
            }
        }
    }

    #[test]
    fn diagonal_term_is_quadratic_in_magnitude() {
        let term = PolarTerm::new(Complex64::new(2.0, 5.0), 1, 1);
        let theta = [0.0, 0.4];
        let v = [1.0, 1.1];
        let d = term.derivatives(&theta, &v);
        assert!((d.value - 2.0 * 1.21).abs() < 1e-15);
        assert!((d.grad[V_A] - 4.4).abs() < 1e-15);
        assert_eq!(d.hess[V_A][V_A], 4.0);
        assert_eq!(d.grad[THETA_A], 0.0);
    }
}
