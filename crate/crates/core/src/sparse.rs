//! Thin wrapper over the faer sparse LU with cached symbolic analysis.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;

use crate::error::{Error, Result};

/// Square sparse matrix in triplet form; duplicate entries are summed.
#[derive(Debug, Clone, Default)]
pub struct Triplets {
    pub n: usize,
    pub entries: Vec<Triplet<usize, usize, f64>>,
}

impl Triplets {
    pub fn new(n: usize) -> Self {
        Self { n, entries: Vec::new() }
    }

    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        self.entries.push(Triplet::new(row, col, value));
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.n]; self.n];
        for t in &self.entries {
            out[t.row][t.col] += t.val;
        }
        out
    }
}

/// LU factorizer that reuses its symbolic analysis while the sparsity
/// pattern stays the same.
#[derive(Default)]
pub struct LuFactorizer {
    cached: Option<(Vec<usize>, Vec<usize>, SymbolicLu<usize>)>,
}

/// Numeric factor of one matrix.
pub struct Factor {
    n: usize,
    lu: Option<Lu<usize, f64>>,
}

impl LuFactorizer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Factors the matrix. Structural and numerical singularity both map to
    /// [`Error::SingularJacobian`].
    pub fn factor(&mut self, mat: &Triplets) -> Result<Factor> {
        if mat.n == 0 {
            return Ok(Factor { n: 0, lu: None });
        }
        let csc = SparseColMat::<usize, f64>::try_new_from_triplets(mat.n, mat.n, &mat.entries)
            .map_err(|_| Error::SingularJacobian)?;
        if csc.val().iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularJacobian);
        }
        let col_ptr = csc.symbolic().col_ptr().to_vec();
        let row_idx = csc.symbolic().row_idx().to_vec();
        let reuse = matches!(&self.cached, Some((c, r, _)) if *c == col_ptr && *r == row_idx);
        if !reuse {
            let sym =
                SymbolicLu::try_new(csc.symbolic()).map_err(|_| Error::SingularJacobian)?;
            self.cached = Some((col_ptr, row_idx, sym));
        }
        let sym = self.cached.as_ref().map(|(_, _, s)| s.clone()).unwrap();
        let lu = Lu::try_new_with_symbolic(sym, csc.as_ref()).map_err(|_| Error::SingularJacobian)?;
        Ok(Factor { n: mat.n, lu: Some(lu) })
    }
}

impl Factor {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        Ok(self.solve_many(std::slice::from_ref(&rhs.to_vec()))?.pop().unwrap())
    }

    /// Solves for several right-hand sides at once.
    pub fn solve_many(&self, rhs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let Some(lu) = &self.lu else {
            return Ok(rhs.iter().map(|_| Vec::new()).collect());
        };
        if rhs.is_empty() {
            return Ok(Vec::new());
        }
        let b = Mat::from_fn(self.n, rhs.len(), |i, j| rhs[j][i]);
        let x = lu.solve(&b);
        let out: Vec<Vec<f64>> = (0..rhs.len())
            .map(|j| (0..self.n).map(|i| x[(i, j)]).collect())
            .collect();
        if out.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::SingularJacobian);
        }
        Ok(out)
    }
}

/// Solves `A x = b` with a fresh factorization.
pub fn solve(mat: &Triplets, rhs: &[f64]) -> Result<Vec<f64>> {
    LuFactorizer::new().factor(mat)?.solve(rhs)
}
