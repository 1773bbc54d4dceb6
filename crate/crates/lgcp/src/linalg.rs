//! Dense/sparse linear-algebra helpers shared by the GMRF and inference code.
//!
//! Latent dimensions stay in the hundreds at the scales this crate targets,
//! so factorizations are dense Cholesky under the hood. Design matrices are
//! kept sparse (a handful of entries per pixel row).

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Row-major sparse matrix with short rows: one `(column, value)` pair per
/// active model component of a pixel.
#[derive(Debug, Clone)]
pub struct SparseRows {
    ncols: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseRows {
    pub fn new(ncols: usize) -> Self {
        SparseRows { ncols, rows: Vec::new() }
    }

    pub fn push_row(&mut self, entries: Vec<(usize, f64)>) {
        debug_assert!(entries.iter().all(|&(c, _)| c < self.ncols));
        self.rows.push(entries);
    }

    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    /// `A x`
    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.rows.len());
        for (i, row) in self.rows.iter().enumerate() {
            out[i] = row.iter().map(|&(c, v)| v * x[c]).sum();
        }
        out
    }

    /// `A' w`
    pub fn tr_mul_vec(&self, w: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.ncols);
        for (i, row) in self.rows.iter().enumerate() {
            for &(c, v) in row {
                out[c] += v * w[i];
            }
        }
        out
    }

    /// `A' diag(w) A` accumulated into a dense matrix.
    pub fn weighted_gram(&self, w: &DVector<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.ncols, self.ncols);
        for (i, row) in self.rows.iter().enumerate() {
            let wi = w[i];
            for &(c1, v1) in row {
                for &(c2, v2) in row {
                    out[(c1, c2)] += wi * v1 * v2;
                }
            }
        }
        out
    }

    /// Quadratic form `a_i' M a_i` for row `i`.
    pub fn row_quad_form(&self, i: usize, m: &DMatrix<f64>) -> f64 {
        let row = &self.rows[i];
        let mut acc = 0.0;
        for &(c1, v1) in row {
            for &(c2, v2) in row {
                acc += v1 * v2 * m[(c1, c2)];
            }
        }
        acc
    }
}

/// Cholesky factorization of a symmetric positive-definite matrix.
pub struct DenseChol {
    chol: Cholesky<f64, Dyn>,
    dim: usize,
}

impl DenseChol {
    /// Factorize `m`; `context` names the matrix in the error message.
    pub fn new(m: DMatrix<f64>, context: &str) -> Result<Self> {
        let dim = m.nrows();
        let chol = Cholesky::new(m).ok_or_else(|| {
            Error::numerical(format!(
                "Cholesky factorization failed for {context} (dim {dim}); matrix not positive definite"
            ))
        })?;
        Ok(DenseChol { chol, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    /// `log det` of the factorized matrix.
    pub fn log_det(&self) -> f64 {
        self.chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|d| 2.0 * d.ln())
            .sum()
    }

    /// Solve `L' x = z` for the factor `L` (used to sample `N(0, M^{-1})`).
    pub fn solve_lt(&self, z: &DVector<f64>) -> DVector<f64> {
        let l = self.chol.l_dirty();
        let mut x = DVector::zeros(self.dim);
        for i in (0..self.dim).rev() {
            let mut s = z[i];
            for j in (i + 1)..self.dim {
                s -= l[(j, i)] * x[j];
            }
            x[i] = s / l[(i, i)];
        }
        x
    }
}

/// A set of hard linear constraints `C x = 0` handled by conditioning
/// (kriging correction) so sparse precision structure stays untouched.
pub struct ConstraintSet {
    c: DMatrix<f64>,
    cct_chol: Option<Cholesky<f64, Dyn>>,
    log_det_cct: f64,
}

impl ConstraintSet {
    /// Build from dense constraint rows over an `n`-dimensional space.
    pub fn new(rows: &[DVector<f64>], n: usize) -> Result<Self> {
        let k = rows.len();
        let mut c = DMatrix::zeros(k, n);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != n {
                return Err(Error::config(format!(
                    "constraint {i} has length {} (latent dimension is {n})",
                    r.len()
                )));
            }
            c.row_mut(i).copy_from(&r.transpose());
        }
        if k == 0 {
            return Ok(ConstraintSet { c, cct_chol: None, log_det_cct: 0.0 });
        }
        let cct = &c * c.transpose();
        let chol = Cholesky::new(cct).ok_or_else(|| {
            Error::numerical("constraint rows are linearly dependent".to_string())
        })?;
        let log_det_cct = chol.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        Ok(ConstraintSet { c, cct_chol: Some(chol), log_det_cct })
    }

    pub fn empty(n: usize) -> Self {
        ConstraintSet { c: DMatrix::zeros(0, n), cct_chol: None, log_det_cct: 0.0 }
    }

    pub fn len(&self) -> usize {
        self.c.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.c.nrows() == 0
    }

    pub fn rows(&self) -> &DMatrix<f64> {
        &self.c
    }

    /// Max-norm of `C x`.
    pub fn residual(&self, x: &DVector<f64>) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        (&self.c * x).amax()
    }

    /// Condition a draw (or mean) of `N(·, Q^{-1})` on `C x = 0`:
    /// `x - Q^{-1} C' (C Q^{-1} C')^{-1} C x`.
    pub fn correct(&self, q_chol: &DenseChol, x: &DVector<f64>) -> Result<DVector<f64>> {
        if self.is_empty() {
            return Ok(x.clone());
        }
        let s = q_chol.solve_mat(&self.c.transpose()); // Q^{-1} C'
        let csct = &self.c * &s; // C Q^{-1} C'
        let chol = Cholesky::new(csct)
            .ok_or_else(|| Error::numerical("constraint Schur complement not positive definite"))?;
        let cx = &self.c * x;
        Ok(x - s * chol.solve(&cx))
    }

    /// `log det` of `Q` restricted to the subspace `{x : C x = 0}`:
    /// `log det Q + log det(C Q^{-1} C') - log det(C C')`.
    pub fn constrained_log_det(&self, q_chol: &DenseChol) -> Result<f64> {
        if self.is_empty() {
            return Ok(q_chol.log_det());
        }
        let s = q_chol.solve_mat(&self.c.transpose());
        let csct = &self.c * &s;
        let chol = Cholesky::new(csct)
            .ok_or_else(|| Error::numerical("constraint Schur complement not positive definite"))?;
        let ld: f64 = chol.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        Ok(q_chol.log_det() + ld - self.log_det_cct)
    }

    /// Covariance of the constrained Gaussian:
    /// `Σ - Σ C' (C Σ C')^{-1} C Σ` with `Σ = Q^{-1}`.
    pub fn constrained_covariance(&self, q_chol: &DenseChol) -> Result<DMatrix<f64>> {
        let sigma = q_chol.inverse();
        if self.is_empty() {
            return Ok(sigma);
        }
        let s = &sigma * self.c.transpose(); // Σ C'
        let csct = &self.c * &s;
        let chol = Cholesky::new(csct)
            .ok_or_else(|| Error::numerical("constraint Schur complement not positive definite"))?;
        let correction = &s * chol.solve(&s.transpose());
        Ok(sigma - correction)
    }

    /// Orthogonal projection onto `{x : C x = 0}`: `v - C' (C C')^{-1} C v`.
    pub fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.cct_chol {
            None => v.clone(),
            Some(chol) => {
                let cv = &self.c * v;
                v - self.c.transpose() * chol.solve(&cv)
            }
        }
    }
}

/// Geometric mean of strictly positive values.
pub fn geometric_mean(values: &[f64]) -> f64 {
    let s: f64 = values.iter().map(|v| v.ln()).sum();
    (s / values.len() as f64).exp()
}
