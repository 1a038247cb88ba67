//! Dense real matrix primitives with explicit numerical contracts.
//!
//! Everything downstream (Riccati solves, fusion weights, privacy-loss
//! evaluation) goes through this module, so the contracts here are the ones
//! the rest of the crate leans on: finite entries always, symmetric
//! eigensolves only for symmetric inputs, and linear solves that refuse
//! ill-conditioned systems instead of silently amplifying noise.
//!
//! Backed by `nalgebra` for the eigen/LU/SVD kernels; the public type keeps
//! its own row-major storage so callers never see the backend.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Relative asymmetry tolerated before an input is rejected as "not symmetric".
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Condition-number estimate above which solves report `SingularMatrix`.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Dense row-major matrix of finite `f64` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major entries, rejecting shape mismatches and
    /// non-finite values.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid("matrix dimensions must be positive"));
        }
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "expected {} entries for a {rows}x{cols} matrix, got {}",
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("matrix entries must be finite"));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds from nested rows (convenient for literals and config files).
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("matrix needs at least one row"));
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("all rows must have the same length"));
        }
        let data: Vec<f64> = rows.iter().flatten().copied().collect();
        Matrix::new(rows.len(), cols, data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn diagonal(values: &[f64]) -> Result<Self> {
        let n = values.len();
        let mut m = Matrix::zeros(n, n);
        for (i, v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::invalid("diagonal entries must be finite"));
            }
            m.data[i * n + i] = *v;
        }
        Ok(m)
    }

    /// 1x1 convenience constructor, common in the scalar test systems.
    pub fn scalar(v: f64) -> Self {
        Matrix::new(1, 1, vec![v]).expect("finite scalar")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn entries(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        assert!(r < self.rows && c < self.cols, "index out of bounds");
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        assert!(r < self.rows && c < self.cols, "index out of bounds");
        self.data[r * self.cols + c] = v;
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::invalid(format!(
                "shape mismatch: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| f(*a, *b))
            .collect();
        Matrix::new(self.rows, self.cols, data)
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::invalid(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[r * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                for c in 0..other.cols {
                    out.data[r * other.cols + c] += a * other.data[k * other.cols + c];
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::invalid(format!(
                "matvec: {}x{} matrix applied to length-{} vector",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        let mut out = vec![0.0; self.rows];
        for r in 0..self.rows {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            out[r] = row.iter().zip(v).map(|(a, b)| a * b).sum();
        }
        Ok(out)
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    pub fn max_abs_entry(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Maximum absolute entry of `self - other`; the convergence metric used
    /// by every fixed-point solver in the crate.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        debug_assert_eq!(self.rows, other.rows);
        debug_assert_eq!(self.cols, other.cols);
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Frobenius norm.
    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// (M + Mᵀ)/2. Covariance iterates are passed through this after every
    /// sweep to shed accumulated round-off asymmetry.
    pub fn symmetrized(&self) -> Matrix {
        assert!(self.is_square(), "symmetrized requires a square matrix");
        let n = self.rows;
        let mut out = self.clone();
        for r in 0..n {
            for c in (r + 1)..n {
                let avg = 0.5 * (self.get(r, c) + self.get(c, r));
                out.set(r, c, avg);
                out.set(c, r, avg);
            }
        }
        out
    }

    /// Checks squareness and relative asymmetry against [`SYMMETRY_TOL`].
    pub fn check_symmetric(&self) -> Result<()> {
        if !self.is_square() {
            return Err(Error::invalid(format!(
                "expected a square matrix, got {}x{}",
                self.rows, self.cols
            )));
        }
        let scale = self.max_abs_entry();
        let mut worst = 0.0_f64;
        for r in 0..self.rows {
            for c in (r + 1)..self.cols {
                worst = worst.max((self.get(r, c) - self.get(c, r)).abs());
            }
        }
        if worst > SYMMETRY_TOL * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::invalid(format!(
                "matrix is not symmetric (max asymmetry {worst:.3e}, scale {scale:.3e})"
            )));
        }
        Ok(())
    }

    /// Copies `block` into `self` with its top-left corner at `(r0, c0)`.
    pub fn set_block(&mut self, r0: usize, c0: usize, block: &Matrix) {
        assert!(r0 + block.rows <= self.rows && c0 + block.cols <= self.cols);
        for r in 0..block.rows {
            for c in 0..block.cols {
                self.set(r0 + r, c0 + c, block.get(r, c));
            }
        }
    }

    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Matrix {
        assert!(r0 + rows <= self.rows && c0 + cols <= self.cols);
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                out.set(r, c, self.get(r0 + r, c0 + c));
            }
        }
        out
    }

    pub(crate) fn to_na(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    pub(crate) fn from_na(m: &DMatrix<f64>) -> Matrix {
        let mut data = Vec::with_capacity(m.nrows() * m.ncols());
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                data.push(m[(r, c)]);
            }
        }
        Matrix {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }
}

/// Eigenvalues of a symmetric matrix, ascending.
fn sym_eigenvalues(m: &Matrix) -> Result<Vec<f64>> {
    m.check_symmetric()?;
    let eig = nalgebra::SymmetricEigen::new(m.symmetrized().to_na());
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(|a, b| a.partial_cmp(b).expect("finite eigenvalues"));
    Ok(vals)
}

/// 2-norm of a symmetric matrix: the largest absolute eigenvalue.
///
/// Rejects non-square or asymmetric input; for the covariance and
/// covariance-difference matrices this crate cares about, the symmetric
/// spectrum is exactly the singular spectrum.
pub fn spectral_norm(m: &Matrix) -> Result<f64> {
    let vals = sym_eigenvalues(m)?;
    Ok(vals.iter().fold(0.0_f64, |acc, v| acc.max(v.abs())))
}

/// Smallest and largest eigenvalues of a symmetric matrix.
pub fn sym_eig_extremes(m: &Matrix) -> Result<(f64, f64)> {
    let vals = sym_eigenvalues(m)?;
    Ok((vals[0], vals[vals.len() - 1]))
}

fn singular_values(m: &Matrix) -> Vec<f64> {
    let mut svs: Vec<f64> = m.to_na().singular_values().iter().copied().collect();
    svs.sort_by(|a, b| b.partial_cmp(a).expect("finite singular values"));
    svs
}

/// Ratio of extreme singular values; `f64::INFINITY` for exactly singular input.
pub fn condition_estimate(m: &Matrix) -> f64 {
    let svs = singular_values(m);
    let largest = svs[0];
    let smallest = svs[svs.len() - 1];
    if smallest == 0.0 {
        f64::INFINITY
    } else {
        largest / smallest
    }
}

/// Solves A·X = B for square A, refusing systems with a condition estimate
/// above [`CONDITION_LIMIT`].
pub fn solve_linear(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if !a.is_square() {
        return Err(Error::invalid(format!(
            "solve_linear needs a square system matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if a.rows() != b.rows() {
        return Err(Error::invalid(format!(
            "solve_linear: A is {}x{} but B has {} rows",
            a.rows(),
            a.cols(),
            b.rows()
        )));
    }
    let condition = condition_estimate(a);
    if !condition.is_finite() || condition > CONDITION_LIMIT {
        return Err(Error::SingularMatrix {
            condition,
            context: format!("{}x{} system in solve_linear", a.rows(), a.cols()),
        });
    }
    let lu = a.to_na().lu();
    let x = lu
        .solve(&b.to_na())
        .ok_or_else(|| Error::SingularMatrix {
            condition,
            context: "LU factorization failed".to_string(),
        })?;
    Ok(Matrix::from_na(&x))
}

/// Solves A·x = b for a vector right-hand side.
pub fn solve_linear_vec(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    let rhs = Matrix::new(b.len(), 1, b.to_vec())?;
    let x = solve_linear(a, &rhs)?;
    Ok(x.entries().to_vec())
}

/// Count of singular values exceeding `tol` times the largest one.
pub fn numerical_rank(m: &Matrix, tol: f64) -> Result<usize> {
    if tol <= 0.0 {
        return Err(Error::invalid("rank tolerance must be positive"));
    }
    let svs = singular_values(m);
    let largest = svs[0];
    if largest == 0.0 {
        return Ok(0);
    }
    Ok(svs.iter().filter(|sv| **sv > tol * largest).count())
}

/// Max-entry residual between the two sides of A⁻¹−B⁻¹ = A⁻¹(B−A)B⁻¹.
///
/// Both sides are evaluated through linear solves; test harnesses assert the
/// returned residual stays at round-off scale for well-conditioned pairs.
pub fn inverse_difference_identity_check(a: &Matrix, b: &Matrix) -> Result<f64> {
    if !a.is_square() || !b.is_square() || a.rows() != b.rows() {
        return Err(Error::invalid(
            "identity check needs two square matrices of the same dimension",
        ));
    }
    let eye = Matrix::identity(a.rows());
    let a_inv = solve_linear(a, &eye)?;
    let b_inv = solve_linear(b, &eye)?;
    let lhs = a_inv.sub(&b_inv)?;
    let rhs = a_inv.matmul(&b.sub(a)?)?.matmul(&b_inv)?;
    Ok(lhs.max_abs_diff(&rhs))
}

/// Symmetric PSD square root via eigendecomposition.
///
/// Eigenvalues in `[-psd_slack, 0)` are clamped to zero (fixed-point iterates
/// carry that much round-off); anything more negative is rejected.
pub fn sym_sqrt_psd(m: &Matrix, psd_slack: f64) -> Result<Matrix> {
    m.check_symmetric()?;
    let eig = nalgebra::SymmetricEigen::new(m.symmetrized().to_na());
    let n = m.rows();
    let mut scaled = eig.eigenvectors.clone();
    for c in 0..n {
        let lambda = eig.eigenvalues[c];
        if lambda < -psd_slack {
            return Err(Error::invalid(format!(
                "matrix is not positive semi-definite (eigenvalue {lambda:.3e})"
            )));
        }
        let root = lambda.max(0.0).sqrt();
        for r in 0..n {
            scaled[(r, c)] *= root;
        }
    }
    let sqrt = &scaled * eig.eigenvectors.transpose();
    Ok(Matrix::from_na(&sqrt).symmetrized())
}

/// Log-determinant of a symmetric positive definite matrix, accumulated in
/// log-space so tiny covariances do not underflow.
pub fn sym_logdet_pd(m: &Matrix) -> Result<f64> {
    let vals = sym_eigenvalues(m)?;
    if vals[0] <= 0.0 {
        return Err(Error::invalid(format!(
            "matrix is not positive definite (eigenvalue {:.3e})",
            vals[0]
        )));
    }
    Ok(vals.iter().map(|v| v.ln()).sum())
}

/// Stacks blocks[i][j] into one big matrix; every block must be n×n.
pub fn assemble_blocks(blocks: &[Vec<Matrix>], n: usize) -> Result<Matrix> {
    let l = blocks.len();
    if blocks.iter().any(|row| row.len() != l) {
        return Err(Error::invalid("block table must be square"));
    }
    let mut out = Matrix::zeros(n * l, n * l);
    for (i, row) in blocks.iter().enumerate() {
        for (j, blk) in row.iter().enumerate() {
            if blk.rows() != n || blk.cols() != n {
                return Err(Error::invalid(format!(
                    "block ({i},{j}) is {}x{}, expected {n}x{n}",
                    blk.rows(),
                    blk.cols()
                )));
            }
            out.set_block(i * n, j * n, blk);
        }
    }
    Ok(out)
}

pub(crate) fn vec_sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub(crate) fn vec_add(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub(crate) fn vec_norm_sq(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}
