//! Small dense linear algebra and scalar special functions.
//!
//! Everything here is sized for cones of dimension at most a few dozen, so the
//! routines favour accuracy and determinism over asymptotic speed: Cholesky
//! for positive-definite solves and cyclic Jacobi for eigenproblems.

use std::f64::consts::SQRT_2;

use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};
use statrs::function::gamma::gamma_lr;

use crate::error::{ChibarError, Result};

/// Relative pivot threshold below which a matrix is declared not positive
/// definite. This is the only place that decides PD-ness.
pub const PD_TOLERANCE: f64 = 1e-12;

const JACOBI_MAX_SWEEPS: usize = 100;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(ChibarError::InvalidInput(format!(
                "expected {} entries for a {rows}x{cols} matrix, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.get(k, j);
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len(), "mul_vec dimension mismatch");
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `selfᵀ x` without materialising the transpose.
    pub fn tr_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, x.len(), "tr_mul_vec dimension mismatch");
        let mut out = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * xi;
            }
        }
        out
    }

    /// `selfᵀ self`, symmetric by construction.
    pub fn gram(&self) -> SymMatrix {
        let n = self.cols;
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v: f64 = (0..self.rows)
                    .map(|r| self.get(r, i) * self.get(r, j))
                    .sum();
                data[i * n + j] = v;
                data[j * n + i] = v;
            }
        }
        SymMatrix { dim: n, data }
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Symmetric matrix with full storage; symmetrised on construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    /// Builds from row-major entries, replacing each off-diagonal pair by its
    /// average.
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(ChibarError::InvalidInput(format!(
                "expected {} entries for a {dim}x{dim} matrix, got {}",
                dim * dim,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(ChibarError::InvalidInput(format!(
                "non-finite matrix entry {bad}"
            )));
        }
        let mut m = Self { dim, data };
        m.symmetrize();
        Ok(m)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(ChibarError::InvalidInput(
                "matrix rows are not square".into(),
            ));
        }
        Self::new(dim, rows.iter().flatten().copied().collect())
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_diag(&vec![1.0; dim])
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * m.dim + i] = d;
        }
        m
    }

    /// `(1 − ρ) I + ρ 11ᵀ`.
    pub fn equicorrelation(dim: usize, rho: f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in 0..dim {
                m.data[i * dim + j] = if i == j { 1.0 } else { rho };
            }
        }
        m
    }

    /// Reinterprets a general square matrix, averaging it with its transpose.
    pub fn from_matrix(m: &Matrix) -> Result<Self> {
        if m.rows() != m.cols() {
            return Err(ChibarError::InvalidInput("matrix is not square".into()));
        }
        Self::new(m.rows(), m.data.clone())
    }

    fn symmetrize(&mut self) {
        let n = self.dim;
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 0.5 * (self.data[i * n + j] + self.data[j * n + i]);
                self.data[i * n + j] = v;
                self.data[j * n + i] = v;
            }
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    /// Sets both `(i, j)` and `(j, i)`.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dim + j] = v;
        self.data[j * self.dim + i] = v;
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn as_matrix(&self) -> Matrix {
        Matrix {
            rows: self.dim,
            cols: self.dim,
            data: self.data.clone(),
        }
    }

    /// Principal submatrix on `idx`, in the given order.
    pub fn principal(&self, idx: &[usize]) -> SymMatrix {
        let n = idx.len();
        let mut data = Vec::with_capacity(n * n);
        for &i in idx {
            for &j in idx {
                data.push(self.get(i, j));
            }
        }
        SymMatrix { dim: n, data }
    }

    /// `D M D` for the diagonal matrix `D = diag(scale)`.
    pub fn scale_sym(&self, scale: &[f64]) -> SymMatrix {
        assert_eq!(scale.len(), self.dim);
        let n = self.dim;
        let mut out = self.clone();
        for i in 0..n {
            for j in 0..n {
                out.data[i * n + j] *= scale[i] * scale[j];
            }
        }
        out
    }

    /// Unit-diagonal rescaling `D^{-1/2} M D^{-1/2}`. Requires a positive
    /// diagonal.
    pub fn to_correlation(&self) -> Result<SymMatrix> {
        let diag = self.diag();
        if let Some((i, &d)) = diag
            .iter()
            .enumerate()
            .find(|(_, &d)| d.is_nan() || d <= 0.0)
        {
            return Err(ChibarError::NotPositiveDefinite { index: i, pivot: d });
        }
        let inv_sqrt: Vec<f64> = diag.iter().map(|d| 1.0 / d.sqrt()).collect();
        let mut c = self.scale_sym(&inv_sqrt);
        for i in 0..self.dim {
            c.data[i * self.dim + i] = 1.0;
        }
        Ok(c)
    }

    pub fn sub(&self, other: &SymMatrix) -> SymMatrix {
        assert_eq!(self.dim, other.dim);
        SymMatrix {
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.dim, x.len());
        (0..self.dim).map(|i| dot(self.row(i), x)).collect()
    }

    pub fn matmul(&self, other: &SymMatrix) -> Matrix {
        self.as_matrix().matmul(&other.as_matrix())
    }

    pub fn max_abs_diag(&self) -> f64 {
        self.diag().into_iter().map(f64::abs).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &SymMatrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_diagonal(&self) -> bool {
        (0..self.dim).all(|i| (0..self.dim).all(|j| i == j || self.get(i, j) == 0.0))
    }
}

/// Lower-triangular Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerTriangular(Matrix);

impl LowerTriangular {
    #[inline]
    pub fn dim(&self) -> usize {
        self.0.rows()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j)
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    /// `L x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        (0..n)
            .map(|i| (0..=i).map(|j| self.get(i, j) * x[j]).sum())
            .collect()
    }

    /// Solves `L Lᵀ x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut y = b.to_vec();
        for i in 0..n {
            let s = y[i] - (0..i).map(|j| self.get(i, j) * y[j]).sum::<f64>();
            y[i] = s / self.get(i, i);
        }
        for i in (0..n).rev() {
            let s = y[i] - ((i + 1)..n).map(|j| self.get(j, i) * y[j]).sum::<f64>();
            y[i] = s / self.get(i, i);
        }
        y
    }

    /// `L Lᵀ`.
    pub fn reconstruct(&self) -> SymMatrix {
        let lt = self.0.transpose();
        SymMatrix::from_matrix(&self.0.matmul(&lt)).expect("square by construction")
    }
}

/// Eigenpairs of a symmetric matrix: eigenvalues descending, eigenvectors as
/// the columns of an orthogonal matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomp {
    pub eigvalues: Vec<f64>,
    pub eigvectors: Matrix,
}

impl SpectralDecomp {
    /// `P diag(f(λ)) Pᵀ`.
    pub fn map_eigenvalues(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let n = self.eigvalues.len();
        let mapped: Vec<f64> = self.eigvalues.iter().map(|&l| f(l)).collect();
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v: f64 = (0..n)
                    .map(|k| self.eigvectors.get(i, k) * mapped[k] * self.eigvectors.get(j, k))
                    .sum();
                data[i * n + j] = v;
                data[j * n + i] = v;
            }
        }
        SymMatrix { dim: n, data }
    }

    pub fn reconstruct(&self) -> SymMatrix {
        self.map_eigenvalues(|l| l)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

/// Cholesky factorisation `m = L Lᵀ`.
pub fn cholesky(m: &SymMatrix) -> Result<LowerTriangular> {
    let n = m.dim();
    let scale = m.max_abs_diag();
    let threshold = PD_TOLERANCE * scale;
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = m.get(j, j);
        for k in 0..j {
            d -= l.get(j, k) * l.get(j, k);
        }
        if d.is_nan() || d <= threshold || scale <= 0.0 {
            return Err(ChibarError::NotPositiveDefinite { index: j, pivot: d });
        }
        let djj = d.sqrt();
        l.set(j, j, djj);
        for i in (j + 1)..n {
            let mut s = m.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, s / djj);
        }
    }
    Ok(LowerTriangular(l))
}

/// Runs cyclic Jacobi; returns the (unsorted) diagonal, the accumulated
/// rotations and whether the off-diagonal mass fell below tolerance.
fn jacobi(m: &SymMatrix) -> (Vec<f64>, Matrix, bool) {
    let n = m.dim();
    let mut a = m.as_matrix();
    let mut v = Matrix::identity(n);
    let total: f64 = a.data.iter().map(|x| x * x).sum();
    let target = (f64::EPSILON * f64::EPSILON) * total;

    let off = |a: &Matrix| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                s += 2.0 * a.get(i, j) * a.get(i, j);
            }
        }
        s
    };

    let mut converged = off(&a) <= target;
    let mut sweep = 0;
    while !converged && sweep < JACOBI_MAX_SWEEPS {
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                a.set(p, q, 0.0);
                a.set(q, p, 0.0);

                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
        sweep += 1;
        converged = off(&a) <= target;
    }
    ((0..n).map(|i| a.get(i, i)).collect(), v, converged)
}

/// Symmetric eigendecomposition by cyclic Jacobi.
///
/// Eigenvalues come back in descending order. Each eigenvector is signed so
/// that its largest-magnitude component (first one on exact ties) is
/// positive, which keeps downstream cone generators reproducible.
pub fn sym_eig(m: &SymMatrix) -> Result<SpectralDecomp> {
    let n = m.dim();
    let (values, vectors, converged) = jacobi(m);
    if !converged {
        return Err(ChibarError::NoConvergence {
            routine: "jacobi eigensolver",
            iterations: JACOBI_MAX_SWEEPS,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[j].total_cmp(&values[i]));

    let mut eigvectors = Matrix::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        let mut best = 0;
        for i in 1..n {
            if vectors.get(i, src).abs() > vectors.get(best, src).abs() {
                best = i;
            }
        }
        let sign = if vectors.get(best, src) < 0.0 {
            -1.0
        } else {
            1.0
        };
        for i in 0..n {
            eigvectors.set(i, col, sign * vectors.get(i, src));
        }
    }
    Ok(SpectralDecomp {
        eigvalues: order.iter().map(|&i| values[i]).collect(),
        eigvectors,
    })
}

/// Eigenvalues in descending order. Never fails: when Jacobi hits its sweep
/// cap the remaining off-diagonal mass is below any scale that matters here.
pub fn eigenvalues(m: &SymMatrix) -> Vec<f64> {
    let (mut values, _, _) = jacobi(m);
    values.sort_by(|a, b| b.total_cmp(a));
    values
}

pub fn min_eigenvalue(m: &SymMatrix) -> f64 {
    eigenvalues(m).last().copied().unwrap_or(f64::INFINITY)
}

/// Inverse of a positive-definite matrix via its Cholesky factor.
pub fn inv_pd(m: &SymMatrix) -> Result<SymMatrix> {
    let l = cholesky(m)?;
    let n = m.dim();
    let mut data = vec![0.0; n * n];
    let mut e = vec![0.0; n];
    for j in 0..n {
        e.iter_mut().for_each(|x| *x = 0.0);
        e[j] = 1.0;
        let col = l.solve(&e);
        for i in 0..n {
            data[i * n + j] = col[i];
        }
    }
    SymMatrix::new(n, data)
}

/// Schur complement of the `out` block within `m` restricted to `keep ∪ out`:
/// `M_kk − M_ko M_oo⁻¹ M_ok`.
pub fn schur_complement(m: &SymMatrix, keep: &[usize], out: &[usize]) -> Result<SymMatrix> {
    let n = m.dim();
    if keep.iter().chain(out).any(|&i| i >= n) {
        return Err(ChibarError::InvalidInput(format!(
            "index out of range for a {n}x{n} matrix"
        )));
    }
    if keep.iter().any(|i| out.contains(i)) {
        return Err(ChibarError::InvalidInput(
            "keep and out index sets overlap".into(),
        ));
    }
    let mkk = m.principal(keep);
    if keep.is_empty() || out.is_empty() {
        return Ok(mkk);
    }
    let moo = m.principal(out);
    let l = cholesky(&moo)?;
    let mut result = mkk;
    // X = M_oo⁻¹ M_ok, column by column.
    let cols: Vec<Vec<f64>> = keep
        .iter()
        .map(|&k| l.solve(&out.iter().map(|&o| m.get(o, k)).collect::<Vec<_>>()))
        .collect();
    for (a, &ka) in keep.iter().enumerate() {
        for (b, col) in cols.iter().enumerate().skip(a) {
            let correction: f64 = out.iter().zip(col).map(|(&o, x)| m.get(ka, o) * x).sum();
            let v = result.get(a, b) - correction;
            result.set(a, b, v);
        }
    }
    Ok(result)
}

/// Spectral norm `max |λ|` of a symmetric matrix.
pub fn op_norm(m: &SymMatrix) -> f64 {
    eigenvalues(m).into_iter().map(f64::abs).fold(0.0, f64::max)
}

/// Number of eigenvalues strictly above `tol · reference_scale`.
pub fn numerical_rank(m: &SymMatrix, reference_scale: f64, tol: f64) -> usize {
    let cut = tol * reference_scale;
    eigenvalues(m).into_iter().filter(|&l| l > cut).count()
}

/// CDF of χ²_dof at `t`; χ²₀ is the point mass at zero.
pub fn chi2_cdf(t: f64, dof: usize) -> f64 {
    if t < 0.0 || t.is_nan() {
        return 0.0;
    }
    if dof == 0 {
        return 1.0;
    }
    if t == 0.0 {
        return 0.0;
    }
    if t.is_infinite() {
        return 1.0;
    }
    gamma_lr(dof as f64 / 2.0, t / 2.0)
}

/// Standard normal CDF.
#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Standard normal quantile.
#[inline]
pub fn norm_quantile(p: f64) -> f64 {
    -SQRT_2 * erfc_inv(2.0 * p)
}
