//! Symmetric positive definite solves: a factor-once sparse Cholesky backed
//! by `faer`, and conjugate gradients preconditioned with zero-fill
//! incomplete Cholesky.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::Llt;
use faer::sparse::{SparseColMat, Triplet};
use faer::{MatMut, Side};
use thiserror::Error;

use super::sparse::SymmetricSparse;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("linear solver did not converge: relative residual {residual:.3e} after {iterations} iterations (tolerance {tolerance:.1e})")]
    NotConverged {
        iterations: usize,
        residual: f64,
        tolerance: f64,
    },
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error("dimension mismatch: matrix is {expected}x{expected}, right-hand side has {got} entries")]
    Dimension { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    /// Sparse Cholesky factorization, reused across right-hand sides.
    Direct,
    /// Conjugate gradients with IC(0) preconditioning.
    Pcg,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Direct => "direct",
            SolverKind::Pcg => "pcg",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub kind: SolverKind,
    /// Required relative residual `|A x - b| / |b|`.
    pub rel_tol: f64,
    pub max_iter: usize,
}

pub const DEFAULT_LINEAR_TOL: f64 = 1e-10;

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            kind: SolverKind::Direct,
            rel_tol: DEFAULT_LINEAR_TOL,
            max_iter: 20_000,
        }
    }
}

impl SolverOptions {
    pub fn pcg() -> Self {
        Self {
            kind: SolverKind::Pcg,
            ..Self::default()
        }
    }
}

enum Backend {
    Direct(Llt<usize, f64>),
    Pcg(IncompleteCholesky),
}

/// A prepared solver for one SPD matrix.
pub struct SpdSolver {
    matrix: SymmetricSparse,
    backend: Backend,
    options: SolverOptions,
}

impl std::fmt::Debug for SpdSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpdSolver")
            .field("dim", &self.matrix.dim())
            .field("options", &self.options)
            .finish()
    }
}

const MAX_REFINEMENT_STEPS: usize = 3;

impl SpdSolver {
    pub fn new(matrix: &SymmetricSparse, options: SolverOptions) -> Result<Self, SolverError> {
        let backend = match options.kind {
            SolverKind::Direct => {
                let n = matrix.dim();
                let triplets: Vec<_> = matrix
                    .lower_triplets()
                    .map(|(i, j, v)| Triplet::new(i, j, v))
                    .collect();
                let csc = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &triplets)
                    .map_err(|e| SolverError::NotPositiveDefinite(format!("{e:?}")))?;
                let llt = csc
                    .sp_cholesky(Side::Lower)
                    .map_err(|e| SolverError::NotPositiveDefinite(format!("{e:?}")))?;
                Backend::Direct(llt)
            }
            SolverKind::Pcg => Backend::Pcg(IncompleteCholesky::new(matrix)?),
        };
        Ok(Self {
            matrix: matrix.clone(),
            backend,
            options,
        })
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn matrix(&self) -> &SymmetricSparse {
        &self.matrix
    }

    pub fn options(&self) -> SolverOptions {
        self.options
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>, SolverError> {
        let mut x = rhs.to_vec();
        self.solve_in_place(&mut x, 1)?;
        Ok(x)
    }

    /// Solves for `ncols` right-hand sides stored column-major in `data`,
    /// overwriting them with the solutions.
    pub fn solve_in_place(&self, data: &mut [f64], ncols: usize) -> Result<(), SolverError> {
        let n = self.dim();
        if data.len() != n * ncols {
            return Err(SolverError::Dimension {
                expected: n,
                got: data.len() / ncols.max(1),
            });
        }
        if n == 0 {
            return Ok(());
        }
        match &self.backend {
            Backend::Direct(llt) => {
                let rhs = data.to_vec();
                llt.solve_in_place(MatMut::from_column_major_slice_mut(data, n, ncols));
                for (x, b) in data.chunks_mut(n).zip(rhs.chunks(n)) {
                    self.refine(llt, x, b)?;
                }
                Ok(())
            }
            Backend::Pcg(ic) => {
                for col in data.chunks_mut(n) {
                    let b = col.to_vec();
                    let x = pcg(&self.matrix, ic, &b, self.options)?;
                    col.copy_from_slice(&x);
                }
                Ok(())
            }
        }
    }

    /// Iterative refinement until the residual contract holds.
    fn refine(&self, llt: &Llt<usize, f64>, x: &mut [f64], b: &[f64]) -> Result<(), SolverError> {
        let b_norm = norm(b);
        if b_norm == 0.0 {
            x.fill(0.0);
            return Ok(());
        }
        let mut residual = 0.0;
        for step in 0..=MAX_REFINEMENT_STEPS {
            let ax = self.matrix.mul_vec(x);
            let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
            residual = norm(&r) / b_norm;
            if residual <= self.options.rel_tol {
                return Ok(());
            }
            if step == MAX_REFINEMENT_STEPS {
                break;
            }
            let n = r.len();
            llt.solve_in_place(MatMut::from_column_major_slice_mut(&mut r, n, 1));
            x.iter_mut().zip(&r).for_each(|(x, d)| *x += d);
        }
        Err(SolverError::NotConverged {
            iterations: MAX_REFINEMENT_STEPS,
            residual,
            tolerance: self.options.rel_tol,
        })
    }
}

/// One-shot solve of `A x = rhs`.
pub fn solve_spd(a: &SymmetricSparse, rhs: &[f64], options: SolverOptions) -> Result<Vec<f64>, SolverError> {
    SpdSolver::new(a, options)?.solve(rhs)
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Zero-fill incomplete Cholesky factor `L` (lower triangle, CSR by rows).
#[derive(Debug, Clone)]
pub struct IncompleteCholesky {
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl IncompleteCholesky {
    pub fn new(a: &SymmetricSparse) -> Result<Self, SolverError> {
        // Retry with a growing diagonal shift on breakdown.
        let mut shift = 0.0;
        for _ in 0..8 {
            if let Some(f) = Self::factor(a, shift) {
                return Ok(f);
            }
            shift = if shift == 0.0 { 1e-3 } else { shift * 10.0 };
        }
        Err(SolverError::NotPositiveDefinite("incomplete Cholesky breakdown".into()))
    }

    fn factor(a: &SymmetricSparse, shift: f64) -> Option<Self> {
        let n = a.dim();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for i in 0..n {
            let (cols, vals) = a.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                if j <= i {
                    col_idx.push(j);
                    values.push(if j == i { v * (1.0 + shift) } else { v });
                }
            }
            row_ptr.push(col_idx.len());
        }
        for i in 0..n {
            let (start, end) = (row_ptr[i], row_ptr[i + 1]);
            for p in start..end {
                let k = col_idx[p];
                // sum over common columns j < k of L[i][j] * L[k][j]
                let (ks, ke) = (row_ptr[k], row_ptr[k + 1]);
                let (mut a_pos, mut b_pos) = (start, ks);
                let mut s = 0.0;
                while a_pos < p && b_pos < ke {
                    let (ca, cb) = (col_idx[a_pos], col_idx[b_pos]);
                    if cb >= k {
                        break;
                    }
                    match ca.cmp(&cb) {
                        std::cmp::Ordering::Less => a_pos += 1,
                        std::cmp::Ordering::Greater => b_pos += 1,
                        std::cmp::Ordering::Equal => {
                            s += values[a_pos] * values[b_pos];
                            a_pos += 1;
                            b_pos += 1;
                        }
                    }
                }
                if k == i {
                    let d = values[p] - s;
                    if d <= 0.0 || !d.is_finite() {
                        return None;
                    }
                    values[p] = d.sqrt();
                } else {
                    values[p] = (values[p] - s) / values[ke - 1];
                }
            }
        }
        Some(Self {
            row_ptr,
            col_idx,
            values,
        })
    }

    /// `z = (L L^T)^{-1} r`
    pub fn apply(&self, r: &[f64], z: &mut [f64]) {
        let n = r.len();
        z.copy_from_slice(r);
        for i in 0..n {
            let (s, e) = (self.row_ptr[i], self.row_ptr[i + 1]);
            let mut v = z[i];
            for p in s..e - 1 {
                v -= self.values[p] * z[self.col_idx[p]];
            }
            z[i] = v / self.values[e - 1];
        }
        for i in (0..n).rev() {
            let (s, e) = (self.row_ptr[i], self.row_ptr[i + 1]);
            z[i] /= self.values[e - 1];
            let zi = z[i];
            for p in s..e - 1 {
                z[self.col_idx[p]] -= self.values[p] * zi;
            }
        }
    }
}

fn pcg(
    a: &SymmetricSparse,
    ic: &IncompleteCholesky,
    b: &[f64],
    options: SolverOptions,
) -> Result<Vec<f64>, SolverError> {
    let n = b.len();
    let mut x = vec![0.0; n];
    let b_norm = norm(b);
    if b_norm == 0.0 {
        return Ok(x);
    }
    let mut r = b.to_vec();
    let mut z = vec![0.0; n];
    ic.apply(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut residual = 1.0;
    for it in 0..options.max_iter {
        a.mul_vec_into(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        residual = norm(&r) / b_norm;
        if residual <= options.rel_tol {
            // confirm with a true residual to guard against drift
            let ax = a.mul_vec(&x);
            let true_res = norm(&b.iter().zip(&ax).map(|(b, a)| b - a).collect::<Vec<_>>()) / b_norm;
            if true_res <= options.rel_tol {
                return Ok(x);
            }
            r = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
            residual = true_res;
            if it + 1 == options.max_iter {
                break;
            }
        }
        ic.apply(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(SolverError::NotConverged {
        iterations: options.max_iter,
        residual,
        tolerance: options.rel_tol,
    })
}
