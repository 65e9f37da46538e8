//! The discrete solution operator `T_h` and its smallest eigenpairs.
//!
//! `T_h f = φ` where `Aρ = Mf` and `Aφ = Mρ - Σ_i c_i(ρ) b_i`, with `b_i`
//! the moment vector of corner field `ξ_i` and `c(ρ)` the correction
//! coefficients. Without corners (or for the usual mixed method) the
//! correction term is absent. Eigenvalues of the biharmonic problem are
//! `λ_h = 1/μ` for the eigenvalues `μ` of `T_h`, which is self-adjoint and
//! positive in the `M` inner product.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::fem::{assemble_mass, assemble_stiffness, FemError, SolverError, SolverOptions, SpdSolver, SymmetricSparse};
use crate::mesh::{interior_index, DofMap, TriangleMesh};
use crate::singular::{build_correction_system, CorrectionSystem, SingularError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    /// Plain mixed method; wrong spectrum on non-convex domains.
    Usual,
    /// Mixed method with the corner correction.
    Modified,
}

impl Method {
    pub const ALL: [Method; 2] = [Method::Usual, Method::Modified];

    pub fn name(self) -> &'static str {
        match self {
            Method::Usual => "usual",
            Method::Modified => "modified",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "usual" | "mixed" => Ok(Method::Usual),
            "modified" | "modified-mixed" | "corrected" => Ok(Method::Modified),
            other => Err(format!("unknown method `{other}` (expected usual or modified)")),
        }
    }
}

/// Which Poisson solve inside the operator failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStage {
    /// `Aρ = Mf`
    First,
    /// `Aφ = Mρ - Σ c_i b_i`
    Second,
    /// `Aσ = λMu`
    Sigma,
}

impl fmt::Display for SolveStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolveStage::First => "first Poisson solve (rho)",
            SolveStage::Second => "second Poisson solve (phi)",
            SolveStage::Sigma => "sigma recovery solve",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EigenError {
    #[error("{stage} failed: {source}")]
    Solve { stage: SolveStage, source: SolverError },
    #[error("factorizing the stiffness matrix failed: {0}")]
    Factor(SolverError),
    #[error(transparent)]
    Assembly(#[from] FemError),
    #[error(transparent)]
    Singular(#[from] SingularError),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("subspace iteration stopped after {iterations} iterations; best residuals {residuals:?}")]
    NotConverged {
        iterations: usize,
        lambdas: Vec<f64>,
        residuals: Vec<f64>,
    },
}

/// `T_h` on the interior unknowns of one mesh.
#[derive(Debug)]
pub struct DiscreteOperator {
    pub method: Method,
    pub dofs: DofMap,
    pub stiffness: SymmetricSparse,
    pub mass: SymmetricSparse,
    pub correction: CorrectionSystem,
    solver: SpdSolver,
}

impl DiscreteOperator {
    /// Assembles the operator of `method` on `mesh`. The modified method on a
    /// mesh without re-entrant corners has an empty correction and is
    /// therefore the usual method.
    pub fn build(mesh: &TriangleMesh, method: Method, options: SolverOptions) -> Result<Self, EigenError> {
        let dofs = interior_index(mesh);
        let stiffness = assemble_stiffness(mesh, &dofs)?;
        let mass = assemble_mass(mesh, &dofs)?;
        let solver = SpdSolver::new(&stiffness, options).map_err(EigenError::Factor)?;
        let correction = match method {
            Method::Usual => CorrectionSystem::empty(),
            Method::Modified => build_correction_system(mesh, &dofs, &solver, &mass)?,
        };
        Ok(Self {
            method,
            dofs,
            stiffness,
            mass,
            correction,
            solver,
        })
    }

    /// Operator from given matrices and correction.
    pub fn from_parts(
        stiffness: SymmetricSparse,
        mass: SymmetricSparse,
        correction: CorrectionSystem,
        options: SolverOptions,
    ) -> Result<Self, EigenError> {
        let solver = SpdSolver::new(&stiffness, options).map_err(EigenError::Factor)?;
        let method = if correction.is_empty() { Method::Usual } else { Method::Modified };
        let n = stiffness.dim();
        Ok(Self {
            method,
            dofs: DofMap {
                dof_of_vertex: (0..n).map(Some).collect(),
                vertex_of_dof: (0..n).collect(),
            },
            stiffness,
            mass,
            correction,
            solver,
        })
    }

    pub fn dim(&self) -> usize {
        self.stiffness.dim()
    }

    pub fn solver(&self) -> &SpdSolver {
        &self.solver
    }

    /// `M w - Σ_i c_i(w) b_i`
    pub fn corrected_load(&self, w: &[f64]) -> Vec<f64> {
        let mut load = self.mass.mul_vec(w);
        if !self.correction.is_empty() {
            let c = self.correction.correction_coeffs(w);
            self.correction.subtract_correction(&mut load, &c);
        }
        load
    }

    pub fn apply(&self, f: &[f64]) -> Result<Vec<f64>, EigenError> {
        let mut out = f.to_vec();
        self.apply_block_in_place(&mut out, 1)?;
        Ok(out)
    }

    /// Applies `T_h` to `ncols` column-major vectors, overwriting them.
    pub fn apply_block_in_place(&self, block: &mut [f64], ncols: usize) -> Result<(), EigenError> {
        let n = self.dim();
        let mut rhs = vec![0.0; block.len()];
        for (src, dst) in block.chunks(n).zip(rhs.chunks_mut(n)) {
            self.mass.mul_vec_into(src, dst);
        }
        self.solver
            .solve_in_place(&mut rhs, ncols)
            .map_err(|source| EigenError::Solve { stage: SolveStage::First, source })?;
        for (rho, dst) in rhs.chunks(n).zip(block.chunks_mut(n)) {
            dst.copy_from_slice(&self.corrected_load(rho));
        }
        self.solver
            .solve_in_place(block, ncols)
            .map_err(|source| EigenError::Solve { stage: SolveStage::Second, source })
    }

    /// `σ = λ A⁻¹ M u`
    pub fn recover_sigma(&self, lambda: f64, u: &[f64]) -> Result<Vec<f64>, EigenError> {
        let rhs: Vec<f64> = self.mass.mul_vec(u).iter().map(|v| lambda * v).collect();
        self.solver
            .solve(&rhs)
            .map_err(|source| EigenError::Solve { stage: SolveStage::Sigma, source })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenOptions {
    /// Bound on the relative residuals of all requested pairs.
    pub tol: f64,
    /// Bound on the relative change of the eigenvalues between iterations.
    pub lambda_tol: f64,
    pub max_iter: usize,
    /// Guard vectors beyond the `k` requested ones.
    pub buffer: usize,
    pub seed: u64,
}

pub const DEFAULT_EIG_TOL: f64 = 1e-8;
pub const DEFAULT_BUFFER: usize = 4;
pub const DEFAULT_MAX_ITER: usize = 500;

impl Default for EigenOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_EIG_TOL,
            lambda_tol: 1e-10,
            max_iter: DEFAULT_MAX_ITER,
            buffer: DEFAULT_BUFFER,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenResult {
    /// Ascending.
    pub lambdas: Vec<f64>,
    /// `M`-orthonormal.
    pub u_vectors: Vec<Vec<f64>>,
    pub sigma_vectors: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
    pub iterations: usize,
    pub notes: Vec<String>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `M`-orthonormalizes the columns in place by Gram-Schmidt with one
/// reorthogonalization pass; a column that collapses is replaced by a
/// fresh random vector.
fn m_orthonormalize(mass: &SymmetricSparse, block: &mut [f64], ncols: usize, rng: &mut ChaCha8Rng) {
    let n = mass.dim();
    let mut m_cols: Vec<Vec<f64>> = Vec::with_capacity(ncols);
    for j in 0..ncols {
        let mut attempts = 0;
        loop {
            let (done, rest) = block.split_at_mut(j * n);
            let col = &mut rest[..n];
            let start = mass.inner(col, col).sqrt();
            for _ in 0..2 {
                for (i, mi) in m_cols.iter().enumerate() {
                    let c = dot(mi, col);
                    let qi = &done[i * n..(i + 1) * n];
                    col.iter_mut().zip(qi).for_each(|(x, q)| *x -= c * q);
                }
            }
            let mc = mass.mul_vec(col);
            let nrm = dot(&mc, col).sqrt();
            if nrm > 1e-10 * start && nrm > 0.0 && attempts < 10 {
                col.iter_mut().for_each(|x| *x /= nrm);
                m_cols.push(mc.iter().map(|x| x / nrm).collect());
                break;
            }
            attempts += 1;
            assert!(attempts < 10, "cannot extend an M-orthonormal basis");
            col.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
        }
    }
}

/// `out = block · Y` for an `n × p` block and `p × q` matrix.
fn block_times(block: &[f64], n: usize, y: &DMatrix<f64>) -> Vec<f64> {
    let (p, q) = y.shape();
    let mut out = vec![0.0; n * q];
    for j in 0..q {
        let dst = &mut out[j * n..(j + 1) * n];
        for i in 0..p {
            let c = y[(i, j)];
            if c != 0.0 {
                dst.iter_mut().zip(&block[i * n..(i + 1) * n]).for_each(|(d, v)| *d += c * v);
            }
        }
    }
    out
}

/// The `k` smallest eigenvalues `λ_h` with eigenvectors, by subspace
/// iteration on `T_h` with Rayleigh-Ritz in the `M` inner product.
pub fn eigs_smallest(op: &DiscreteOperator, k: usize, opts: &EigenOptions) -> Result<EigenResult, EigenError> {
    let n = op.dim();
    let p = k + opts.buffer;
    if k == 0 {
        return Err(EigenError::InvalidRequest("at least one eigenvalue must be requested".into()));
    }
    if p > n {
        return Err(EigenError::InvalidRequest(format!(
            "{k} eigenvalues plus {} guard vectors exceed the {n} unknowns",
            opts.buffer
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut v: Vec<f64> = (0..n * p).map(|_| rng.random_range(-1.0..1.0)).collect();
    m_orthonormalize(&op.mass, &mut v, p, &mut rng);

    let mut previous: Option<Vec<f64>> = None;
    let mut best_residuals = vec![f64::INFINITY; k];
    let mut lambdas = vec![0.0; p];
    for iteration in 1..=opts.max_iter {
        let mut w = v.clone();
        op.apply_block_in_place(&mut w, p)?;
        let mut mw = vec![0.0; n * p];
        let mut aw = vec![0.0; n * p];
        let mut av = vec![0.0; n * p];
        for j in 0..p {
            let cols = j * n..(j + 1) * n;
            op.mass.mul_vec_into(&w[cols.clone()], &mut mw[cols.clone()]);
            op.stiffness.mul_vec_into(&w[cols.clone()], &mut aw[cols.clone()]);
            op.stiffness.mul_vec_into(&v[cols.clone()], &mut av[cols]);
        }
        let mut h = DMatrix::from_fn(p, p, |i, j| dot(&v[i * n..(i + 1) * n], &mw[j * n..(j + 1) * n]));
        h = (&h + h.transpose()) * 0.5;
        let eig = h.symmetric_eigen();
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let mu: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let y = DMatrix::from_fn(p, p, |i, j| eig.eigenvectors[(i, order[j])]);
        lambdas = mu.iter().map(|m| 1.0 / m).collect();

        // For a Ritz pair (μ, x) with u = x, σ = λA⁻¹Mu the first mixed
        // equation has residual λA(μx - Tx) against the load λATx.
        let yk = y.columns(0, k).into_owned();
        let vy = block_times(&v, n, &yk);
        let awy = block_times(&aw, n, &yk);
        let avy = block_times(&av, n, &yk);
        let residuals: Vec<f64> = (0..k)
            .map(|i| {
                let s = i * n..(i + 1) * n;
                let r: Vec<f64> = awy[s.clone()].iter().zip(&avy[s.clone()]).map(|(a, b)| a - mu[i] * b).collect();
                norm(&r) / norm(&awy[s])
            })
            .collect();
        if residuals.iter().sum::<f64>() < best_residuals.iter().sum::<f64>() {
            best_residuals.clone_from(&residuals);
        }

        let settled = previous.as_ref().is_some_and(|prev| {
            (0..k).all(|i| (lambdas[i] - prev[i]).abs() <= opts.lambda_tol * lambdas[i].abs())
        });
        if mu[..k].iter().all(|&m| m > 0.0) && settled && residuals.iter().all(|&r| r < opts.tol) {
            let result = finish(op, &vy, k, &lambdas, iteration)?;
            if result.residuals.iter().all(|&r| r <= opts.tol) {
                return Ok(result);
            }
        }
        previous = Some(lambdas[..k].to_vec());

        v = block_times(&w, n, &y);
        m_orthonormalize(&op.mass, &mut v, p, &mut rng);
    }
    Err(EigenError::NotConverged {
        iterations: opts.max_iter,
        lambdas: lambdas[..k].to_vec(),
        residuals: best_residuals,
    })
}

fn finish(
    op: &DiscreteOperator,
    ritz: &[f64],
    k: usize,
    lambdas: &[f64],
    iterations: usize,
) -> Result<EigenResult, EigenError> {
    let n = op.dim();
    let mut u_vectors = Vec::with_capacity(k);
    let mut sigma_vectors = Vec::with_capacity(k);
    for i in 0..k {
        let mut u = ritz[i * n..(i + 1) * n].to_vec();
        let nrm = op.mass.inner(&u, &u).sqrt();
        u.iter_mut().for_each(|x| *x /= nrm);
        // fix the sign so that results do not depend on the start block
        let pivot = u.iter().copied().fold(0.0, |a: f64, b| if b.abs() > a.abs() { b } else { a });
        if pivot < 0.0 {
            u.iter_mut().for_each(|x| *x = -*x);
        }
        sigma_vectors.push(op.recover_sigma(lambdas[i], &u)?);
        u_vectors.push(u);
    }
    let mut notes = Vec::new();
    if lambdas.len() > k {
        let gap = (lambdas[k] - lambdas[k - 1]).abs() / lambdas[k - 1].abs();
        if gap < 1e-12 {
            notes.push(format!(
                "eigenvalue {k} is degenerate with eigenvalue {} (relative gap {gap:.1e}); the returned vectors span part of its eigenspace",
                k + 1
            ));
        }
    }
    let mut result = EigenResult {
        lambdas: lambdas[..k].to_vec(),
        u_vectors,
        sigma_vectors,
        residuals: Vec::new(),
        iterations,
        notes,
    };
    result.residuals = residual_norms(op, &result);
    Ok(result)
}

/// Relative residuals of both equations of the mixed eigenproblem,
/// recomputed from the returned vectors: the larger of
/// `‖Aσ - λMu‖ / (λ‖Mu‖)` and `‖Au - (Mσ - Σ c_i(σ) b_i)‖ / ‖Mσ - Σ c_i(σ) b_i‖`.
pub fn residual_norms(op: &DiscreteOperator, result: &EigenResult) -> Vec<f64> {
    result
        .lambdas
        .iter()
        .zip(result.u_vectors.iter().zip(&result.sigma_vectors))
        .map(|(&lambda, (u, sigma))| {
            let mu = op.mass.mul_vec(u);
            let a_sigma = op.stiffness.mul_vec(sigma);
            let r2: Vec<f64> = a_sigma.iter().zip(&mu).map(|(a, m)| a - lambda * m).collect();
            let second = norm(&r2) / (lambda.abs() * norm(&mu));
            let load = op.corrected_load(sigma);
            let au = op.stiffness.mul_vec(u);
            let r1: Vec<f64> = au.iter().zip(&load).map(|(a, l)| a - l).collect();
            let first = norm(&r1) / norm(&load);
            first.max(second)
        })
        .collect()
}
