//! Linear solvers: a direct sparse LU (the default path for every saddle
//! and momentum system) plus preconditioned Krylov alternatives.
//!
//! The LU factorization is the workhorse of the time stepping: each shared
//! coefficient matrix is factorized once per time step and then applied to
//! the whole ensemble of right-hand sides.  `solve_many` deliberately solves
//! column by column against the shared factorization, so a multi-RHS solve
//! is bit-for-bit identical to the corresponding sequence of single solves.
//! Factorization/solve counters are exposed so callers (and the acceptance
//! tests) can verify the sharing actually happens.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMat, Triplet};
use thiserror::Error;

use crate::sparse::CsrMatrix;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("matrix must be square, got {0} x {1}")]
    NotSquare(usize, usize),
    #[error("sparse LU factorization failed (matrix is singular or ill-posed)")]
    Singular,
    #[error("iterative solver stalled: {0} iterations, relative residual {1:.3e}")]
    NotConverged(usize, f64),
}

/// Shared factorize/solve counters, used to assert the matrix-reuse policy.
#[derive(Debug, Default)]
pub struct SolverCounters {
    factorizations: AtomicUsize,
    solves: AtomicUsize,
}

impl SolverCounters {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn factorizations(&self) -> usize {
        self.factorizations.load(Ordering::Relaxed)
    }

    pub fn solves(&self) -> usize {
        self.solves.load(Ordering::Relaxed)
    }
}

/// Direct sparse LU with reusable symbolic analysis.
///
/// The symbolic (fill-reducing) analysis is computed once per sparsity
/// pattern; `refactor` reuses it when only the numerical values changed,
/// which is exactly the per-time-step situation for the momentum systems.
pub struct LuSolver {
    matrix: SparseColMat<usize, f64>,
    symbolic: SymbolicLu<usize>,
    lu: Lu<usize, f64>,
    counters: Arc<SolverCounters>,
}

impl LuSolver {
    /// Factorizes `a`, counting one factorization against `counters`.
    pub fn factor(a: &CsrMatrix, counters: Arc<SolverCounters>) -> Result<Self, SolveError> {
        if a.nrows() != a.ncols() {
            return Err(SolveError::NotSquare(a.nrows(), a.ncols()));
        }
        let matrix = to_faer(a);
        let symbolic = SymbolicLu::try_new(matrix.symbolic()).map_err(|_| SolveError::Singular)?;
        let lu = Lu::try_new_with_symbolic(symbolic.clone(), matrix.as_ref())
            .map_err(|_| SolveError::Singular)?;
        counters.factorizations.fetch_add(1, Ordering::Relaxed);
        Ok(LuSolver { matrix, symbolic, lu, counters })
    }

    /// Refactorizes with new values on the same pattern, reusing the symbolic
    /// analysis.  Counts as a factorization.
    pub fn refactor(&mut self, a: &CsrMatrix) -> Result<(), SolveError> {
        self.matrix = to_faer(a);
        self.lu = Lu::try_new_with_symbolic(self.symbolic.clone(), self.matrix.as_ref())
            .map_err(|_| SolveError::Singular)?;
        self.counters.factorizations.fetch_add(1, Ordering::Relaxed);
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    /// Solves `A x = b` for a single right-hand side.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n());
        let rhs = faer::MatRef::from_column_major_slice(b, b.len(), 1);
        let x = self.lu.solve(rhs);
        self.counters.solves.fetch_add(1, Ordering::Relaxed);
        (0..b.len()).map(|i| x[(i, 0)]).collect()
    }

    /// Solves one system per right-hand side against the shared
    /// factorization.  Columns are processed sequentially so the result is
    /// bitwise identical to calling `solve` on each column.
    pub fn solve_many(&self, rhs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rhs.iter().map(|b| self.solve(b)).collect()
    }
}

fn to_faer(a: &CsrMatrix) -> SparseColMat<usize, f64> {
    let mut triplets = Vec::with_capacity(a.nnz());
    for i in 0..a.nrows() {
        let (cols, vals) = a.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            triplets.push(Triplet::new(i, j, v));
        }
    }
    SparseColMat::try_new_from_triplets(a.nrows(), a.ncols(), &triplets)
        .expect("CSR matrix is structurally valid")
}

/// Preconditioner choice for the Krylov solvers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preconditioner {
    None,
    /// Diagonal scaling.
    Jacobi,
    /// Incomplete LU with zero fill-in on the matrix pattern.
    Ilu0,
}

/// Stopping rule shared by both Krylov solvers: relative residual
/// `||b - A x|| / ||b||` below `tol` (the project-wide default is 1e-10).
#[derive(Debug, Clone, Copy)]
pub struct IterativeConfig {
    pub tol: f64,
    pub max_iters: usize,
    pub preconditioner: Preconditioner,
    /// GMRES restart length.
    pub restart: usize,
}

impl Default for IterativeConfig {
    fn default() -> Self {
        IterativeConfig {
            tol: 1e-10,
            max_iters: 5_000,
            preconditioner: Preconditioner::Ilu0,
            restart: 60,
        }
    }
}

enum PrecondOp {
    Identity,
    Diagonal(Vec<f64>),
    Ilu(Ilu0),
}

impl PrecondOp {
    fn build(a: &CsrMatrix, kind: Preconditioner) -> Self {
        match kind {
            Preconditioner::None => PrecondOp::Identity,
            Preconditioner::Jacobi => {
                let d = (0..a.nrows())
                    .map(|i| {
                        let v = a.get(i, i);
                        if v.abs() > 0.0 {
                            1.0 / v
                        } else {
                            1.0
                        }
                    })
                    .collect();
                PrecondOp::Diagonal(d)
            }
            Preconditioner::Ilu0 => PrecondOp::Ilu(Ilu0::new(a)),
        }
    }

    fn apply(&self, r: &[f64], z: &mut [f64]) {
        match self {
            PrecondOp::Identity => z.copy_from_slice(r),
            PrecondOp::Diagonal(d) => {
                for ((z, &r), &d) in z.iter_mut().zip(r).zip(d) {
                    *z = r * d;
                }
            }
            PrecondOp::Ilu(ilu) => ilu.apply(r, z),
        }
    }
}

/// ILU(0): incomplete LU restricted to the original sparsity pattern.
struct Ilu0 {
    factors: CsrMatrix,
    diag_slots: Vec<usize>,
}

impl Ilu0 {
    fn new(a: &CsrMatrix) -> Self {
        let mut factors = a.clone();
        let n = a.nrows();
        let pattern = factors.pattern().clone();
        let diag_slots: Vec<usize> = (0..n)
            .map(|i| pattern.slot(i, i).expect("ILU(0) needs a full diagonal"))
            .collect();
        for i in 0..n {
            let (row_lo, row_hi) = (pattern.indptr()[i], pattern.indptr()[i + 1]);
            for kk in row_lo..row_hi {
                let k = pattern.indices()[kk];
                if k >= i {
                    break;
                }
                let pivot = factors.values()[diag_slots[k]];
                if pivot == 0.0 {
                    continue;
                }
                let lik = factors.values()[kk] / pivot;
                factors.values_mut()[kk] = lik;
                // Subtract lik * U(k, j) for the j present in row i, j > k.
                let (k_lo, k_hi) = (pattern.indptr()[k], pattern.indptr()[k + 1]);
                for kj in k_lo..k_hi {
                    let j = pattern.indices()[kj];
                    if j <= k {
                        continue;
                    }
                    if let Some(slot) = pattern.slot(i, j) {
                        factors.values_mut()[slot] -= lik * factors.values()[kj];
                    }
                }
            }
        }
        Ilu0 { factors, diag_slots }
    }

    /// z = U^-1 L^-1 r with unit-diagonal L.
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        let n = self.factors.nrows();
        let pattern = self.factors.pattern();
        z.copy_from_slice(r);
        for i in 0..n {
            let (lo, hi) = (pattern.indptr()[i], pattern.indptr()[i + 1]);
            let mut acc = z[i];
            for k in lo..hi {
                let j = pattern.indices()[k];
                if j >= i {
                    break;
                }
                acc -= self.factors.values()[k] * z[j];
            }
            z[i] = acc;
        }
        for i in (0..n).rev() {
            let (lo, hi) = (pattern.indptr()[i], pattern.indptr()[i + 1]);
            let mut acc = z[i];
            for k in lo..hi {
                let j = pattern.indices()[k];
                if j > i {
                    acc -= self.factors.values()[k] * z[j];
                }
            }
            z[i] = acc / self.factors.values()[self.diag_slots[i]];
        }
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Preconditioned conjugate gradients for symmetric positive definite
/// systems.  Returns the solution and the iteration count.
pub fn cg(
    a: &CsrMatrix,
    b: &[f64],
    cfg: &IterativeConfig,
) -> Result<(Vec<f64>, usize), SolveError> {
    let n = b.len();
    let precond = PrecondOp::build(a, cfg.preconditioner);
    let norm_b = norm2(b);
    if norm_b == 0.0 {
        return Ok((vec![0.0; n], 0));
    }
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z = vec![0.0; n];
    precond.apply(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 0..cfg.max_iters {
        a.matvec(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if norm2(&r) / norm_b <= cfg.tol {
            return Ok((x, it + 1));
        }
        precond.apply(&r, &mut z);
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(SolveError::NotConverged(cfg.max_iters, norm2(&r) / norm_b))
}

/// Restarted GMRES with left preconditioning; convergence is re-checked on
/// the true (unpreconditioned) residual at every restart.
pub fn gmres(
    a: &CsrMatrix,
    b: &[f64],
    cfg: &IterativeConfig,
) -> Result<(Vec<f64>, usize), SolveError> {
    let n = b.len();
    let precond = PrecondOp::build(a, cfg.preconditioner);
    let norm_b = norm2(b);
    if norm_b == 0.0 {
        return Ok((vec![0.0; n], 0));
    }
    let m = cfg.restart.max(1);
    let mut x = vec![0.0; n];
    let mut total_iters = 0;
    let mut scratch = vec![0.0; n];

    while total_iters < cfg.max_iters {
        // True residual, then preconditioned residual to start the cycle.
        a.matvec(&x, &mut scratch);
        let raw_r: Vec<f64> = b.iter().zip(&scratch).map(|(b, ax)| b - ax).collect();
        if norm2(&raw_r) / norm_b <= cfg.tol {
            return Ok((x, total_iters));
        }
        let mut r = vec![0.0; n];
        precond.apply(&raw_r, &mut r);
        let beta = norm2(&r);
        if beta == 0.0 {
            return Ok((x, total_iters));
        }

        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
        basis.push(r.iter().map(|v| v / beta).collect());
        let mut h = vec![vec![0.0; m]; m + 1];
        let mut cs = vec![0.0; m];
        let mut sn = vec![0.0; m];
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut k_used = 0;

        for k in 0..m {
            if total_iters >= cfg.max_iters {
                break;
            }
            total_iters += 1;
            a.matvec(&basis[k], &mut scratch);
            let mut w = vec![0.0; n];
            precond.apply(&scratch, &mut w);
            for (i, q) in basis.iter().enumerate() {
                h[i][k] = dot(&w, q);
                for (wv, qv) in w.iter_mut().zip(q) {
                    *wv -= h[i][k] * qv;
                }
            }
            h[k + 1][k] = norm2(&w);
            // Apply the accumulated Givens rotations to the new column.
            for i in 0..k {
                let tmp = cs[i] * h[i][k] + sn[i] * h[i + 1][k];
                h[i + 1][k] = -sn[i] * h[i][k] + cs[i] * h[i + 1][k];
                h[i][k] = tmp;
            }
            let denom = (h[k][k] * h[k][k] + h[k + 1][k] * h[k + 1][k]).sqrt();
            if denom == 0.0 {
                k_used = k;
                break;
            }
            cs[k] = h[k][k] / denom;
            sn[k] = h[k + 1][k] / denom;
            h[k][k] = denom;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            k_used = k + 1;
            if h[k + 1][k].abs() > 0.0 {
                basis.push(w.iter().map(|v| v / h[k + 1][k]).collect());
            } else {
                break;
            }
            if (g[k + 1].abs() / beta) * (norm2(&raw_r) / norm_b) <= cfg.tol * 0.1 {
                break;
            }
        }

        // Back substitution for the least-squares coefficients.
        let mut y = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let mut acc = g[i];
            for j in i + 1..k_used {
                acc -= h[i][j] * y[j];
            }
            y[i] = acc / h[i][i];
        }
        for (j, &yj) in y.iter().enumerate() {
            for i in 0..n {
                x[i] += yj * basis[j][i];
            }
        }
    }

    a.matvec(&x, &mut scratch);
    let res: Vec<f64> = b.iter().zip(&scratch).map(|(b, ax)| b - ax).collect();
    let rel = norm2(&res) / norm_b;
    if rel <= cfg.tol {
        Ok((x, total_iters))
    } else {
        Err(SolveError::NotConverged(total_iters, rel))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha20Rng;

    /// Dense LU with partial pivoting: the independent oracle for the sparse
    /// direct solver.
    fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for k in 0..n {
            let piv = (k..n)
                .max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs()))
                .unwrap();
            a.swap(k, piv);
            b.swap(k, piv);
            assert!(a[k][k].abs() > 1e-14, "oracle matrix became singular");
            for i in k + 1..n {
                let factor = a[i][k] / a[k][k];
                for j in k..n {
                    a[i][j] -= factor * a[k][j];
                }
                b[i] -= factor * b[k];
            }
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut acc = b[i];
            for j in i + 1..n {
                acc -= a[i][j] * x[j];
            }
            x[i] = acc / a[i][i];
        }
        x
    }

    /// Random sparse diagonally dominant matrix (well conditioned, so the
    /// oracle and solver agree to near machine precision).
    fn random_system(n: usize, seed: u64) -> (CsrMatrix, Vec<f64>) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut triplets = Vec::new();
        for i in 0..n {
            let mut row_sum = 0.0;
            for _ in 0..4 {
                let j = rng.random_range(0..n);
                if j != i {
                    let v: f64 = rng.random_range(-1.0..1.0);
                    triplets.push((i, j, v));
                    row_sum += v.abs();
                }
            }
            triplets.push((i, i, row_sum + rng.random_range(1.0..2.0)));
        }
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        (CsrMatrix::from_triplets(n, n, &triplets), b)
    }

    #[test]
    fn lu_matches_dense_oracle_on_50x50() {
        let (a, b) = random_system(50, 7);
        let counters = SolverCounters::new();
        let lu = LuSolver::factor(&a, counters.clone()).unwrap();
        let x = lu.solve(&b);
        let x_oracle = dense_solve(a.to_dense(), b.clone());
        for (xs, xo) in x.iter().zip(&x_oracle) {
            assert!((xs - xo).abs() < 1e-10, "{xs} vs {xo}");
        }
        assert_eq!(counters.factorizations(), 1);
        assert_eq!(counters.solves(), 1);
    }

    #[test]
    fn multi_rhs_is_bitwise_identical_to_sequential_solves() {
        let (a, _) = random_system(80, 11);
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let rhs: Vec<Vec<f64>> = (0..12)
            .map(|_| (0..80).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let lu = LuSolver::factor(&a, SolverCounters::new()).unwrap();
        let batch = lu.solve_many(&rhs);
        for (b, batch_x) in rhs.iter().zip(&batch) {
            let single = lu.solve(b);
            assert_eq!(
                single, *batch_x,
                "multi-RHS result must equal single solves bit for bit"
            );
        }
    }

    #[test]
    fn refactor_reuses_symbolic_analysis() {
        let (a, b) = random_system(40, 5);
        let counters = SolverCounters::new();
        let mut lu = LuSolver::factor(&a, counters.clone()).unwrap();
        let x1 = lu.solve(&b);

        let mut scaled = a.clone();
        scaled.scale(2.0);
        lu.refactor(&scaled).unwrap();
        let x2 = lu.solve(&b);
        for (a, b) in x1.iter().zip(&x2) {
            assert!((a - 2.0 * b).abs() < 1e-12);
        }
        assert_eq!(counters.factorizations(), 2);
    }

    #[test]
    fn singular_matrix_is_reported() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 1.0)]);
        // Structurally fine but numerically singular; either the factorization
        // or the solve must not silently return garbage for a zero pivot.
        match LuSolver::factor(&a, SolverCounters::new()) {
            Err(SolveError::Singular) => {}
            Ok(lu) => {
                let x = lu.solve(&[1.0, 0.0]);
                assert!(
                    x.iter().any(|v| !v.is_finite()),
                    "singular solve should not produce a finite answer"
                );
            }
            Err(e) => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn cg_solves_spd_system() {
        // SPD tridiagonal Laplacian.
        let n = 64;
        let mut triplets = Vec::new();
        for i in 0..n {
            triplets.push((i, i, 2.0));
            if i + 1 < n {
                triplets.push((i, i + 1, -1.0));
                triplets.push((i + 1, i, -1.0));
            }
        }
        let a = CsrMatrix::from_triplets(n, n, &triplets);
        let b = vec![1.0; n];
        for pre in [Preconditioner::None, Preconditioner::Jacobi, Preconditioner::Ilu0] {
            let cfg = IterativeConfig { preconditioner: pre, ..Default::default() };
            let (x, iters) = cg(&a, &b, &cfg).unwrap();
            let r = a.matvec_alloc(&x);
            let rel = r
                .iter()
                .zip(&b)
                .map(|(ax, b)| (ax - b) * (ax - b))
                .sum::<f64>()
                .sqrt()
                / (n as f64).sqrt();
            assert!(rel < 1e-9, "preconditioner {pre:?}: rel residual {rel}");
            assert!(iters <= n + 1);
        }
    }

    #[test]
    fn gmres_solves_nonsymmetric_system() {
        let (a, b) = random_system(120, 19);
        for pre in [Preconditioner::None, Preconditioner::Jacobi, Preconditioner::Ilu0] {
            let cfg = IterativeConfig { preconditioner: pre, ..Default::default() };
            let (x, _) = gmres(&a, &b, &cfg).unwrap();
            let ax = a.matvec_alloc(&x);
            let rel = ax
                .iter()
                .zip(&b)
                .map(|(ax, b)| (ax - b) * (ax - b))
                .sum::<f64>()
                .sqrt()
                / b.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(rel <= 1e-10, "preconditioner {pre:?}: rel residual {rel}");
        }
    }
}
