//! Compressed sparse row matrices with a fixed, shareable sparsity pattern.
//!
//! Assembly needs three things the standard crates make awkward in
//! combination: (1) a pattern built once per space pair and reused across
//! every time step, (2) cheap `values`-only updates so operators with the
//! same pattern can be summed without re-sorting, and (3) precomputed slot
//! maps so block (saddle-point) systems can be refilled in O(nnz).  The type
//! here is deliberately small; factorization is delegated to the solver
//! module.

use std::sync::Arc;

/// Immutable CSR sparsity structure (row pointers + sorted column indices).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparsityPattern {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
}

impl SparsityPattern {
    /// Builds a pattern from (row, col) pairs; duplicates are merged.
    pub fn from_pairs(
        nrows: usize,
        ncols: usize,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Arc<Self> {
        let mut per_row: Vec<Vec<usize>> = vec![Vec::new(); nrows];
        for (i, j) in pairs {
            debug_assert!(i < nrows && j < ncols);
            per_row[i].push(j);
        }
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::new();
        indptr.push(0);
        for row in &mut per_row {
            row.sort_unstable();
            row.dedup();
            indices.extend_from_slice(row);
            indptr.push(indices.len());
        }
        Arc::new(SparsityPattern { nrows, ncols, indptr, indices })
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    /// Column indices of row `i`.
    pub fn row_cols(&self, i: usize) -> &[usize] {
        &self.indices[self.indptr[i]..self.indptr[i + 1]]
    }

    /// Index into `values` for entry (i, j), if present.
    pub fn slot(&self, i: usize, j: usize) -> Option<usize> {
        let lo = self.indptr[i];
        let cols = &self.indices[lo..self.indptr[i + 1]];
        cols.binary_search(&j).ok().map(|k| lo + k)
    }

    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }
}

/// CSR matrix: a shared pattern plus owned values.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    pattern: Arc<SparsityPattern>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(pattern: Arc<SparsityPattern>) -> Self {
        let values = vec![0.0; pattern.nnz()];
        CsrMatrix { pattern, values }
    }

    /// Builds a matrix (and its pattern) from triplets; duplicate entries are
    /// summed, which matches finite-element accumulation semantics.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let pattern =
            SparsityPattern::from_pairs(nrows, ncols, triplets.iter().map(|&(i, j, _)| (i, j)));
        let mut m = CsrMatrix::zeros(pattern);
        for &(i, j, v) in triplets {
            m.add_at(i, j, v);
        }
        m
    }

    pub fn pattern(&self) -> &Arc<SparsityPattern> {
        &self.pattern
    }

    pub fn nrows(&self) -> usize {
        self.pattern.nrows
    }

    pub fn ncols(&self) -> usize {
        self.pattern.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn set_zero(&mut self) {
        self.values.fill(0.0);
    }

    /// Adds `v` to entry (i, j); the entry must exist in the pattern.
    #[inline]
    pub fn add_at(&mut self, i: usize, j: usize, v: f64) {
        let slot = self
            .pattern
            .slot(i, j)
            .unwrap_or_else(|| panic!("entry ({i}, {j}) absent from sparsity pattern"));
        self.values[slot] += v;
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let slot = self
            .pattern
            .slot(i, j)
            .unwrap_or_else(|| panic!("entry ({i}, {j}) absent from sparsity pattern"));
        self.values[slot] = v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.pattern.slot(i, j).map_or(0.0, |s| self.values[s])
    }

    /// `self += alpha * other`; both matrices must share the same pattern.
    pub fn axpy(&mut self, alpha: f64, other: &CsrMatrix) {
        assert!(
            Arc::ptr_eq(&self.pattern, &other.pattern) || self.pattern == other.pattern,
            "axpy requires identical sparsity patterns"
        );
        for (v, o) in self.values.iter_mut().zip(&other.values) {
            *v += alpha * o;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for v in &mut self.values {
            *v *= alpha;
        }
    }

    /// y = A x.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols());
        assert_eq!(y.len(), self.nrows());
        for i in 0..self.nrows() {
            let (lo, hi) = (self.pattern.indptr[i], self.pattern.indptr[i + 1]);
            let mut acc = 0.0;
            for k in lo..hi {
                acc += self.values[k] * x[self.pattern.indices[k]];
            }
            y[i] = acc;
        }
    }

    pub fn matvec_alloc(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows()];
        self.matvec(x, &mut y);
        y
    }

    /// Row `i` as parallel (columns, values) slices.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (lo, hi) = (self.pattern.indptr[i], self.pattern.indptr[i + 1]);
        (&self.pattern.indices[lo..hi], &self.values[lo..hi])
    }

    /// Replaces row `i` by zero (values only; the pattern is untouched).
    pub fn zero_row(&mut self, i: usize) {
        let (lo, hi) = (self.pattern.indptr[i], self.pattern.indptr[i + 1]);
        self.values[lo..hi].fill(0.0);
    }

    /// A^T as a new CSR matrix.
    pub fn transpose(&self) -> CsrMatrix {
        let (nr, nc) = (self.nrows(), self.ncols());
        let mut counts = vec![0usize; nc];
        for &j in &self.pattern.indices {
            counts[j] += 1;
        }
        let mut indptr = vec![0usize; nc + 1];
        for j in 0..nc {
            indptr[j + 1] = indptr[j] + counts[j];
        }
        let mut indices = vec![0usize; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        let mut next = indptr.clone();
        for i in 0..nr {
            let (lo, hi) = (self.pattern.indptr[i], self.pattern.indptr[i + 1]);
            for k in lo..hi {
                let j = self.pattern.indices[k];
                let dst = next[j];
                indices[dst] = i;
                values[dst] = self.values[k];
                next[j] += 1;
            }
        }
        CsrMatrix {
            pattern: Arc::new(SparsityPattern { nrows: nc, ncols: nr, indptr, indices }),
            values,
        }
    }

    /// Dense copy for tests and small oracles.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut dense = vec![vec![0.0; self.ncols()]; self.nrows()];
        for i in 0..self.nrows() {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                dense[i][j] = v;
            }
        }
        dense
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.nrows())
            .map(|i| self.row(i).1.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sample() -> CsrMatrix {
        CsrMatrix::from_triplets(
            3,
            3,
            &[
                (0, 0, 2.0),
                (0, 2, 1.0),
                (1, 1, 3.0),
                (2, 0, -1.0),
                (2, 2, 4.0),
                (0, 0, 0.5), // duplicate, summed
            ],
        )
    }

    #[test]
    fn triplets_merge_and_matvec() {
        let m = sample();
        assert_eq!(m.nnz(), 5);
        assert_relative_eq!(m.get(0, 0), 2.5);
        let y = m.matvec_alloc(&[1.0, 2.0, 3.0]);
        assert_relative_eq!(y[0], 2.5 + 3.0);
        assert_relative_eq!(y[1], 6.0);
        assert_relative_eq!(y[2], -1.0 + 12.0);
    }

    #[test]
    fn transpose_round_trip() {
        let m = sample();
        let mt = m.transpose();
        let mtt = mt.transpose();
        assert_eq!(m.to_dense(), mtt.to_dense());
        assert_relative_eq!(mt.get(2, 0), 1.0);
        assert_relative_eq!(mt.get(0, 2), -1.0);
    }

    #[test]
    fn axpy_same_pattern() {
        let m = sample();
        let mut a = m.clone();
        a.axpy(2.0, &m);
        assert_relative_eq!(a.get(0, 0), 3.0 * 2.5);
        assert_relative_eq!(a.get(2, 2), 12.0);
    }

    #[test]
    fn zero_row_and_set() {
        let mut m = sample();
        m.zero_row(0);
        m.set(0, 0, 1.0);
        assert_relative_eq!(m.get(0, 0), 1.0);
        assert_relative_eq!(m.get(0, 2), 0.0);
    }
}
