//! Sparse matrix storage, validation, column partitioning, and the
//! per-row structural statistics behind every stepsize rule.
//!
//! The matrix is stored twice: column-major (for per-coordinate gradient
//! sets `D_i` and column updates `A[:,i] * t`) and row-major (for the
//! per-row counts `omega_j` and residual recomputation). Both traversals
//! are O(nnz). Coordinate indices are 0-based internally; file formats
//! document their own convention.

use thiserror::Error;

use crate::kahan;

#[derive(Debug, Error, PartialEq)]
pub enum MatrixError {
    #[error("row {0} has no nonzero entry")]
    EmptyRow(usize),
    #[error("column {0} has no nonzero entry")]
    EmptyColumn(usize),
    #[error("entry ({row}, {col}) out of bounds for a {n_rows}x{n_cols} matrix")]
    IndexOutOfBounds {
        row: usize,
        col: usize,
        n_rows: usize,
        n_cols: usize,
    },
    #[error("duplicate entry at ({row}, {col})")]
    DuplicateEntry { row: usize, col: usize },
    #[error("matrix must have at least one row and one column")]
    EmptyShape,
    #[error("{d} coordinates cannot be split into {c} equal blocks")]
    NotDivisible { d: usize, c: usize },
    #[error("partition covers {expected} coordinates but the matrix has {got} columns")]
    PartitionMismatch { expected: usize, got: usize },
}

/// Sparse `n_rows x n_cols` matrix with dual row/column access.
///
/// Invariants (enforced at construction and by [`SparseMatrix::validate`]):
/// no empty row, no empty column, indices in bounds, no duplicate
/// `(row, col)` pairs. Exact-zero values are dropped on ingestion; any
/// stored entry counts as structurally nonzero.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    // column-major
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    col_val: Vec<f64>,
    // row-major mirror
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    row_val: Vec<f64>,
}

impl SparseMatrix {
    /// Builds a matrix from `(row, col, value)` triples.
    ///
    /// Exact zeros are dropped. Duplicate coordinates are rejected rather
    /// than summed; silent summation hides data errors.
    pub fn from_triples(
        n_rows: usize,
        n_cols: usize,
        triples: &[(usize, usize, f64)],
    ) -> Result<Self, MatrixError> {
        if n_rows == 0 || n_cols == 0 {
            return Err(MatrixError::EmptyShape);
        }
        for &(r, c, _) in triples {
            if r >= n_rows || c >= n_cols {
                return Err(MatrixError::IndexOutOfBounds {
                    row: r,
                    col: c,
                    n_rows,
                    n_cols,
                });
            }
        }
        let mut kept: Vec<(usize, usize, f64)> = triples
            .iter()
            .copied()
            .filter(|&(_, _, v)| v != 0.0)
            .collect();
        // Column-major order: by (col, row).
        kept.sort_unstable_by(|a, b| (a.1, a.0).cmp(&(b.1, b.0)));
        for w in kept.windows(2) {
            if w[0].0 == w[1].0 && w[0].1 == w[1].1 {
                return Err(MatrixError::DuplicateEntry {
                    row: w[0].0,
                    col: w[0].1,
                });
            }
        }
        let nnz = kept.len();

        let mut col_ptr = vec![0usize; n_cols + 1];
        for &(_, c, _) in &kept {
            col_ptr[c + 1] += 1;
        }
        for c in 0..n_cols {
            col_ptr[c + 1] += col_ptr[c];
        }
        let row_idx: Vec<usize> = kept.iter().map(|t| t.0).collect();
        let col_val: Vec<f64> = kept.iter().map(|t| t.2).collect();

        // Row-major mirror by stable counting sort over rows.
        let mut row_ptr = vec![0usize; n_rows + 1];
        for &r in &row_idx {
            row_ptr[r + 1] += 1;
        }
        for r in 0..n_rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        let mut next = row_ptr.clone();
        let mut col_idx = vec![0usize; nnz];
        let mut row_val = vec![0.0f64; nnz];
        for c in 0..n_cols {
            for k in col_ptr[c]..col_ptr[c + 1] {
                let r = row_idx[k];
                col_idx[next[r]] = c;
                row_val[next[r]] = col_val[k];
                next[r] += 1;
            }
        }

        let m = Self {
            n_rows,
            n_cols,
            col_ptr,
            row_idx,
            col_val,
            row_ptr,
            col_idx,
            row_val,
        };
        m.validate()?;
        Ok(m)
    }

    /// Assembles a matrix from raw compressed arrays, as read from the
    /// binary file format. The caller's arrays are re-validated.
    pub(crate) fn from_parts(
        n_rows: usize,
        n_cols: usize,
        col_ptr: Vec<usize>,
        row_idx: Vec<usize>,
        col_val: Vec<f64>,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        row_val: Vec<f64>,
    ) -> Result<Self, MatrixError> {
        if n_rows == 0 || n_cols == 0 {
            return Err(MatrixError::EmptyShape);
        }
        let m = Self {
            n_rows,
            n_cols,
            col_ptr,
            row_idx,
            col_val,
            row_ptr,
            col_idx,
            row_val,
        };
        m.validate()?;
        Ok(m)
    }

    /// Re-checks the structural invariants: every row and column nonempty,
    /// indices in range and strictly increasing within each column/row
    /// (which also rules out duplicates).
    pub fn validate(&self) -> Result<(), MatrixError> {
        if self.n_rows == 0 || self.n_cols == 0 {
            return Err(MatrixError::EmptyShape);
        }
        for c in 0..self.n_cols {
            let lo = self.col_ptr[c];
            let hi = self.col_ptr[c + 1];
            if lo == hi {
                return Err(MatrixError::EmptyColumn(c));
            }
            for k in lo..hi {
                let r = self.row_idx[k];
                if r >= self.n_rows {
                    return Err(MatrixError::IndexOutOfBounds {
                        row: r,
                        col: c,
                        n_rows: self.n_rows,
                        n_cols: self.n_cols,
                    });
                }
                if k > lo && self.row_idx[k - 1] >= r {
                    return Err(MatrixError::DuplicateEntry { row: r, col: c });
                }
            }
        }
        for r in 0..self.n_rows {
            let lo = self.row_ptr[r];
            let hi = self.row_ptr[r + 1];
            if lo == hi {
                return Err(MatrixError::EmptyRow(r));
            }
            for k in lo..hi {
                let c = self.col_idx[k];
                if c >= self.n_cols {
                    return Err(MatrixError::IndexOutOfBounds {
                        row: r,
                        col: c,
                        n_rows: self.n_rows,
                        n_cols: self.n_cols,
                    });
                }
                if k > lo && self.col_idx[k - 1] >= c {
                    return Err(MatrixError::DuplicateEntry { row: r, col: c });
                }
            }
        }
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    /// Nonzero rows of column `i` (the gradient set `D_i`) and their values.
    #[inline]
    pub fn col(&self, i: usize) -> (&[usize], &[f64]) {
        let lo = self.col_ptr[i];
        let hi = self.col_ptr[i + 1];
        (&self.row_idx[lo..hi], &self.col_val[lo..hi])
    }

    /// Nonzero columns of row `j` and their values.
    #[inline]
    pub fn row(&self, j: usize) -> (&[usize], &[f64]) {
        let lo = self.row_ptr[j];
        let hi = self.row_ptr[j + 1];
        (&self.col_idx[lo..hi], &self.row_val[lo..hi])
    }

    /// Iterates all entries in column-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_cols).flat_map(move |c| {
            let (rows, vals) = self.col(c);
            rows.iter().zip(vals).map(move |(&r, &v)| (r, c, v))
        })
    }

    /// Raw column-major arrays `(col_ptr, row_idx, values)`.
    pub fn csc_parts(&self) -> (&[usize], &[usize], &[f64]) {
        (&self.col_ptr, &self.row_idx, &self.col_val)
    }

    /// Raw row-major arrays `(row_ptr, col_idx, values)`.
    pub fn csr_parts(&self) -> (&[usize], &[usize], &[f64]) {
        (&self.row_ptr, &self.col_idx, &self.row_val)
    }

    /// Dense product `A * x`, accumulated row-major (one dot per row).
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n_cols);
        (0..self.n_rows)
            .map(|j| {
                let (cols, vals) = self.row(j);
                cols.iter().zip(vals).map(|(&c, &v)| v * x[c]).sum()
            })
            .collect()
    }

    /// Dense product `A^T * y`, one dot per column.
    pub fn mul_transpose_vec(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.n_rows);
        (0..self.n_cols)
            .map(|i| {
                let (rows, vals) = self.col(i);
                rows.iter().zip(vals).map(|(&r, &v)| v * y[r]).sum()
            })
            .collect()
    }

    /// Returns a copy with every value transformed by `f(row, col, value)`.
    /// The transform must not produce zeros.
    pub fn map_values(&self, mut f: impl FnMut(usize, usize, f64) -> f64) -> Self {
        let mut out = self.clone();
        for c in 0..self.n_cols {
            for k in out.col_ptr[c]..out.col_ptr[c + 1] {
                out.col_val[k] = f(out.row_idx[k], c, out.col_val[k]);
            }
        }
        for r in 0..self.n_rows {
            for k in out.row_ptr[r]..out.row_ptr[r + 1] {
                out.row_val[k] = f(r, out.col_idx[k], out.row_val[k]);
            }
        }
        out
    }
}

/// Uniform contiguous partition of `d` coordinates into `c` blocks of
/// size `s = d / c`; block `l` owns coordinates `[l*s, (l+1)*s)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Partition {
    d: usize,
    c: usize,
    s: usize,
}

impl Partition {
    pub fn uniform(d: usize, c: usize) -> Result<Self, MatrixError> {
        if c == 0 || d == 0 || d % c != 0 {
            return Err(MatrixError::NotDivisible { d, c });
        }
        Ok(Self { d, c, s: d / c })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Number of nodes/blocks.
    pub fn c(&self) -> usize {
        self.c
    }

    /// Coordinates per node.
    pub fn s(&self) -> usize {
        self.s
    }

    /// The node owning coordinate `i`.
    #[inline]
    pub fn node_of(&self, i: usize) -> usize {
        i / self.s
    }

    /// The coordinate range owned by node `l`.
    #[inline]
    pub fn block(&self, l: usize) -> std::ops::Range<usize> {
        l * self.s..(l + 1) * self.s
    }
}

/// Per-row structural statistics of a partitioned matrix.
///
/// `omega[j]` counts nonzeros in row `j`; `omega_prime[j]` counts the
/// partitions with at least one nonzero in row `j`; `col_sq_norms[i]` is
/// the compensated sum of squares of column `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct RowStats {
    pub omega: Vec<usize>,
    pub omega_prime: Vec<usize>,
    pub col_sq_norms: Vec<f64>,
}

impl RowStats {
    pub fn max_omega(&self) -> usize {
        self.omega.iter().copied().max().unwrap_or(0)
    }

    pub fn max_omega_prime(&self) -> usize {
        self.omega_prime.iter().copied().max().unwrap_or(0)
    }
}

/// Computes [`RowStats`] for a validated matrix under `p`.
pub fn row_stats(m: &SparseMatrix, p: &Partition) -> Result<RowStats, MatrixError> {
    if p.d() != m.n_cols() {
        return Err(MatrixError::PartitionMismatch {
            expected: p.d(),
            got: m.n_cols(),
        });
    }
    let mut omega = Vec::with_capacity(m.n_rows());
    let mut omega_prime = Vec::with_capacity(m.n_rows());
    for j in 0..m.n_rows() {
        let (cols, _) = m.row(j);
        omega.push(cols.len());
        // Columns are sorted, so partition ids appear in runs.
        let mut active = 0usize;
        let mut last = usize::MAX;
        for &i in cols {
            let l = p.node_of(i);
            if l != last {
                active += 1;
                last = l;
            }
        }
        omega_prime.push(active);
    }
    let col_sq_norms = (0..m.n_cols())
        .map(|i| {
            let (_, vals) = m.col(i);
            kahan::sum(vals.iter().map(|v| v * v))
        })
        .collect();
    Ok(RowStats {
        omega,
        omega_prime,
        col_sq_norms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// 3x4 all-ones-pattern fixture: row 0 hits cols {0,1}, row 1 hits
    /// {1,2,3}, row 2 hits {0,3}.
    pub fn matrix_e() -> SparseMatrix {
        SparseMatrix::from_triples(
            3,
            4,
            &[
                (0, 0, 1.0),
                (0, 1, 1.0),
                (1, 1, 1.0),
                (1, 2, 1.0),
                (1, 3, 1.0),
                (2, 0, 1.0),
                (2, 3, 1.0),
            ],
        )
        .unwrap()
    }

    #[test]
    fn identity_is_valid() {
        let m = SparseMatrix::from_triples(2, 2, &[(0, 0, 1.0), (1, 1, 1.0)]).unwrap();
        assert_eq!(m.nnz(), 2);
        assert!(m.validate().is_ok());
    }

    #[test]
    fn empty_column_rejected() {
        // Column 2 (0-based) of a 3x4 matrix left empty.
        let err = SparseMatrix::from_triples(
            3,
            4,
            &[(0, 0, 1.0), (1, 1, 1.0), (2, 3, 1.0), (0, 3, 1.0), (1, 0, 1.0)],
        )
        .unwrap_err();
        assert_eq!(err, MatrixError::EmptyColumn(2));
    }

    #[test]
    fn empty_row_rejected() {
        let err =
            SparseMatrix::from_triples(2, 2, &[(0, 0, 1.0), (0, 1, 1.0)]).unwrap_err();
        assert_eq!(err, MatrixError::EmptyRow(1));
    }

    #[test]
    fn out_of_bounds_rejected() {
        let err = SparseMatrix::from_triples(2, 2, &[(0, 0, 1.0), (2, 1, 1.0)]).unwrap_err();
        assert!(matches!(err, MatrixError::IndexOutOfBounds { row: 2, .. }));
    }

    #[test]
    fn duplicates_rejected_not_summed() {
        let err = SparseMatrix::from_triples(
            2,
            2,
            &[(0, 0, 1.0), (0, 0, 2.0), (1, 1, 1.0), (0, 1, 1.0)],
        )
        .unwrap_err();
        assert_eq!(err, MatrixError::DuplicateEntry { row: 0, col: 0 });
    }

    #[test]
    fn exact_zeros_dropped() {
        // The zero entry is dropped, which empties row 1.
        let err = SparseMatrix::from_triples(2, 2, &[(0, 0, 1.0), (0, 1, 1.0), (1, 1, 0.0)])
            .unwrap_err();
        assert_eq!(err, MatrixError::EmptyRow(1));
    }

    #[test]
    fn example_matrix_is_valid() {
        let m = matrix_e();
        assert!(m.validate().is_ok());
        assert_eq!(m.nnz(), 7);
        assert_eq!(m.row(1).0, &[1, 2, 3]);
        assert_eq!(m.col(3).0, &[1, 2]);
    }

    #[test]
    fn partition_uniform_splits_contiguously() {
        let p = Partition::uniform(4, 2).unwrap();
        assert_eq!(p.block(0), 0..2);
        assert_eq!(p.block(1), 2..4);
        assert_eq!(p.node_of(1), 0);
        assert_eq!(p.node_of(2), 1);

        let single = Partition::uniform(4, 1).unwrap();
        assert_eq!(single.block(0), 0..4);
    }

    #[test]
    fn partition_rejects_non_divisible() {
        assert_eq!(
            Partition::uniform(5, 2).unwrap_err(),
            MatrixError::NotDivisible { d: 5, c: 2 }
        );
    }

    #[test]
    fn partition_at_large_scale() {
        let p = Partition::uniform(50_000_000_000, 256).unwrap();
        assert_eq!(p.s(), 195_312_500);
    }

    #[test]
    fn row_stats_on_example() {
        let m = matrix_e();
        let p = Partition::uniform(4, 2).unwrap();
        let st = row_stats(&m, &p).unwrap();
        assert_eq!(st.omega, vec![2, 3, 2]);
        assert_eq!(st.omega_prime, vec![1, 2, 2]);
        assert_eq!(st.col_sq_norms, vec![2.0, 2.0, 1.0, 2.0]);
    }

    #[test]
    fn row_stats_single_node() {
        let m = matrix_e();
        let p = Partition::uniform(4, 1).unwrap();
        let st = row_stats(&m, &p).unwrap();
        assert!(st.omega_prime.iter().all(|&w| w == 1));
    }

    #[test]
    fn row_and_column_sums_agree() {
        let m = matrix_e();
        let by_rows: f64 = (0..m.n_rows()).map(|j| m.row(j).1.iter().sum::<f64>()).sum();
        let by_cols: f64 = (0..m.n_cols()).map(|i| m.col(i).1.iter().sum::<f64>()).sum();
        assert_eq!(by_rows, by_cols);
    }
}
