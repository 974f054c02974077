//! Sparse count matrices in coordinate form with a row index.
//!
//! Rows hold bag-of-n-gram count vectors; the weighted row-gather-and-sum
//! kernel ([`crate::kernel::Tape::bag_sum`]) consumes them.

use super::tensor::{KernelError, Tensor};

/// Sparse matrix of positive weights, entries sorted by `(row, col)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<(usize, usize, f64)>,
    /// CSR-style offsets into `entries`, length `rows + 1`.
    row_ptr: Vec<usize>,
}

impl SparseMatrix {
    /// Builds a sparse matrix, sorting entries and validating invariants:
    /// indices in range, weights positive, no duplicate coordinates.
    pub fn new(
        rows: usize,
        cols: usize,
        mut entries: Vec<(usize, usize, f64)>,
    ) -> Result<Self, KernelError> {
        entries.sort_by_key(|a| (a.0, a.1));
        for (i, &(r, c, w)) in entries.iter().enumerate() {
            if r >= rows {
                return Err(KernelError::InvalidSparse(format!(
                    "row {r} out of range (rows {rows})"
                )));
            }
            if c >= cols {
                return Err(KernelError::InvalidSparse(format!(
                    "col {c} out of range (cols {cols})"
                )));
            }
            if w <= 0.0 || !w.is_finite() {
                return Err(KernelError::InvalidSparse(format!(
                    "weight at ({r},{c}) must be finite and positive, got {w}"
                )));
            }
            if i > 0 && entries[i - 1].0 == r && entries[i - 1].1 == c {
                return Err(KernelError::InvalidSparse(format!(
                    "duplicate entry at ({r},{c})"
                )));
            }
        }
        let mut row_ptr = vec![0usize; rows + 1];
        for &(r, _, _) in &entries {
            row_ptr[r + 1] += 1;
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Ok(SparseMatrix {
            rows,
            cols,
            entries,
            row_ptr,
        })
    }

    /// Builds from per-row `(col, weight)` lists.
    pub fn from_rows(rows: &[Vec<(usize, f64)>], cols: usize) -> Result<Self, KernelError> {
        let mut entries = Vec::new();
        for (r, row) in rows.iter().enumerate() {
            for &(c, w) in row {
                entries.push((r, c, w));
            }
        }
        Self::new(rows.len(), cols, entries)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    /// Entries of one row.
    pub fn row(&self, r: usize) -> &[(usize, usize, f64)] {
        &self.entries[self.row_ptr[r]..self.row_ptr[r + 1]]
    }

    /// Dense `[rows, cols]` equivalent. Oracle route for bag_sum tests.
    pub fn densify(&self) -> Tensor {
        let mut out = Tensor::zeros(&[self.rows, self.cols]);
        for &(r, c, w) in &self.entries {
            out.data_mut()[r * self.cols + c] = w;
        }
        out
    }

    /// New matrix formed by stacking the given rows of `self`.
    pub fn select_rows(&self, which: &[usize]) -> Result<SparseMatrix, KernelError> {
        let mut entries = Vec::new();
        for (new_r, &r) in which.iter().enumerate() {
            if r >= self.rows {
                return Err(KernelError::IndexOutOfRange {
                    op: "select_rows",
                    index: r,
                    bound: self.rows,
                });
            }
            for &(_, c, w) in self.row(r) {
                entries.push((new_r, c, w));
            }
        }
        SparseMatrix::new(which.len(), self.cols, entries)
    }
}
