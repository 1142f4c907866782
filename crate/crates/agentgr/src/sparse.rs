//! Sparse nonnegative-integer matrices in CSR form.
//!
//! Used for the interaction adjacencies and for walk-count products. Entries
//! are u64 walk counts; arithmetic is checked, so an overflow on a
//! pathologically dense instance surfaces as an error instead of wrapping.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    values: Vec<u64>,
}

impl SparseMatrix {
    pub fn zero(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            row_ptr: vec![0; rows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Build from (row, col, value) triplets. Duplicate coordinates are summed;
    /// zero values are dropped.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, u64)]) -> Self {
        let mut sorted: Vec<(usize, usize, u64)> = triplets
            .iter()
            .copied()
            .inspect(|&(r, c, _)| assert!(r < rows && c < cols, "triplet out of bounds"))
            .filter(|&(_, _, v)| v != 0)
            .collect();
        sorted.sort_unstable_by_key(|&(r, c, _)| (r, c));

        let mut merged: Vec<(usize, usize, u64)> = Vec::with_capacity(sorted.len());
        for (r, c, v) in sorted {
            match merged.last_mut() {
                Some((pr, pc, pv)) if *pr == r && *pc == c => *pv += v,
                _ => merged.push((r, c, v)),
            }
        }

        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(merged.len());
        let mut values = Vec::with_capacity(merged.len());
        let mut cur_row = 0usize;
        for (r, c, v) in merged {
            while cur_row < r {
                cur_row += 1;
                row_ptr[cur_row] = col_idx.len();
            }
            col_idx.push(c as u32);
            values.push(v);
        }
        while cur_row < rows {
            cur_row += 1;
            row_ptr[cur_row] = col_idx.len();
        }
        Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Build a boolean matrix from coordinate pairs; repeats collapse to 1.
    pub fn from_binary_pairs(rows: usize, cols: usize, pairs: &[(usize, usize)]) -> Self {
        let mut sorted: Vec<(usize, usize)> = pairs.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        let triplets: Vec<(usize, usize, u64)> =
            sorted.into_iter().map(|(r, c)| (r, c, 1)).collect();
        Self::from_triplets(rows, cols, &triplets)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn get(&self, row: usize, col: usize) -> u64 {
        self.row(row)
            .find(|&(c, _)| c == col)
            .map(|(_, v)| v)
            .unwrap_or(0)
    }

    /// Nonzero (col, value) entries of one row, in ascending column order.
    pub fn row(&self, row: usize) -> impl Iterator<Item = (usize, u64)> + '_ {
        let lo = self.row_ptr[row];
        let hi = self.row_ptr[row + 1];
        self.col_idx[lo..hi]
            .iter()
            .zip(&self.values[lo..hi])
            .map(|(&c, &v)| (c as usize, v))
    }

    pub fn row_nnz(&self, row: usize) -> usize {
        self.row_ptr[row + 1] - self.row_ptr[row]
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, u64)> + '_ {
        (0..self.rows).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    pub fn transpose(&self) -> SparseMatrix {
        let triplets: Vec<(usize, usize, u64)> = self.iter().map(|(r, c, v)| (c, r, v)).collect();
        SparseMatrix::from_triplets(self.cols, self.rows, &triplets)
    }

    /// Checked sparse product `self * rhs`.
    pub fn matmul(&self, rhs: &SparseMatrix) -> Result<SparseMatrix> {
        assert_eq!(
            self.cols, rhs.rows,
            "dimension mismatch: {}x{} * {}x{}",
            self.rows, self.cols, rhs.rows, rhs.cols
        );
        let mut acc: Vec<u64> = vec![0; rhs.cols];
        let mut touched: Vec<usize> = Vec::new();
        let mut row_ptr = Vec::with_capacity(self.rows + 1);
        let mut col_idx: Vec<u32> = Vec::new();
        let mut values: Vec<u64> = Vec::new();
        row_ptr.push(0);
        for r in 0..self.rows {
            for (k, a) in self.row(r) {
                for (c, b) in rhs.row(k) {
                    let prod = a
                        .checked_mul(b)
                        .ok_or(Error::CountOverflow { row: r, col: c })?;
                    if acc[c] == 0 && prod != 0 {
                        touched.push(c);
                    }
                    acc[c] = acc[c]
                        .checked_add(prod)
                        .ok_or(Error::CountOverflow { row: r, col: c })?;
                }
            }
            touched.sort_unstable();
            for &c in &touched {
                col_idx.push(c as u32);
                values.push(acc[c]);
                acc[c] = 0;
            }
            touched.clear();
            row_ptr.push(col_idx.len());
        }
        Ok(SparseMatrix {
            rows: self.rows,
            cols: rhs.cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Dense copy, mostly for small fixtures and oracle comparisons.
    pub fn to_dense(&self) -> Vec<Vec<u64>> {
        let mut out = vec![vec![0u64; self.cols]; self.rows];
        for (r, c, v) in self.iter() {
            out[r][c] = v;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_merge_duplicates() {
        let m = SparseMatrix::from_triplets(2, 2, &[(0, 1, 2), (0, 1, 3), (1, 0, 1)]);
        assert_eq!(m.get(0, 1), 5);
        assert_eq!(m.get(1, 0), 1);
        assert_eq!(m.nnz(), 2);
    }

    #[test]
    fn binary_pairs_collapse() {
        let m = SparseMatrix::from_binary_pairs(2, 3, &[(0, 0), (0, 0), (1, 2)]);
        assert_eq!(m.get(0, 0), 1);
        assert_eq!(m.nnz(), 2);
    }

    #[test]
    fn matmul_small() {
        // [[1,1],[0,1]] * [[1,0],[1,1]] = [[2,1],[1,1]]
        let a = SparseMatrix::from_binary_pairs(2, 2, &[(0, 0), (0, 1), (1, 1)]);
        let b = a.transpose();
        let p = a.matmul(&b).unwrap();
        assert_eq!(p.to_dense(), vec![vec![2, 1], vec![1, 1]]);
    }

    #[test]
    fn matmul_zero_annihilates() {
        let a = SparseMatrix::from_binary_pairs(3, 2, &[(0, 0), (2, 1)]);
        let z = SparseMatrix::zero(2, 4);
        let p = a.matmul(&z).unwrap();
        assert_eq!(p.nnz(), 0);
        assert_eq!(p.rows(), 3);
        assert_eq!(p.cols(), 4);
    }

    #[test]
    fn matmul_overflow_is_error() {
        let a = SparseMatrix::from_triplets(1, 1, &[(0, 0, u64::MAX)]);
        let b = SparseMatrix::from_triplets(1, 1, &[(0, 0, 2)]);
        assert!(matches!(
            a.matmul(&b),
            Err(Error::CountOverflow { row: 0, col: 0 })
        ));
    }

    #[test]
    fn transpose_roundtrip() {
        let m = SparseMatrix::from_triplets(3, 4, &[(0, 3, 2), (1, 0, 1), (2, 2, 7)]);
        assert_eq!(m.transpose().transpose(), m);
    }
}
