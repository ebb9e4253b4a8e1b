use nalgebra::DMatrix;

use super::SolverError;

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

// Below this many rows the thread hand-off costs more than it saves.
#[cfg(feature = "parallel")]
const PAR_ROWS: usize = 16_384;

impl SparseMatrix {
    /// Builds a matrix from `(row, col, value)` triplets. Duplicates are
    /// summed; explicit zeros that result are kept out.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self, SolverError> {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nrows];
        for &(r, c, v) in triplets {
            if r >= nrows || c >= ncols {
                return Err(SolverError::IndexOutOfRange {
                    row: r,
                    col: c,
                    nrows,
                    ncols,
                });
            }
            rows[r].push((c, v));
        }
        Self::from_rows(ncols, rows)
    }

    /// Builds a matrix from per-row `(col, value)` lists in any order.
    pub fn from_rows(ncols: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self, SolverError> {
        let nrows = rows.len();
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for (r, mut row) in rows.into_iter().enumerate() {
            row.sort_by_key(|&(c, _)| c);
            let mut last: Option<usize> = None;
            for (c, v) in row {
                if c >= ncols {
                    return Err(SolverError::IndexOutOfRange {
                        row: r,
                        col: c,
                        nrows,
                        ncols,
                    });
                }
                if last == Some(c) {
                    *values.last_mut().unwrap() += v;
                } else {
                    indices.push(c);
                    values.push(v);
                    last = Some(c);
                }
            }
            indptr.push(indices.len());
        }
        Ok(Self {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `r`.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.indptr[r], self.indptr[r + 1]);
        (&self.indices[a..b], &self.values[a..b])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&c) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    pub fn row_sum(&self, r: usize) -> f64 {
        self.row(r).1.iter().sum()
    }

    fn row_dot(&self, r: usize, x: &[f64]) -> f64 {
        let (cols, vals) = self.row(r);
        cols.iter().zip(vals).map(|(&c, &v)| v * x[c]).sum()
    }

    /// `y = A x`. Each entry is a sequential dot product, so the result does
    /// not depend on the thread count.
    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols, "matvec: x has wrong length");
        assert_eq!(y.len(), self.nrows, "matvec: y has wrong length");
        #[cfg(feature = "parallel")]
        if self.nrows >= PAR_ROWS {
            use rayon::prelude::*;
            y.par_iter_mut()
                .enumerate()
                .for_each(|(r, out)| *out = self.row_dot(r, x));
            return;
        }
        for (r, out) in y.iter_mut().enumerate() {
            *out = self.row_dot(r, x);
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.ncols + 1];
        for &c in &self.indices {
            counts[c + 1] += 1;
        }
        for c in 0..self.ncols {
            counts[c + 1] += counts[c];
        }
        let indptr = counts.clone();
        let mut next = counts;
        let mut indices = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                let k = next[c];
                indices[k] = r;
                values[k] = v;
                next[c] += 1;
            }
        }
        Self {
            nrows: self.ncols,
            ncols: self.nrows,
            indptr,
            indices,
            values,
        }
    }

    /// Returns a copy whose rows flagged in `mask` are replaced by identity rows.
    pub fn with_identity_rows(&self, mask: &[bool]) -> Self {
        assert_eq!(mask.len(), self.nrows);
        let rows = (0..self.nrows)
            .map(|r| {
                if mask[r] {
                    vec![(r, 1.0)]
                } else {
                    let (c, v) = self.row(r);
                    c.iter().copied().zip(v.iter().copied()).collect()
                }
            })
            .collect();
        Self::from_rows(self.ncols, rows).expect("indices already validated")
    }

    /// Multiplies row `r` by `s[r]`.
    pub fn scale_rows(&mut self, s: &[f64]) {
        assert_eq!(s.len(), self.nrows);
        for r in 0..self.nrows {
            for v in &mut self.values[self.indptr[r]..self.indptr[r + 1]] {
                *v *= s[r];
            }
        }
    }

    /// The square bordered matrix `[A, col; rowᵀ, 0]`.
    pub fn bordered(&self, col: &[f64], row: &[f64]) -> Self {
        assert_eq!(self.nrows, self.ncols, "bordering needs a square matrix");
        let n = self.nrows;
        let mut rows: Vec<Vec<(usize, f64)>> = (0..n)
            .map(|r| {
                let (c, v) = self.row(r);
                let mut out: Vec<(usize, f64)> = c.iter().copied().zip(v.iter().copied()).collect();
                out.push((n, col[r]));
                out
            })
            .collect();
        rows.push(row.iter().copied().enumerate().collect());
        Self::from_rows(n + 1, rows).expect("indices already validated")
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                m[(r, c)] += v;
            }
        }
        m
    }

    /// Largest absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.nrows)
            .map(|r| self.row(r).1.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn duplicates_are_summed_and_sorted() {
        let m = SparseMatrix::from_triplets(2, 3, &[(0, 2, 1.0), (0, 0, 2.0), (0, 2, 3.0), (1, 1, -1.0)]).unwrap();
        assert_eq!(m.row(0), (&[0usize, 2][..], &[2.0, 4.0][..]));
        assert_eq!(m.nnz(), 3);
        assert!(SparseMatrix::from_triplets(2, 2, &[(2, 0, 1.0)]).is_err());
    }

    #[test]
    fn matvec_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let mut trips = Vec::new();
            for r in 0..50 {
                for c in 0..50 {
                    if rng.random::<f64>() < 0.2 {
                        trips.push((r, c, rng.random_range(-1.0..1.0)));
                    }
                }
            }
            let m = SparseMatrix::from_triplets(50, 50, &trips).unwrap();
            let x: Vec<f64> = (0..50).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y = m.matvec(&x);
            let yd = m.to_dense() * nalgebra::DVector::from_vec(x.clone());
            for i in 0..50 {
                assert!((y[i] - yd[i]).abs() < 1e-12);
            }
            assert_eq!(m.transpose().transpose(), m);
            assert_eq!(m.transpose().to_dense(), m.to_dense().transpose());
        }
    }

    #[test]
    fn bordering_and_identity_rows() {
        let m = SparseMatrix::from_triplets(2, 2, &[(0, 0, 2.0), (0, 1, -1.0), (1, 0, -1.0), (1, 1, 2.0)]).unwrap();
        let b = m.bordered(&[1.0, 1.0], &[1.0, 1.0]);
        assert_eq!(b.nrows(), 3);
        assert_eq!(b.get(2, 1), 1.0);
        assert_eq!(b.get(2, 2), 0.0);
        let id = m.with_identity_rows(&[false, true]);
        assert_eq!(id.row(1), (&[1usize][..], &[1.0][..]));
        assert_eq!(id.get(0, 1), -1.0);
    }
}
