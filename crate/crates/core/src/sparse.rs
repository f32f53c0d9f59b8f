//! Compressed sparse row storage and a thin wrapper over faer's sparse
//! Cholesky factorization (AMD ordering, supernodal when profitable).

use std::sync::Once;

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::Llt;
use faer::sparse::{SparseColMat, SymbolicSparseColMat};
use faer::{MatMut, Side};
use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FactorError {
    #[error("matrix is not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },
    #[error("factorization failed: {0}")]
    Backend(String),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        CsrMatrix {
            nrows,
            ncols,
            row_ptr: vec![0; nrows + 1],
            col_idx: vec![],
            values: vec![],
        }
    }

    /// Builds from unsorted triplets; duplicates are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, mut trips: Vec<(usize, usize, f64)>) -> Self {
        trips.sort_unstable_by_key(|&(i, j, _)| (i, j));
        let mut row_ptr = vec![0; nrows + 1];
        let mut col_idx = Vec::with_capacity(trips.len());
        let mut values: Vec<f64> = Vec::with_capacity(trips.len());
        let mut last = None;
        for (i, j, v) in trips {
            assert!(i < nrows && j < ncols, "triplet ({i}, {j}) out of bounds");
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(j);
                values.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Builds from rows that are already sorted by column without duplicates.
    pub fn from_sorted_rows(ncols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let nrows = rows.len();
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        row_ptr.push(0);
        let nnz = rows.iter().map(Vec::len).sum();
        let mut col_idx = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        for row in rows {
            for (j, v) in row {
                debug_assert!(j < ncols);
                col_idx.push(j);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Takes a pattern and zero values, to be filled with [`Self::add`].
    pub fn from_pattern(ncols: usize, pattern: Vec<Vec<usize>>) -> Self {
        let rows = pattern
            .into_iter()
            .map(|r| r.into_iter().map(|j| (j, 0.0)).collect())
            .collect();
        Self::from_sorted_rows(ncols, rows)
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

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()]
            .iter()
            .copied()
            .zip(self.values[r].iter().copied())
    }

    fn position(&self, i: usize, j: usize) -> Option<usize> {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()]
            .binary_search(&j)
            .ok()
            .map(|p| r.start + p)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.position(i, j).map_or(0.0, |p| self.values[p])
    }

    /// Adds into an existing pattern entry; panics if the entry is absent.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let p = self
            .position(i, j)
            .unwrap_or_else(|| panic!("({i}, {j}) not in pattern"));
        self.values[p] += v;
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = self.row(i).map(|(j, v)| v * x[j]).sum();
        }
    }

    pub fn transpose_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows);
        let mut y = vec![0.0; self.ncols];
        for (i, &xi) in x.iter().enumerate() {
            if xi != 0.0 {
                for (j, v) in self.row(i) {
                    y[j] += v * xi;
                }
            }
        }
        y
    }

    /// Rows `rows` and the columns with `col_map[j] = Some(new index)`.
    pub fn submatrix(&self, rows: &[usize], col_map: &[Option<usize>], ncols: usize) -> CsrMatrix {
        let out_rows = rows
            .iter()
            .map(|&i| {
                let mut r: Vec<(usize, f64)> = self
                    .row(i)
                    .filter_map(|(j, v)| col_map[j].map(|nj| (nj, v)))
                    .collect();
                r.sort_unstable_by_key(|e| e.0);
                r
            })
            .collect();
        CsrMatrix::from_sorted_rows(ncols, out_rows)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `max |A_ij - A_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols))
            .map(|i| self.get(i, i))
            .collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                m[(i, j)] += v;
            }
        }
        m
    }

    pub fn transpose(&self) -> CsrMatrix {
        let trips = (0..self.nrows)
            .flat_map(|i| self.row(i).map(move |(j, v)| (j, i, v)))
            .collect();
        CsrMatrix::from_triplets(self.ncols, self.nrows, trips)
    }
}

static FAER_SEQUENTIAL: Once = Once::new();

/// Sparse `L Lᵀ` factorization of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    llt: Option<Llt<usize, f64>>,
}

impl Cholesky {
    /// Factorizes a structurally symmetric CSR matrix.
    pub fn factor(mat: &CsrMatrix) -> Result<Self, FactorError> {
        assert_eq!(mat.nrows, mat.ncols);
        // Subdomain parallelism happens one level up.
        FAER_SEQUENTIAL.call_once(|| faer::set_global_parallelism(faer::Par::Seq));
        let n = mat.nrows;
        if n == 0 {
            return Ok(Cholesky { n, llt: None });
        }
        // A symmetric CSR matrix is its own CSC transpose.
        let symbolic = SymbolicSparseColMat::<usize>::new_checked(
            n,
            n,
            mat.row_ptr.clone(),
            None,
            mat.col_idx.clone(),
        );
        let csc = SparseColMat::new(symbolic, mat.values.clone());
        let llt = csc.sp_cholesky(Side::Lower).map_err(|e| match e {
            faer::sparse::linalg::LltError::Numeric(
                faer::linalg::cholesky::llt::factor::LltError::NonPositivePivot { index },
            ) => FactorError::NotPositiveDefinite { pivot: index },
            other => FactorError::Backend(format!("{other:?}")),
        })?;
        Ok(Cholesky { n, llt: Some(llt) })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.n);
        if let Some(llt) = &self.llt {
            llt.solve_in_place(MatMut::from_column_major_slice_mut(b, self.n, 1));
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    /// Solves for several right-hand sides stored column-major.
    pub fn solve_many_in_place(&self, b: &mut [f64], ncols: usize) {
        assert_eq!(b.len(), self.n * ncols);
        if let (Some(llt), true) = (&self.llt, ncols > 0) {
            llt.solve_in_place(MatMut::from_column_major_slice_mut(b, self.n, ncols));
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}
