//! Sparse assembly helpers, a bandwidth-reducing Cholesky wrapper and the
//! inner products used for compression and error norms.

use std::collections::VecDeque;
use std::sync::Arc;

use nalgebra::DMatrix;
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix, CsrMatrix};

use crate::error::{ensure_len, Error, Result};

/// Accumulates (row, col, value) contributions; duplicates are summed.
#[derive(Debug, Clone)]
pub struct TripletBuilder {
    nrows: usize,
    ncols: usize,
    rows: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl TripletBuilder {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        TripletBuilder { nrows, ncols, rows: Vec::new(), cols: Vec::new(), vals: Vec::new() }
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        if v != 0.0 {
            self.rows.push(i);
            self.cols.push(j);
            self.vals.push(v);
        }
    }

    pub fn build(self) -> CsrMatrix<f64> {
        let coo = CooMatrix::try_from_triplets(self.nrows, self.ncols, self.rows, self.cols, self.vals)
            .expect("triplet indices within bounds");
        CsrMatrix::from(&coo)
    }
}

pub fn csr_matvec(a: &CsrMatrix<f64>, x: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.ncols(), x.len());
    let offsets = a.row_offsets();
    let cols = a.col_indices();
    let vals = a.values();
    (0..a.nrows())
        .map(|i| (offsets[i]..offsets[i + 1]).map(|k| vals[k] * x[cols[k]]).sum())
        .collect()
}

/// `Aᵀ x` for a CSR matrix.
pub fn csr_matvec_transpose(a: &CsrMatrix<f64>, x: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.nrows(), x.len());
    let mut y = vec![0.0; a.ncols()];
    let offsets = a.row_offsets();
    let cols = a.col_indices();
    let vals = a.values();
    for i in 0..a.nrows() {
        for k in offsets[i]..offsets[i + 1] {
            y[cols[k]] += vals[k] * x[i];
        }
    }
    y
}

/// `alpha * A + beta * B` for matrices of equal shape.
pub fn csr_add(alpha: f64, a: &CsrMatrix<f64>, beta: f64, b: &CsrMatrix<f64>) -> CsrMatrix<f64> {
    let mut t = TripletBuilder::new(a.nrows(), a.ncols());
    for (i, j, v) in a.triplet_iter() {
        t.add(i, j, alpha * v);
    }
    for (i, j, v) in b.triplet_iter() {
        t.add(i, j, beta * v);
    }
    t.build()
}

/// Reverse Cuthill–McKee ordering of the symmetric pattern of `a`.
/// Returns `perm` with `perm[new] = old`.
pub fn reverse_cuthill_mckee(a: &CsrMatrix<f64>) -> Vec<usize> {
    let n = a.nrows();
    let offsets = a.row_offsets();
    let cols = a.col_indices();
    let degree: Vec<usize> = (0..n).map(|i| offsets[i + 1] - offsets[i]).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&i| (degree[i], i));
    let mut queue = VecDeque::new();
    let mut neighbours = Vec::new();
    for &start in &by_degree {
        if visited[start] {
            continue;
        }
        visited[start] = true;
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            neighbours.clear();
            neighbours.extend(
                cols[offsets[v]..offsets[v + 1]].iter().copied().filter(|&w| !visited[w]),
            );
            neighbours.sort_by_key(|&w| (degree[w], w));
            for &w in &neighbours {
                if !visited[w] {
                    visited[w] = true;
                    queue.push_back(w);
                }
            }
        }
    }
    order.reverse();
    order
}

/// Sparse Cholesky factorisation of a symmetric positive definite matrix,
/// computed on a reverse Cuthill–McKee permutation to limit fill.
pub struct SparseCholesky {
    perm: Vec<usize>,
    factor: CscCholesky<f64>,
}

impl SparseCholesky {
    pub fn factor(a: &CsrMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::DimensionMismatch { expected: a.nrows(), found: a.ncols() });
        }
        let perm = reverse_cuthill_mckee(a);
        let mut inv = vec![0; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut coo = CooMatrix::new(a.nrows(), a.ncols());
        for (i, j, &v) in a.triplet_iter() {
            coo.push(inv[i], inv[j], v);
        }
        let csc = CscMatrix::from(&coo);
        let factor = CscCholesky::factor(&csc)
            .map_err(|e| Error::NotPositiveDefinite(format!("{e:?}")))?;
        Ok(SparseCholesky { perm, factor })
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    /// `Lᵀ P x`, so that `‖Lᵀ P x‖² = xᵀ A x`.
    pub fn apply_lt(&self, x: &[f64]) -> Vec<f64> {
        let l = self.factor.l();
        let n = self.perm.len();
        let offsets = l.col_offsets();
        let rows = l.row_indices();
        let vals = l.values();
        (0..n)
            .map(|j| (offsets[j]..offsets[j + 1]).map(|k| vals[k] * x[self.perm[rows[k]]]).sum())
            .collect()
    }

    /// `Pᵀ L⁻ᵀ y`, the inverse of [`SparseCholesky::apply_lt`].
    pub fn solve_lt(&self, y: &[f64]) -> Vec<f64> {
        let l = self.factor.l();
        let n = self.perm.len();
        let offsets = l.col_offsets();
        let rows = l.row_indices();
        let vals = l.values();
        let mut w = vec![0.0; n];
        for j in (0..n).rev() {
            let mut acc = y[j];
            let mut diag = 0.0;
            for k in offsets[j]..offsets[j + 1] {
                let i = rows[k];
                if i == j {
                    diag = vals[k];
                } else {
                    acc -= vals[k] * w[i];
                }
            }
            w[j] = acc / diag;
        }
        let mut x = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = w[new];
        }
        x
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.perm.len();
        let mut rhs = DMatrix::zeros(n, 1);
        for (new, &old) in self.perm.iter().enumerate() {
            rhs[new] = b[old];
        }
        self.factor.solve_mut(&mut rhs);
        let mut x = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = rhs[new];
        }
        x
    }
}

/// Inner product on a discrete field space.
#[derive(Debug, Clone)]
pub enum InnerProduct {
    /// Plain dot product of dof vectors.
    Euclidean,
    /// `xᵀ M y` with the finite-element mass matrix of the space.
    Mass(Arc<CsrMatrix<f64>>),
}

impl InnerProduct {
    pub fn id(&self) -> u8 {
        match self {
            InnerProduct::Euclidean => 0,
            InnerProduct::Mass(_) => 1,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            InnerProduct::Euclidean => "euclidean",
            InnerProduct::Mass(_) => "mass",
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        match self {
            InnerProduct::Euclidean => x.to_vec(),
            InnerProduct::Mass(m) => csr_matvec(m, x),
        }
    }

    pub fn apply_matrix(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            InnerProduct::Euclidean => x.clone(),
            InnerProduct::Mass(m) => m.as_ref() * x,
        }
    }

    pub fn dot(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        ensure_len(x.len(), y.len())?;
        if let InnerProduct::Mass(m) = self {
            ensure_len(m.nrows(), x.len())?;
        }
        let my = self.apply(y);
        Ok(x.iter().zip(&my).map(|(a, b)| a * b).sum())
    }

    pub fn norm_squared(&self, x: &[f64]) -> Result<f64> {
        self.dot(x, x)
    }

    /// `Aᵀ M B`.
    pub fn gram(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        a.transpose() * self.apply_matrix(b)
    }

    /// Factor `M = Pᵀ L Lᵀ P` that turns this inner product into the
    /// Euclidean one.
    pub fn factor(&self) -> Result<WeightFactor> {
        match self {
            InnerProduct::Euclidean => Ok(WeightFactor::Identity),
            InnerProduct::Mass(m) => Ok(WeightFactor::Cholesky(SparseCholesky::factor(m)?)),
        }
    }
}

/// See [`InnerProduct::factor`].
pub enum WeightFactor {
    Identity,
    Cholesky(SparseCholesky),
}

impl WeightFactor {
    /// Columns mapped by `Lᵀ P`.
    pub fn weigh(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.map_columns(x, |f, c| f.apply_lt(c))
    }

    /// Columns mapped by `Pᵀ L⁻ᵀ`.
    pub fn unweigh(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        self.map_columns(y, |f, c| f.solve_lt(c))
    }

    fn map_columns(&self, x: &DMatrix<f64>, op: impl Fn(&SparseCholesky, &[f64]) -> Vec<f64> + Sync) -> DMatrix<f64> {
        use rayon::prelude::*;
        match self {
            WeightFactor::Identity => x.clone(),
            WeightFactor::Cholesky(f) => {
                let cols: Vec<Vec<f64>> = (0..x.ncols())
                    .into_par_iter()
                    .map(|j| op(f, x.column(j).as_slice()))
                    .collect();
                let mut out = DMatrix::zeros(x.nrows(), x.ncols());
                for (j, c) in cols.iter().enumerate() {
                    out.column_mut(j).copy_from_slice(c);
                }
                out
            }
        }
    }
}
