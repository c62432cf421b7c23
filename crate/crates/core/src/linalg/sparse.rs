//! Compressed sparse symmetric matrices.
//!
//! Both triangles are stored explicitly in CSR form so that symmetry can be
//! audited entry by entry and matrix-vector products need no special casing.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Sparse symmetric matrix with an optional declared null space.
///
/// Used for every precision and structure matrix in the crate: RW2 and ICAR
/// structure matrices, SPDE precisions, the finite-element stiffness matrix
/// and the joint latent precision.
#[derive(Debug, Clone, PartialEq)]
pub struct SymSparse<T> {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<T>,
    null_basis: Vec<Vec<T>>,
}

impl<T: Real> SymSparse<T> {
    /// Builds a matrix from `(i, j, v)` triplets describing one triangle.
    ///
    /// Off-diagonal triplets are mirrored; duplicates are summed. Explicit
    /// zeros are kept so that the sparsity pattern is stable across updates.
    pub fn from_triplets<I>(n: usize, triplets: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, T)>,
    {
        let mut rows: Vec<BTreeMap<usize, T>> = vec![BTreeMap::new(); n];
        for (i, j, v) in triplets {
            if i >= n || j >= n {
                return Err(Error::invalid(format!(
                    "triplet ({i}, {j}) outside {n}x{n} matrix"
                )));
            }
            *rows[i].entry(j).or_insert_with(T::zero) += v;
            if i != j {
                *rows[j].entry(i).or_insert_with(T::zero) += v;
            }
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for row in rows {
            for (j, v) in row {
                col_idx.push(j);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Self {
            n,
            row_ptr,
            col_idx,
            values,
            null_basis: Vec::new(),
        })
    }

    /// Matrix with the given pattern (pairs in either triangle) and all values zero.
    pub fn zeros_with_pattern<I>(n: usize, pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (i, j) in pairs {
            if i >= n || j >= n {
                return Err(Error::invalid(format!("pair ({i}, {j}) outside dimension {n}")));
            }
            rows[i].push(j);
            if i != j {
                rows[j].push(i);
            }
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for mut r in rows {
            r.sort_unstable();
            r.dedup();
            col_idx.extend_from_slice(&r);
            row_ptr.push(col_idx.len());
        }
        let values = vec![T::zero(); col_idx.len()];
        Ok(Self {
            n,
            row_ptr,
            col_idx,
            values,
            null_basis: Vec::new(),
        })
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![T::one(); n])
    }

    pub fn diagonal(d: &[T]) -> Self {
        Self {
            n: d.len(),
            row_ptr: (0..=d.len()).collect(),
            col_idx: (0..d.len()).collect(),
            values: d.to_vec(),
            null_basis: Vec::new(),
        }
    }

    /// Attaches a basis of the null space; its length is the declared rank deficiency.
    pub fn with_null_basis(mut self, basis: Vec<Vec<T>>) -> Self {
        debug_assert!(basis.iter().all(|v| v.len() == self.n));
        self.null_basis = basis;
        self
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn rank_deficiency(&self) -> usize {
        self.null_basis.len()
    }

    pub fn null_basis(&self) -> &[Vec<T>] {
        &self.null_basis
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    /// Iterates `(column, value)` over row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    /// Position of entry `(i, j)` in the value array, if it is in the pattern.
    pub fn slot(&self, i: usize, j: usize) -> Option<usize> {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[span.clone()]
            .binary_search(&j)
            .ok()
            .map(|k| span.start + k)
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.slot(i, j).map_or(T::zero(), |s| self.values[s])
    }

    pub fn diag(&self) -> Vec<T> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.n, "dimension mismatch in mul_vec");
        (0..self.n)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    /// `xᵀ A x`.
    pub fn quad_form(&self, x: &[T]) -> T {
        self.mul_vec(x)
            .into_iter()
            .zip(x.iter())
            .map(|(ax, &xi)| ax * xi)
            .sum()
    }

    /// True when every stored `(i, j)` has a bitwise-identical `(j, i)`.
    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| {
            self.row(i).all(|(j, v)| match self.slot(j, i) {
                Some(s) => self.values[s].to_f64().map(f64::to_bits) == v.to_f64().map(f64::to_bits),
                None => false,
            })
        })
    }

    pub fn scaled(&self, c: T) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= c);
        out
    }

    /// `self + eps·I`; the diagonal is added to the pattern if missing.
    pub fn add_diagonal(&self, eps: T) -> Self {
        let triplets = (0..self.n)
            .flat_map(|i| self.row(i).filter(move |&(j, _)| j >= i).map(move |(j, v)| (i, j, v)))
            .chain((0..self.n).map(|i| (i, i, eps)));
        let out = Self::from_triplets(self.n, triplets).expect("indices in range");
        out.with_null_basis(Vec::new())
    }

    /// Block-diagonal concatenation.
    pub fn block_diag(blocks: &[&SymSparse<T>]) -> Self {
        let n: usize = blocks.iter().map(|b| b.n).sum();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        let mut offset = 0;
        for b in blocks {
            for i in 0..b.n {
                for (j, v) in b.row(i) {
                    col_idx.push(j + offset);
                    values.push(v);
                }
                row_ptr.push(col_idx.len());
            }
            offset += b.n;
        }
        Self {
            n,
            row_ptr,
            col_idx,
            values,
            null_basis: Vec::new(),
        }
    }

    /// Dense row-major copy; intended for tests and small problems.
    pub fn to_dense(&self) -> Vec<Vec<T>> {
        let mut out = vec![vec![T::zero(); self.n]; self.n];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] = v;
            }
        }
        out
    }

    pub fn map_values<U: Real>(&self, f: impl Fn(T) -> U) -> SymSparse<U> {
        SymSparse {
            n: self.n,
            row_ptr: self.row_ptr.clone(),
            col_idx: self.col_idx.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
            null_basis: self
                .null_basis
                .iter()
                .map(|b| b.iter().map(|&v| f(v)).collect())
                .collect(),
        }
    }

    pub fn same_pattern(&self, other: &SymSparse<T>) -> bool {
        self.n == other.n && self.row_ptr == other.row_ptr && self.col_idx == other.col_idx
    }
}

/// Sparse matrix stored by rows with a fixed number of columns.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseRows<T> {
    pub ncols: usize,
    pub rows: Vec<Vec<(usize, T)>>,
}

impl<T: Real> SparseRows<T> {
    pub fn new(ncols: usize) -> Self {
        Self {
            ncols,
            rows: Vec::new(),
        }
    }

    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        self.rows
            .iter()
            .map(|r| r.iter().map(|&(j, v)| v * x[j]).sum())
            .collect()
    }

    /// `Aᵀ v`.
    pub fn tr_mul_vec(&self, v: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.ncols];
        for (r, &vi) in self.rows.iter().zip(v) {
            for &(j, a) in r {
                out[j] += a * vi;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_are_mirrored_and_summed() {
        let m = SymSparse::<f64>::from_triplets(3, [(0, 1, 2.0), (1, 0, 1.0), (2, 2, 4.0)]).unwrap();
        assert_eq!(m.get(0, 1), 3.0);
        assert_eq!(m.get(1, 0), 3.0);
        assert_eq!(m.get(2, 2), 4.0);
        assert_eq!(m.get(0, 2), 0.0);
        assert!(m.is_symmetric());
        assert_eq!(m.nnz(), 3);
    }

    #[test]
    fn quad_form_and_mul_vec_agree() {
        let m = SymSparse::<f64>::from_triplets(2, [(0, 0, 2.0), (0, 1, -1.0), (1, 1, 3.0)]).unwrap();
        let x = [1.0, 2.0];
        assert_eq!(m.mul_vec(&x), vec![0.0, 5.0]);
        assert_eq!(m.quad_form(&x), 10.0);
    }

    #[test]
    fn block_diag_offsets_columns() {
        let a = SymSparse::<f32>::identity(2);
        let b = SymSparse::<f32>::from_triplets(2, [(0, 1, 5.0)]).unwrap();
        let c = SymSparse::block_diag(&[&a, &b]);
        assert_eq!(c.dim(), 4);
        assert_eq!(c.get(2, 3), 5.0);
        assert_eq!(c.get(1, 2), 0.0);
    }

    #[test]
    fn add_diagonal_extends_pattern() {
        let m = SymSparse::<f64>::from_triplets(2, [(0, 1, 1.0)]).unwrap();
        let j = m.add_diagonal(0.5);
        assert_eq!(j.get(0, 0), 0.5);
        assert_eq!(j.get(0, 1), 1.0);
    }

    #[test]
    fn out_of_range_triplet_is_rejected() {
        assert!(SymSparse::<f64>::from_triplets(2, [(0, 2, 1.0)]).is_err());
    }
}
