//! Sparse Cholesky factorization `P A Pᵀ = L Lᵀ` with selected inversion.
//!
//! The symbolic analysis (ordering, elimination tree, pattern of `L`) depends
//! only on the sparsity pattern and is shared between factorizations of
//! matrices with the same pattern, which is the common case when a precision
//! matrix is re-evaluated at many hyperparameter values.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::ordering::{inverse_permutation, minimum_degree};
use crate::linalg::sparse::SymSparse;
use crate::scalar::Real;

const NONE: usize = usize::MAX;

/// Pattern-only analysis of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct Symbolic {
    n: usize,
    /// `perm[k]` = original index placed at position `k`.
    perm: Vec<usize>,
    iperm: Vec<usize>,
    parent: Vec<usize>,
    /// Upper triangle of `P A Pᵀ` in CSC form.
    c_colptr: Vec<usize>,
    c_rowidx: Vec<usize>,
    /// For each stored entry of `A` (CSR order), its slot in `C` or `NONE`.
    a_to_c: Vec<usize>,
    a_row_ptr: Vec<usize>,
    a_col_idx: Vec<usize>,
    /// Pattern of `L` in CSC form; the diagonal is the first entry of each column
    /// and row indices are ascending.
    l_colptr: Vec<usize>,
    l_rowidx: Vec<usize>,
}

struct Marker {
    stamp: Vec<usize>,
    current: usize,
}

impl Marker {
    fn new(n: usize) -> Self {
        Self {
            stamp: vec![0; n],
            current: 0,
        }
    }
    fn next(&mut self) {
        self.current += 1;
    }
    fn mark(&mut self, i: usize) {
        self.stamp[i] = self.current;
    }
    fn is_marked(&self, i: usize) -> bool {
        self.stamp[i] == self.current
    }
}

impl Symbolic {
    /// Analyses `a` with a minimum-degree ordering.
    pub fn analyze<T: Real>(a: &SymSparse<T>) -> Result<Self> {
        let adjacency: Vec<Vec<usize>> = (0..a.dim()).map(|i| a.row(i).map(|(j, _)| j).collect()).collect();
        Self::with_ordering(a, minimum_degree(&adjacency))
    }

    /// Analyses `a` keeping the natural order.
    pub fn analyze_natural<T: Real>(a: &SymSparse<T>) -> Result<Self> {
        Self::with_ordering(a, (0..a.dim()).collect())
    }

    pub fn with_ordering<T: Real>(a: &SymSparse<T>, perm: Vec<usize>) -> Result<Self> {
        let n = a.dim();
        if perm.len() != n {
            return Err(Error::invalid("ordering length differs from matrix dimension"));
        }
        for i in 0..n {
            if a.slot(i, i).is_none() {
                return Err(Error::invalid(format!(
                    "diagonal entry {i} missing from sparsity pattern"
                )));
            }
        }
        let iperm = inverse_permutation(&perm);

        // Upper triangle of C = P A Pᵀ, column-compressed.
        let mut counts = vec![0usize; n];
        for i in 0..n {
            for (j, _) in a.row(i) {
                let (pi, pj) = (iperm[i], iperm[j]);
                if pi <= pj {
                    counts[pj] += 1;
                }
            }
        }
        let mut c_colptr = vec![0; n + 1];
        for k in 0..n {
            c_colptr[k + 1] = c_colptr[k] + counts[k];
        }
        let mut next = c_colptr[..n].to_vec();
        let mut c_rowidx = vec![0; c_colptr[n]];
        let mut a_to_c = vec![NONE; a.nnz()];
        for i in 0..n {
            for s in a.row_ptr()[i]..a.row_ptr()[i + 1] {
                let j = a.col_idx()[s];
                let (pi, pj) = (iperm[i], iperm[j]);
                if pi <= pj {
                    let dst = next[pj];
                    next[pj] += 1;
                    c_rowidx[dst] = pi;
                    a_to_c[s] = dst;
                }
            }
        }

        // Elimination tree.
        let mut parent = vec![NONE; n];
        let mut ancestor = vec![NONE; n];
        for k in 0..n {
            for p in c_colptr[k]..c_colptr[k + 1] {
                let mut i = c_rowidx[p];
                while i != NONE && i < k {
                    let inext = ancestor[i];
                    ancestor[i] = k;
                    if inext == NONE {
                        parent[i] = k;
                    }
                    i = inext;
                }
            }
        }

        let mut sym = Self {
            n,
            perm,
            iperm,
            parent,
            c_colptr,
            c_rowidx,
            a_to_c,
            a_row_ptr: a.row_ptr().to_vec(),
            a_col_idx: a.col_idx().to_vec(),
            l_colptr: Vec::new(),
            l_rowidx: Vec::new(),
        };

        // Column counts and row indices of L, one row subtree at a time.
        let mut marker = Marker::new(n);
        let mut stack = vec![0; n];
        let mut work = vec![0; n];
        let mut col_counts = vec![1usize; n];
        for k in 0..n {
            let top = sym.ereach(k, &mut marker, &mut stack, &mut work);
            for &i in &stack[top..] {
                col_counts[i] += 1;
            }
        }
        let mut l_colptr = vec![0; n + 1];
        for k in 0..n {
            l_colptr[k + 1] = l_colptr[k] + col_counts[k];
        }
        let mut fill = l_colptr[..n].to_vec();
        let mut l_rowidx = vec![0; l_colptr[n]];
        for k in 0..n {
            let top = sym.ereach(k, &mut marker, &mut stack, &mut work);
            for &i in &stack[top..] {
                l_rowidx[fill[i]] = k;
                fill[i] += 1;
            }
            l_rowidx[fill[k]] = k;
            fill[k] += 1;
        }
        sym.l_colptr = l_colptr;
        sym.l_rowidx = l_rowidx;
        Ok(sym)
    }

    /// Nonzero pattern of row `k` of `L` (excluding the diagonal), returned in
    /// `stack[top..]` in topological order.
    fn ereach(&self, k: usize, marker: &mut Marker, stack: &mut [usize], work: &mut [usize]) -> usize {
        let n = self.n;
        let mut top = n;
        marker.next();
        marker.mark(k);
        for p in self.c_colptr[k]..self.c_colptr[k + 1] {
            let mut i = self.c_rowidx[p];
            if i > k {
                continue;
            }
            let mut len = 0;
            while !marker.is_marked(i) {
                work[len] = i;
                len += 1;
                marker.mark(i);
                i = self.parent[i];
            }
            while len > 0 {
                top -= 1;
                len -= 1;
                stack[top] = work[len];
            }
        }
        top
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    /// Number of stored entries of `L` including the diagonal.
    pub fn nnz_l(&self) -> usize {
        self.l_rowidx.len()
    }

    fn matches<T: Real>(&self, a: &SymSparse<T>) -> bool {
        a.dim() == self.n && a.row_ptr() == self.a_row_ptr.as_slice() && a.col_idx() == self.a_col_idx.as_slice()
    }

    /// Slot of `L(row, col)` (permuted indices, `row ≥ col`) if structurally nonzero.
    fn l_slot(&self, row: usize, col: usize) -> Option<usize> {
        let span = self.l_colptr[col]..self.l_colptr[col + 1];
        self.l_rowidx[span.clone()]
            .binary_search(&row)
            .ok()
            .map(|k| span.start + k)
    }
}

/// Numeric Cholesky factor sharing a [`Symbolic`] analysis.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    symbolic: Arc<Symbolic>,
    l_values: Vec<T>,
}

impl<T: Real> Cholesky<T> {
    /// Analyses and factors in one call.
    pub fn new(a: &SymSparse<T>) -> Result<Self> {
        let sym = Arc::new(Symbolic::analyze(a)?);
        Self::factor(&sym, a)
    }

    /// Factors `a`, whose pattern must equal the one `symbolic` was built from.
    pub fn factor(symbolic: &Arc<Symbolic>, a: &SymSparse<T>) -> Result<Self> {
        let sym = symbolic.as_ref();
        if !sym.matches(a) {
            return Err(Error::invalid("matrix pattern differs from symbolic analysis"));
        }
        let n = sym.n;
        let mut c_values = vec![T::zero(); sym.c_rowidx.len()];
        for (s, &dst) in sym.a_to_c.iter().enumerate() {
            if dst != NONE {
                c_values[dst] = a.values()[s];
            }
        }

        let mut l_values = vec![T::zero(); sym.l_rowidx.len()];
        let mut fill: Vec<usize> = sym.l_colptr[..n].to_vec();
        let mut x = vec![T::zero(); n];
        let mut marker = Marker::new(n);
        let mut stack = vec![0; n];
        let mut work = vec![0; n];

        for k in 0..n {
            let top = sym.ereach(k, &mut marker, &mut stack, &mut work);
            x[k] = T::zero();
            for p in sym.c_colptr[k]..sym.c_colptr[k + 1] {
                let i = sym.c_rowidx[p];
                if i <= k {
                    x[i] += c_values[p];
                }
            }
            let mut d = x[k];
            x[k] = T::zero();
            for &i in &stack[top..] {
                let lki = x[i] / l_values[sym.l_colptr[i]];
                x[i] = T::zero();
                for p in sym.l_colptr[i] + 1..fill[i] {
                    let r = sym.l_rowidx[p];
                    x[r] -= l_values[p] * lki;
                }
                d -= lki * lki;
                let p = fill[i];
                fill[i] += 1;
                debug_assert_eq!(sym.l_rowidx[p], k);
                l_values[p] = lki;
            }
            if !(d > T::zero()) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite { pivot: sym.perm[k] });
            }
            let p = fill[k];
            fill[k] += 1;
            l_values[p] = d.sqrt();
        }
        Ok(Self {
            symbolic: Arc::clone(symbolic),
            l_values,
        })
    }

    pub fn symbolic(&self) -> &Arc<Symbolic> {
        &self.symbolic
    }

    pub fn dim(&self) -> usize {
        self.symbolic.n
    }

    /// `log det A`.
    pub fn log_det(&self) -> T {
        let sym = &self.symbolic;
        let two = T::lit(2.0);
        (0..sym.n).map(|k| two * self.l_values[sym.l_colptr[k]].ln()).sum()
    }

    fn forward(&self, y: &mut [T]) {
        let sym = &self.symbolic;
        for j in 0..sym.n {
            let start = sym.l_colptr[j];
            y[j] /= self.l_values[start];
            let yj = y[j];
            for p in start + 1..sym.l_colptr[j + 1] {
                y[sym.l_rowidx[p]] -= self.l_values[p] * yj;
            }
        }
    }

    fn backward(&self, y: &mut [T]) {
        let sym = &self.symbolic;
        for j in (0..sym.n).rev() {
            let start = sym.l_colptr[j];
            let mut acc = y[j];
            for p in start + 1..sym.l_colptr[j + 1] {
                acc -= self.l_values[p] * y[sym.l_rowidx[p]];
            }
            y[j] = acc / self.l_values[start];
        }
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let sym = &self.symbolic;
        assert_eq!(b.len(), sym.n, "rhs length mismatch");
        let mut y: Vec<T> = sym.perm.iter().map(|&p| b[p]).collect();
        self.forward(&mut y);
        self.backward(&mut y);
        let mut x = vec![T::zero(); sym.n];
        for (k, &p) in sym.perm.iter().enumerate() {
            x[p] = y[k];
        }
        x
    }

    /// Maps standard-normal `z` to a draw from `N(0, A⁻¹)`.
    pub fn sample_from_standard(&self, z: &[T]) -> Vec<T> {
        let sym = &self.symbolic;
        assert_eq!(z.len(), sym.n, "noise length mismatch");
        let mut y = z.to_vec();
        self.backward(&mut y);
        let mut x = vec![T::zero(); sym.n];
        for (k, &p) in sym.perm.iter().enumerate() {
            x[p] = y[k];
        }
        x
    }

    /// Entries of `A⁻¹` on the pattern of `L` (Takahashi recursions).
    pub fn selected_inverse(&self) -> SelectedInverse<T> {
        let sym = &self.symbolic;
        let n = sym.n;
        let mut sigma = vec![T::zero(); self.l_values.len()];
        for i in (0..n).rev() {
            let start = sym.l_colptr[i];
            let end = sym.l_colptr[i + 1];
            let lii = self.l_values[start];
            // Off-diagonal entries of column i, rows j > i.
            for pj in (start + 1..end).rev() {
                let j = sym.l_rowidx[pj];
                let mut acc = T::zero();
                for pk in start + 1..end {
                    let k = sym.l_rowidx[pk];
                    let (r, c) = if k >= j { (k, j) } else { (j, k) };
                    let s = sym.l_slot(r, c).expect("selected-inverse pattern is closed");
                    acc += self.l_values[pk] * sigma[s];
                }
                sigma[pj] = -acc / lii;
            }
            let mut acc = T::zero();
            for pk in start + 1..end {
                acc += self.l_values[pk] * sigma[pk];
            }
            sigma[start] = (T::one() / lii - acc) / lii;
        }
        SelectedInverse {
            symbolic: Arc::clone(&self.symbolic),
            values: sigma,
        }
    }
}

/// Entries of `A⁻¹` restricted to the pattern of the Cholesky factor.
#[derive(Debug, Clone)]
pub struct SelectedInverse<T> {
    symbolic: Arc<Symbolic>,
    values: Vec<T>,
}

impl<T: Real> SelectedInverse<T> {
    /// `(A⁻¹)_{ij}` in original indexing, if `(i, j)` lies in the factor pattern.
    pub fn get(&self, i: usize, j: usize) -> Option<T> {
        let sym = &self.symbolic;
        let (pi, pj) = (sym.iperm[i], sym.iperm[j]);
        let (r, c) = if pi >= pj { (pi, pj) } else { (pj, pi) };
        sym.l_slot(r, c).map(|s| self.values[s])
    }

    /// Diagonal of `A⁻¹` in original indexing.
    pub fn diag(&self) -> Vec<T> {
        let sym = &self.symbolic;
        let mut out = vec![T::zero(); sym.n];
        for (k, &p) in sym.perm.iter().enumerate() {
            out[p] = self.values[sym.l_colptr[k]];
        }
        out
    }
}
