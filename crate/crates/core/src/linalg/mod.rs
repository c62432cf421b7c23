//! Sparse and dense linear algebra used by the structure matrices and the inference engine.

pub mod cholesky;
pub mod dense;
pub mod ordering;
pub mod sparse;

pub use cholesky::{Cholesky, SelectedInverse, Symbolic};
pub use dense::{symmetric_eigen, DenseCholesky, DenseMatrix};
pub use sparse::{SparseRows, SymSparse};
