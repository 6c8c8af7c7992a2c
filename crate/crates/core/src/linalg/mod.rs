//! Sparse and banded linear algebra for structured-grid operators.
//!
//! Everything assembled in this crate is banded once interior nodes are
//! numbered lexicographically, so a banded LU with partial pivoting (plus a
//! banded Cholesky for the symmetric positive definite cases) covers all
//! direct solves, including the bordered saddle systems after block
//! elimination of the two constraint rows.

mod band;
mod csr;

pub use band::{BandCholesky, BandLu, BandMatrix};
pub use csr::Csr;
