//! Linear-algebra kernels: sparse storage, banded LDL* with inertia, dense
//! Hermitian eigensolvers.

pub mod banded;
pub mod csr;
pub mod dense;

pub use banded::{BandOrdering, BandedLdl, PIVOT_TOL};
pub use csr::Csr;
