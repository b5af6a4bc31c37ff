//! Band structure, gap detection and defect-eigenvalue counting for line
//! defects in two-dimensional photonic crystals (scalar TE reduction).
//!
//! The pipeline runs bottom-up through the modules:
//! [`medium`] builds element-wise permittivity maps, [`discretize`] assembles
//! the quasi-periodic finite-element forms, [`bloch`] computes band functions
//! and the spectral-gap report, [`floquet`] relates strip and fiber data,
//! [`bs`] counts in-gap eigenvalues through the Birman-Schwinger operator and
//! [`supercell`] counts them again by direct diagonalization.

pub mod bloch;
pub mod bs;
pub mod discretize;
pub mod error;
pub mod fixtures;
pub mod floquet;
pub mod linalg;
pub mod medium;
pub mod study;
pub mod supercell;

pub use num_complex::Complex64 as C64;

pub use bloch::{BandStructure, GapReport, Kgrid, SigmaPoint};
pub use bs::{DefectSubspaces, KOperatorState, KappaTrace};
pub use discretize::{AssembledForms, QuasiMesh};
pub use error::{Error, Result};
pub use floquet::FloquetContext;
pub use medium::{AssumptionReport, CellGeometry, DefectGeometry, DefectRect, DielectricMap, Rect};
pub use supercell::DefectSpectrum;
