//! Reference configurations with values frozen from an independent dense
//! eigensolver (scipy), used by tests and benchmarks.

use crate::medium::{build_periodic_medium, CellGeometry, DefectGeometry, DefectRect, DielectricMap, Rect};
use crate::error::Result;

/// Square rod of permittivity 12 filling the middle quarter of an air cell.
pub fn high_contrast_cell() -> CellGeometry {
    CellGeometry {
        background: 1.0,
        inclusions: vec![Rect { x0: 0.25, x1: 0.75, y0: 0.25, y1: 0.75, eps: 12.0 }],
    }
}

/// Thin slab in the air above the rod of the central cell, `delta_eps = 1` per unit `t`.
pub fn air_slab_defect() -> DefectGeometry {
    DefectGeometry {
        regions: vec![DefectRect { x0: 0.25, x1: 0.75, y0: 0.8125, y1: 0.9375, delta_eps: 1.0 }],
    }
}

pub fn high_contrast_map(n: usize) -> Result<DielectricMap> {
    build_periodic_medium(&high_contrast_cell(), n)
}

/// Gap of the high-contrast crystal on the `N = 16`, `N_y = 17` fiber grid at `k_x = 0`.
pub const GAP_16_17: (f64, f64) = (7.486750721436287, 13.549937702291775);

/// Gap of the high-contrast crystal on the `N = 32`, `N_y = 33` fiber grid at `k_x = 0`.
pub const GAP_32_33: (f64, f64) = (7.4142738521863, 13.383346902350063);

/// Band index (0-based) attaining the upper gap edge at `k = -pi`.
pub const EDGE_BAND_32_33: usize = 2;

/// Number of edge points at `N = 32`, `N_y = 33`.
pub const SIGMA_COUNT_32_33: usize = 1;

/// In-gap supercell eigenvalues of the air-slab defect at `N = 32`, `N_y = 33`, by `t`.
/// Eight significant digits.
pub const SUPERCELL_32_33: &[(f64, &[f64])] = &[
    (0.05, &[13.38261316]),
    (0.2, &[13.37716089]),
    (0.5, &[13.35524017]),
    (1.0, &[13.30228054]),
    (2.0, &[13.16326832]),
    (4.0, &[12.86117936, 13.36741321]),
];

/// Strengths for which exactly `SIGMA_COUNT_32_33` eigenvalues appear.
pub const SUB_THRESHOLD_T: &[f64] = &[0.05, 0.2, 0.5, 1.0, 2.0];

/// Absolute tolerance on the eight-digit eigenvalues above.
pub const SUPERCELL_DIGITS_TOL: f64 = 1e-7;
