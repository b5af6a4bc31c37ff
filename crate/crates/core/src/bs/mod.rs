//! Birman-Schwinger machinery: the operator `K = G0^{-1} G1 - I`, its range
//! with the `K`-inner product, the matrices of `A_mu`, the `kappa_m(mu)` sweep,
//! the edge subspaces and the estimates of the weak-coupling analysis.
//!
//! Everything in the range of `K` is a functional `E y` supported on the defect
//! nodes, so the operators reduce to dense matrices of the support size `d`:
//! `G0 = E* A0^{-1} E`, `G1 = E* A1^{-1} E` and `D = E* (S0 - S1) E`.

mod kernel;
mod lemmas;
mod subspace;
mod sweep;

pub use kernel::{BlochKernel, CachedKernel, DirectKernel, ShiftedKernel};
pub use lemmas::{
    check_lemma_estimates, check_subspace_estimates, g0_norm, t_threshold, LemmaOptions, LemmaReport, SubspaceReport,
    ThresholdReport,
};
pub use subspace::{build_l_subspaces, theta_profile, DefectSubspaces, FValues, FEvaluator, SigmaMode};
pub use sweep::{
    assemble_amu, kappa_spectrum, mu_grid, sweep_and_count, AmuMatrix, Crossing, KappaTrace, MuWindow, SweepOptions,
};

use faer::Mat;

use crate::discretize::{AssembledForms, DefectCoupling};
use crate::error::{Error, Result};
use crate::linalg::{dense, BandedLdl};
use crate::C64;

/// Retained `K`-eigenvalues exceed this fraction of the largest one.
pub const RANK_TOL: f64 = 1e-12;

/// The `H^-1` pairing `<F, G> = G* A0^{-1} F` on functional action vectors.
#[derive(Debug, Clone, Copy)]
pub struct HminusMetric<'a> {
    forms: &'a AssembledForms,
}

impl<'a> HminusMetric<'a> {
    pub fn new(forms: &'a AssembledForms) -> Self {
        Self { forms }
    }

    pub fn pairing(&self, f: &[C64], g: &[C64]) -> Result<C64> {
        self.forms.hminus_inner(f, g)
    }

    pub fn norm_sqr(&self, f: &[C64]) -> Result<f64> {
        Ok(self.pairing(f, f)?.re)
    }
}

/// Solves against the unperturbed strip that do not depend on the defect strength.
#[derive(Debug, Clone)]
pub struct SupportSolves {
    support: Vec<usize>,
    /// `A0^{-1} E`, one column per support node.
    z0: Mat<C64>,
    /// `E* A0^{-1} E`.
    g0: Mat<C64>,
}

impl SupportSolves {
    pub fn direct(strip0: &AssembledForms, support: &[usize]) -> Result<Self> {
        let n = strip0.dim();
        if support.iter().any(|&g| g >= n) {
            return Err(Error::InvalidInput("support node outside the strip".into()));
        }
        let e = Mat::from_fn(n, support.len(), |i, a| {
            if support[a] == i {
                C64::new(1.0, 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        });
        let z0 = strip0.phi_factor()?.solve_many(e.as_ref());
        let g0 = dense::hermitian_part(Mat::from_fn(support.len(), support.len(), |a, b| z0[(support[a], b)]).as_ref());
        Ok(Self {
            support: support.to_vec(),
            z0,
            g0,
        })
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn z0(&self) -> &Mat<C64> {
        &self.z0
    }

    pub fn g0(&self) -> &Mat<C64> {
        &self.g0
    }
}

/// `K` restricted to its range, in a basis orthonormal for the `H^-1` metric.
#[derive(Debug)]
pub struct KOperatorState {
    coupling: DefectCoupling,
    solves: SupportSolves,
    a1: BandedLdl,
    g1: Mat<C64>,
    /// Retained eigenvalues of `K`, ascending.
    nu: Vec<f64>,
    /// Columns `y_i` with `Q* G0 Q = I`; `E y_i` are the basis functionals.
    q: Mat<C64>,
    /// `D G1 Q`, the coordinates of `K q_i` on the support.
    kq: Mat<C64>,
    /// Discarded eigenvalues, for the positivity diagnostic.
    min_eigenvalue: f64,
    /// `||G1 - G0 - G0 D G1|| / ||G1||`.
    identity_defect: f64,
}

/// Build `K` from the unperturbed solves and the perturbed strip forms.
pub fn build_k(strip1: &AssembledForms, coupling: DefectCoupling, solves: SupportSolves) -> Result<KOperatorState> {
    build_k_with(strip1, coupling, solves, RANK_TOL)
}

/// [`build_k`] with an explicit relative rank tolerance.
pub fn build_k_with(
    strip1: &AssembledForms,
    coupling: DefectCoupling,
    solves: SupportSolves,
    rank_tol: f64,
) -> Result<KOperatorState> {
    if !(rank_tol > 0.0 && rank_tol < 1.0) {
        return Err(Error::InvalidInput(format!("rank tolerance {rank_tol} not in (0, 1)")));
    }
    if coupling.support != solves.support {
        return Err(Error::InvalidInput("defect coupling and support solves disagree".into()));
    }
    let a1 = BandedLdl::factor(strip1.phi(), strip1.ordering(), -1.0)?;
    if a1.negative_pivots() != 0 {
        return Err(Error::Internal("perturbed A is not positive definite".into()));
    }
    let d = coupling.len();
    if d == 0 {
        return Ok(KOperatorState {
            coupling,
            solves,
            a1,
            g1: Mat::zeros(0, 0),
            nu: Vec::new(),
            q: Mat::zeros(0, 0),
            kq: Mat::zeros(0, 0),
            min_eigenvalue: 0.0,
            identity_defect: 0.0,
        });
    }
    let n = strip1.dim();
    let support = &coupling.support;
    let e = Mat::from_fn(n, d, |i, a| if support[a] == i { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) });
    let z1 = a1.solve_many(e.as_ref());
    let g1 = dense::hermitian_part(Mat::from_fn(d, d, |a, b| z1[(support[a], b)]).as_ref());
    drop(z1);
    let g0 = &solves.g0;
    let dg1 = &coupling.d * &g1;
    let kform = g0 * &dg1;
    let diff = &g1 - g0;
    let identity_defect = max_abs(&(&diff - &kform)) / max_abs(&g1).max(f64::MIN_POSITIVE);
    let (w, v) = dense::pencil_eigen(kform.as_ref(), g0.as_ref())?;
    let top = w.last().copied().unwrap_or(0.0).max(0.0);
    let min_eigenvalue = w.first().copied().unwrap_or(0.0);
    if min_eigenvalue < -rank_tol * top.max(f64::MIN_POSITIVE) && top > 0.0 {
        return Err(Error::PositivityViolated {
            value: min_eigenvalue,
            tol: rank_tol * top,
        });
    }
    let keep: Vec<usize> = (0..w.len()).filter(|&i| top > 0.0 && w[i] > rank_tol * top).collect();
    let nu: Vec<f64> = keep.iter().map(|&i| w[i]).collect();
    let q = Mat::from_fn(d, keep.len(), |a, j| v[(a, keep[j])]);
    let kq = &dg1 * &q;
    Ok(KOperatorState {
        coupling,
        solves,
        a1,
        g1,
        nu,
        q,
        kq,
        min_eigenvalue,
        identity_defect,
    })
}

fn max_abs(m: &Mat<C64>) -> f64 {
    let mut x = 0.0f64;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            x = x.max(m[(i, j)].norm());
        }
    }
    x
}

impl KOperatorState {
    /// Dimension of the range of `K`.
    pub fn rank(&self) -> usize {
        self.nu.len()
    }

    pub fn support(&self) -> &[usize] {
        &self.coupling.support
    }

    pub fn coupling(&self) -> &DefectCoupling {
        &self.coupling
    }

    pub fn solves(&self) -> &SupportSolves {
        &self.solves
    }

    pub fn nu(&self) -> &[f64] {
        &self.nu
    }

    /// `||K||` in the `H^-1` metric.
    pub fn norm(&self) -> f64 {
        self.nu.last().copied().unwrap_or(0.0)
    }

    pub fn q(&self) -> &Mat<C64> {
        &self.q
    }

    pub fn kq(&self) -> &Mat<C64> {
        &self.kq
    }

    pub fn g0(&self) -> &Mat<C64> {
        &self.solves.g0
    }

    pub fn g1(&self) -> &Mat<C64> {
        &self.g1
    }

    pub fn a1_factor(&self) -> &BandedLdl {
        &self.a1
    }

    /// Smallest eigenvalue of `K` on the support space (roundoff-sized when `K >= 0`).
    pub fn min_eigenvalue(&self) -> f64 {
        self.min_eigenvalue
    }

    pub fn identity_defect(&self) -> f64 {
        self.identity_defect
    }

    /// `<F, G>_K = <K F, G>_{H^-1}` for coordinates in the basis `Q`.
    pub fn k_inner(&self, f: &[C64], g: &[C64]) -> C64 {
        self.nu.iter().zip(f).zip(g).map(|((nu, a), b)| b.conj() * a * *nu).sum()
    }

    /// Strip functional `E Q x`.
    pub fn functional(&self, x: &[C64], n: usize) -> Vec<C64> {
        let y = &self.q * dense::vec_to_col(x);
        self.coupling.extend(&dense::col_to_vec(y.as_ref(), 0), n)
    }

    /// Strip functional `K (E Q x) = E D G1 Q x`.
    pub fn k_functional(&self, x: &[C64], n: usize) -> Vec<C64> {
        let y = &self.kq * dense::vec_to_col(x);
        self.coupling.extend(&dense::col_to_vec(y.as_ref(), 0), n)
    }

    /// `K F = A0 A1^{-1} F - F` evaluated with the strip solvers.
    pub fn apply_k_strip(&self, strip0: &AssembledForms, f: &[C64]) -> Vec<C64> {
        let u = self.a1.solve(f);
        strip0.phi().matvec(&u).iter().zip(f).map(|(a, b)| a - b).collect()
    }

    /// Coordinates in `Q` of the `H^-1` projection of a strip functional.
    pub fn project(&self, f: &[C64]) -> Vec<C64> {
        let c = self.solves.z0.adjoint() * dense::vec_to_col(f);
        let c = self.q.adjoint() * c;
        dense::col_to_vec(c.as_ref(), 0)
    }
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use crate::discretize::{assemble_forms, build_mesh, defect_coupling};
    use crate::medium::{apply_line_defect, build_periodic_medium, CellGeometry, DefectGeometry, DefectRect, DielectricMap, Rect};

    pub struct Small {
        pub cell: DielectricMap,
        pub eps0: DielectricMap,
        pub eps1: DielectricMap,
        pub strip0: AssembledForms,
        pub strip1: AssembledForms,
    }

    /// Small contrast-6 rod crystal with an air-slot defect of strength `t`.
    pub fn small(n: usize, n_y: usize, t: f64) -> Small {
        let geo = CellGeometry {
            background: 1.0,
            inclusions: vec![Rect { x0: 0.25, x1: 0.75, y0: 0.25, y1: 0.75, eps: 6.0 }],
        };
        let cell = build_periodic_medium(&geo, n).unwrap();
        let defect = DefectGeometry {
            regions: vec![DefectRect { x0: 0.25, x1: 0.75, y0: 0.75, y1: 1.0, delta_eps: 1.0 }],
        };
        let eps0 = cell.tile(n_y).unwrap();
        let eps1 = apply_line_defect(&cell, &defect, t, n_y).unwrap();
        let mesh = build_mesh(n, n_y, 0.0, None).unwrap();
        let strip0 = assemble_forms(&mesh, &eps0).unwrap();
        let strip1 = assemble_forms(&mesh, &eps1).unwrap();
        Small { cell, eps0, eps1, strip0, strip1 }
    }

    /// Widest gap among the lower half of a sorted spectrum.
    pub fn gap_in(spectrum: &[f64]) -> (f64, f64) {
        let top = spectrum.len() / 2;
        let (i, _) = spectrum[..top]
            .windows(2)
            .enumerate()
            .max_by(|a, b| (a.1[1] - a.1[0]).total_cmp(&(b.1[1] - b.1[0])))
            .unwrap();
        (spectrum[i], spectrum[i + 1])
    }

    pub fn widest_gap(cell: &DielectricMap, n_y: usize) -> (f64, f64) {
        gap_in(&crate::floquet::FloquetContext::new(cell, 0.0, n_y).unwrap().fiber_spectrum())
    }

    pub fn k_state(s: &Small) -> KOperatorState {
        let c = defect_coupling(s.strip0.mesh(), &s.eps0, &s.eps1).unwrap();
        let solves = SupportSolves::direct(&s.strip0, &c.support).unwrap();
        build_k(&s.strip1, c, solves).unwrap()
    }
}
