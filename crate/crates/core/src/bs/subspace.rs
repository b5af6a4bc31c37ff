use faer::Mat;
use serde::{Deserialize, Serialize};

use super::{AmuMatrix, KOperatorState};
use crate::bloch::{BandStructure, SigmaPoint};
use crate::discretize::AssembledForms;
use crate::error::{Error, Result};
use crate::floquet::FloquetContext;
use crate::linalg::dense;
use crate::C64;

/// One edge mode `psi_s(k_p)` located among the fiber eigenpairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaMode {
    /// Band label in the sorted table.
    pub band: usize,
    pub p: usize,
    pub k: f64,
    /// Column of the fiber eigendecomposition at `p`.
    pub index: usize,
    pub lambda: f64,
}

impl SigmaMode {
    /// The mode of edge point `pt` continued `step` grid points along its band.
    pub fn resolve(bands: &BandStructure, ctx: &FloquetContext, pt: &SigmaPoint, step: isize) -> Result<Self> {
        if bands.n_k() != ctx.n_y() {
            return Err(Error::InvalidInput(format!(
                "band grid N_k = {} differs from the strip grid N_y = {}",
                bands.n_k(),
                ctx.n_y()
            )));
        }
        let (band, p) = bands.neighbour(pt.band, pt.p, step);
        let target = bands.value(band, p);
        let lambdas = &ctx.eigen(p).lambdas;
        let index = (0..lambdas.len())
            .min_by(|&a, &b| (lambdas[a] - target).abs().total_cmp(&(lambdas[b] - target).abs()))
            .ok_or_else(|| Error::Internal("empty fiber".into()))?;
        if (lambdas[index] - target).abs() > 1e-9 * (1.0 + target.abs()) {
            return Err(Error::Internal(format!("band value {target} not found in fiber {p}")));
        }
        Ok(Self {
            band,
            p,
            k: ctx.kgrid().get(p),
            index,
            lambda: lambdas[index],
        })
    }
}

/// Nodal cutoff: 1 on cell `c0`, linear to 0 across each neighbouring cell.
pub fn theta_profile(n: usize, n_y: usize, c0: usize) -> Vec<f64> {
    (0..n * n_y)
        .map(|row| {
            let y = row as f64 / n as f64 - c0 as f64;
            if (0.0..=1.0).contains(&y) {
                1.0
            } else if y < 0.0 {
                (1.0 + y).max(0.0)
            } else {
                (2.0 - y).max(0.0)
            }
        })
        .collect()
}

/// `L_perp = span{P phi(theta psi_j)}` and its `K`-orthocomplement `L` inside the range of `K`.
#[derive(Debug, Clone)]
pub struct DefectSubspaces {
    pub modes: Vec<SigmaMode>,
    /// Columns `b_j`: `Q`-coordinates of `P phi(theta psi_j)`.
    pub b: Mat<C64>,
    /// `B* diag(nu) B`.
    pub gram_tilde: Mat<C64>,
    /// `gram_tilde^2`.
    pub gram: Mat<C64>,
    pub gram_eigenvalues: Vec<f64>,
    /// Support values of `psi_j` extended quasi-periodically from cell `c0`.
    pub psi_support: Vec<Vec<C64>>,
    /// Orthonormal basis of `L_perp` in the scaled coordinates `z = nu^{1/2} x`.
    pub perp: Mat<C64>,
    /// Orthonormal basis of `L` in the same coordinates.
    pub inner: Mat<C64>,
}

/// Build the edge subspaces; fails if the cut-off edge modes project dependently.
pub fn build_l_subspaces(
    state: &KOperatorState,
    strip0: &AssembledForms,
    ctx: &FloquetContext,
    modes: &[SigmaMode],
    c0: usize,
) -> Result<DefectSubspaces> {
    let r = state.rank();
    let n = modes.len();
    if n == 0 {
        return Err(Error::InvalidInput("no edge modes".into()));
    }
    if r < n {
        return Err(Error::LinearDependence { rank: r, n });
    }
    let theta = theta_profile(ctx.n(), ctx.n_y(), c0);
    let per_row = ctx.n();
    let mut b = Mat::<C64>::zeros(r, n);
    let mut psi_support = Vec::with_capacity(n);
    for (j, m) in modes.iter().enumerate() {
        let psi = ctx.extend(m.k, &ctx.eigen(m.p).psi_col(m.index), c0)?;
        psi_support.push(state.coupling().restrict(&psi));
        let cut: Vec<C64> = psi.iter().enumerate().map(|(g, v)| v * theta[g / per_row]).collect();
        let f = strip0.phi().matvec(&cut);
        for (i, v) in state.project(&f).into_iter().enumerate() {
            b[(i, j)] = v;
        }
    }
    let nu = state.nu();
    let bz = Mat::from_fn(r, n, |i, j| b[(i, j)] * nu[i].sqrt());
    let gram_tilde = dense::hermitian_part((bz.adjoint() * &bz).as_ref());
    let gram = &gram_tilde * &gram_tilde;
    let gram_eigenvalues = dense::hermitian_eigenvalues(gram_tilde.as_ref())?;
    let top = gram_eigenvalues.last().copied().unwrap_or(0.0);
    let rank = gram_eigenvalues.iter().filter(|&&g| g > 1e-12 * top && top > 0.0).count();
    if rank < n {
        return Err(Error::LinearDependence { rank, n });
    }
    // the n dominant eigenvectors of Bz Bz* span L_perp
    let (_, v) = dense::hermitian_eigen((&bz * bz.adjoint()).as_ref())?;
    let perp = v.subcols(r - n, n).to_owned();
    let inner = v.subcols(0, r - n).to_owned();
    Ok(DefectSubspaces {
        modes: modes.to_vec(),
        b,
        gram_tilde,
        gram,
        gram_eigenvalues,
        psi_support,
        perp,
        inner,
    })
}

impl DefectSubspaces {
    pub fn n(&self) -> usize {
        self.modes.len()
    }

    /// `<u, b_j>_K`; all vanish exactly on `L`.
    pub fn constraints(&self, state: &KOperatorState, x: &[C64]) -> Vec<C64> {
        let nu = state.nu();
        (0..self.n())
            .map(|j| (0..x.len()).map(|i| self.b[(i, j)].conj() * x[i] * nu[i]).sum())
            .collect()
    }

    /// `Ku[psi_j]` from the defect coupling: `psi_S* D G1 Q x`.
    pub fn ku_pairings(&self, state: &KOperatorState, x: &[C64]) -> Vec<C64> {
        let kx = state.kq() * dense::vec_to_col(x);
        let kx = dense::col_to_vec(kx.as_ref(), 0);
        self.psi_support.iter().map(|p| dense::dot(p, &kx)).collect()
    }

    /// `x = nu^{-1/2} basis c`.
    fn lift(&self, state: &KOperatorState, basis: &Mat<C64>, c: &[C64]) -> Vec<C64> {
        let z = basis * dense::vec_to_col(c);
        state.nu().iter().enumerate().map(|(i, nu)| z[(i, 0)] / nu.sqrt()).collect()
    }

    /// Element of `L` with coefficients `c` in its orthonormal basis.
    pub fn in_l(&self, state: &KOperatorState, c: &[C64]) -> Vec<C64> {
        self.lift(state, &self.inner, c)
    }

    /// Element of `L_perp` with coefficients `c`.
    pub fn in_perp(&self, state: &KOperatorState, c: &[C64]) -> Vec<C64> {
        self.lift(state, &self.perp, c)
    }

    pub fn dim_l(&self) -> usize {
        self.inner.ncols()
    }

    /// `min over L` of the `K`-Rayleigh quotient of `A_mu` (`+inf` if `L` is trivial).
    pub fn min_on_l(&self, amu: &AmuMatrix) -> Result<f64> {
        if self.inner.ncols() == 0 {
            return Ok(f64::INFINITY);
        }
        let h = self.inner.adjoint() * (&amu.h * &self.inner);
        Ok(dense::hermitian_eigenvalues(h.as_ref())?[0])
    }

    /// `max over L_perp` of the `K`-Rayleigh quotient of `A_mu`.
    pub fn max_on_perp(&self, amu: &AmuMatrix) -> Result<f64> {
        let h = self.perp.adjoint() * (&amu.h * &self.perp);
        Ok(*dense::hermitian_eigenvalues(h.as_ref())?.last().unwrap())
    }
}

/// Independent representations of one value `f(k~, u)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FValues {
    /// `|<F_p, phi_s>_{H^-1(cell)}|^2` with a fiber solve.
    pub def: f64,
    /// `|phi_s* F_p|^2 / (lambda + 1)^2`.
    pub v1: f64,
    /// `|<A_p^{-1} F_p, psi_s>_{H^1}|^2 / (lambda + 1)`.
    pub v2: f64,
    /// `|Ku[phi~]|^2 / (N_y (lambda + 1)^2)` with strip solves for `K`.
    pub v4: f64,
    /// The same pairing through the defect coupling `D G1`.
    pub ian: f64,
    /// `||Ku||^2_{H^-1}`, the scale for absolute comparisons.
    pub scale: f64,
}

impl FValues {
    pub fn value(&self) -> f64 {
        self.v1
    }

    /// Largest pairwise disagreement relative to `max(value, floor * scale)`.
    pub fn spread(&self, floor: f64) -> f64 {
        let v = [self.def, self.v1, self.v2, self.v4, self.ian];
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        (hi - lo) / hi.abs().max(floor * self.scale).max(f64::MIN_POSITIVE)
    }
}

/// Evaluates `f(k~, u) = sum_j |<(V^ Ku)_{k_j + k~}, phi_{s_j}(k_j + k~)>_{H^-1}|^2`.
pub struct FEvaluator<'a> {
    pub state: &'a KOperatorState,
    pub strip0: &'a AssembledForms,
    pub ctx: &'a FloquetContext,
    pub bands: &'a BandStructure,
    pub sigma: &'a [SigmaPoint],
}

impl FEvaluator<'_> {
    /// Relative disagreement above which the representations count as inconsistent.
    pub const MISMATCH: f64 = 1e-8;

    /// `f` at `k~ = step * dk` for `u` with `Q`-coordinates `x`.
    pub fn eval(&self, x: &[C64], step: isize) -> Result<FValues> {
        let ctx = self.ctx;
        let n = ctx.strip_dim();
        let ku = self.state.k_functional(x, n);
        let ku_strip = self.state.apply_k_strip(self.strip0, &self.state.functional(x, n));
        let kx = dense::col_to_vec((self.state.kq() * dense::vec_to_col(x)).as_ref(), 0);
        let scale = self.state.nu().iter().zip(x).map(|(nu, v)| nu * nu * v.norm_sqr()).sum::<f64>();
        let ny = ctx.n_y() as f64;
        let mut out = FValues { def: 0.0, v1: 0.0, v2: 0.0, v4: 0.0, ian: 0.0, scale };
        for pt in self.sigma {
            let m = SigmaMode::resolve(self.bands, ctx, pt, step)?;
            let l1 = m.lambda + 1.0;
            let e = ctx.eigen(m.p);
            let phi = e.phi(m.index);
            let psi = e.psi_col(m.index);
            let fp = ctx.forward_block(&ku, m.p)?;
            let fiber = ctx.fiber(m.p);
            let u = fiber.solve_phi_inverse(&fp)?;
            out.def += dense::dot(&phi, &fiber.mass().matvec(&u)).norm_sqr();
            out.v1 += dense::dot(&phi, &fp).norm_sqr() / (l1 * l1);
            out.v2 += dense::dot(&psi, &fiber.phi().matvec(&u)).norm_sqr() / l1;
            let phi_strip = ctx.extend(m.k, &phi, 0)?;
            out.v4 += dense::dot(&phi_strip, &ku_strip).norm_sqr() / (ny * l1 * l1);
            let phi_s = self.state.coupling().restrict(&phi_strip);
            out.ian += dense::dot(&phi_s, &kx).norm_sqr() / (ny * l1 * l1);
        }
        if out.spread(1e-12) > Self::MISMATCH {
            return Err(Error::Internal(format!("f representations disagree: {out:?}")));
        }
        Ok(out)
    }

    /// Matrix `F` with `f(0, x) = x* F x`, from the support pairings.
    pub fn form_at_zero(&self) -> Result<Mat<C64>> {
        let ctx = self.ctx;
        let r = self.state.rank();
        let mut f = Mat::<C64>::zeros(r, r);
        for pt in self.sigma {
            let m = SigmaMode::resolve(self.bands, ctx, pt, 0)?;
            let phi = ctx.extend(m.k, &ctx.eigen(m.p).phi(m.index), 0)?;
            let rho = self.state.coupling().restrict(&phi);
            // row vector rho* D G1 Q scaled by 1 / (sqrt(N_y) (lambda + 1))
            let w = 1.0 / ((ctx.n_y() as f64).sqrt() * (m.lambda + 1.0));
            let row = dense::vec_to_col(&rho).adjoint() * self.state.kq();
            let v = Mat::from_fn(1, r, |_, i| row[(0, i)] * w);
            f += v.adjoint() * &v;
        }
        Ok(dense::hermitian_part(f.as_ref()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn theta_is_one_on_the_cell_and_tapers() {
        let t = theta_profile(4, 5, 2);
        // rows 8..=12 lie on the central cell
        assert!(t[8..=12].iter().all(|&v| v == 1.0));
        assert_eq!(t[6], 0.5);
        assert_eq!(t[14], 0.5);
        assert_eq!(t[4], 0.0);
        assert_eq!(t[16], 0.0);
        assert_eq!(t[0], 0.0);
    }
}
