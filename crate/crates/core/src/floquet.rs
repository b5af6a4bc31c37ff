//! Discrete partial Floquet transform between the strip torus and its fibers.
//!
//! The strip holds `n_y` cells and the fibers sit at `k_p = -pi + 2 pi p / n_y`,
//! so the transform is a unitary DFT over the cell index and every fiber
//! expansion below is exact matrix algebra.

use faer::Mat;
use rayon::prelude::*;

use crate::bloch::{solve_fiber, FiberEigen, Kgrid};
use crate::discretize::{assemble_forms, build_mesh, AssembledForms};
use crate::error::{Error, Result};
use crate::linalg::{dense, BandedLdl};
use crate::medium::DielectricMap;
use crate::C64;

/// Strip forms, fiber forms and complete fiber eigendecompositions.
#[derive(Debug)]
pub struct FloquetContext {
    n: usize,
    n_y: usize,
    k_x: f64,
    kgrid: Kgrid,
    strip: AssembledForms,
    fibers: Vec<AssembledForms>,
    eigen: Vec<FiberEigen>,
}

impl FloquetContext {
    /// Build the strip of `n_y` cells over `cell` and diagonalize every fiber.
    pub fn new(cell: &DielectricMap, k_x: f64, n_y: usize) -> Result<Self> {
        let kgrid = Kgrid::uniform(n_y)?;
        let eigen = kgrid
            .points()
            .par_iter()
            .map(|&k| solve_fiber(cell, k_x, k, None))
            .collect::<Result<Vec<_>>>()?;
        Self::from_eigen(cell, k_x, n_y, eigen)
    }

    /// Reuse complete fiber eigendecompositions computed on the `n_y`-point grid.
    pub fn from_eigen(cell: &DielectricMap, k_x: f64, n_y: usize, eigen: Vec<FiberEigen>) -> Result<Self> {
        if cell.strip_extent() != 1 {
            return Err(Error::InvalidInput("Floquet context needs a unit-cell map".into()));
        }
        let kgrid = Kgrid::uniform(n_y)?;
        let n = cell.resolution();
        if eigen.len() != n_y {
            return Err(Error::InvalidInput(format!("{} fibers for N_y = {n_y}", eigen.len())));
        }
        for (e, &k) in eigen.iter().zip(kgrid.points()) {
            if e.count() != n * n || (e.k - k).abs() > 1e-12 {
                return Err(Error::InvalidInput(format!("incomplete or misplaced fiber at k = {}", e.k)));
            }
        }
        let strip = assemble_forms(&build_mesh(n, n_y, k_x, None)?, &cell.tile(n_y)?)?;
        let fibers = kgrid
            .points()
            .iter()
            .map(|&k| assemble_forms(&build_mesh(n, 1, k_x, Some(k))?, cell))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            n,
            n_y,
            k_x,
            kgrid,
            strip,
            fibers,
            eigen,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_y(&self) -> usize {
        self.n_y
    }

    pub fn k_x(&self) -> f64 {
        self.k_x
    }

    pub fn kgrid(&self) -> &Kgrid {
        &self.kgrid
    }

    pub fn strip(&self) -> &AssembledForms {
        &self.strip
    }

    pub fn fiber(&self, p: usize) -> &AssembledForms {
        &self.fibers[p]
    }

    pub fn eigen(&self, p: usize) -> &FiberEigen {
        &self.eigen[p]
    }

    pub fn eigens(&self) -> &[FiberEigen] {
        &self.eigen
    }

    /// Unknowns per cell.
    pub fn cell_dim(&self) -> usize {
        self.n * self.n
    }

    /// Unknowns on the strip.
    pub fn strip_dim(&self) -> usize {
        self.cell_dim() * self.n_y
    }

    /// Cell index and local node of a strip node.
    pub fn split(&self, g: usize) -> (usize, usize) {
        (g / self.cell_dim(), g % self.cell_dim())
    }

    fn check_strip(&self, u: &[C64]) -> Result<()> {
        if u.len() != self.strip_dim() {
            return Err(Error::InvalidInput(format!(
                "strip vector of length {} (expected {})",
                u.len(),
                self.strip_dim()
            )));
        }
        Ok(())
    }

    fn check_blocks(&self, blocks: &[Vec<C64>]) -> Result<()> {
        if blocks.len() != self.n_y || blocks.iter().any(|b| b.len() != self.cell_dim()) {
            return Err(Error::InvalidInput(format!(
                "expected {} fiber blocks of length {}",
                self.n_y,
                self.cell_dim()
            )));
        }
        Ok(())
    }

    /// Unitary DFT over the cell index. Coefficient vectors and functional
    /// action vectors transform alike since the strip matrices become block diagonal.
    pub fn forward(&self, u: &[C64]) -> Result<Vec<Vec<C64>>> {
        self.check_strip(u)?;
        (0..self.n_y).map(|p| self.forward_block(u, p)).collect()
    }

    /// Block `p` of [`forward`](Self::forward) alone.
    pub fn forward_block(&self, u: &[C64], p: usize) -> Result<Vec<C64>> {
        self.check_strip(u)?;
        let (len, scale) = (self.cell_dim(), 1.0 / (self.n_y as f64).sqrt());
        let k = self.kgrid.get(p);
        let mut block = vec![C64::new(0.0, 0.0); len];
        for c in 0..self.n_y {
            let ph = C64::from_polar(scale, -k * c as f64);
            for (b, &x) in block.iter_mut().zip(&u[c * len..(c + 1) * len]) {
                *b += ph * x;
            }
        }
        Ok(block)
    }

    /// Inverse of [`forward`](Self::forward).
    pub fn inverse(&self, blocks: &[Vec<C64>]) -> Result<Vec<C64>> {
        self.check_blocks(blocks)?;
        let (len, scale) = (self.cell_dim(), 1.0 / (self.n_y as f64).sqrt());
        let mut u = vec![C64::new(0.0, 0.0); self.strip_dim()];
        for (block, &k) in blocks.iter().zip(self.kgrid.points()) {
            for c in 0..self.n_y {
                let ph = C64::from_polar(scale, k * c as f64);
                for (x, &b) in u[c * len..(c + 1) * len].iter_mut().zip(block) {
                    *x += ph * b;
                }
            }
        }
        Ok(u)
    }

    /// `k`-quasiperiodic extension `u(loc, c) = e^{ik(c - c0)} v(loc)` of a cell vector.
    pub fn extend(&self, k: f64, v: &[C64], c0: usize) -> Result<Vec<C64>> {
        if v.len() != self.cell_dim() {
            return Err(Error::InvalidInput("cell vector has wrong length".into()));
        }
        Ok((0..self.n_y)
            .flat_map(|c| {
                let ph = C64::from_polar(1.0, k * (c as f64 - c0 as f64));
                v.iter().map(move |&x| ph * x)
            })
            .collect())
    }

    /// Fiber coefficients `c_s = psi_s(k_p)* G_p` of a transformed functional.
    pub fn coefficients(&self, p: usize, block: &[C64]) -> Vec<C64> {
        let psi = &self.eigen[p].psi;
        let col = dense::vec_to_col(block);
        let c = psi.adjoint() * &col;
        (0..c.nrows()).map(|s| c[(s, 0)]).collect()
    }

    /// `C_p[s, a] = psi_s(k_p)* (W e_a)_p` for strip nodes `a`, i.e. fiber
    /// coefficients of the unit functionals at `support`.
    pub fn support_coefficients(&self, p: usize, support: &[usize]) -> Mat<C64> {
        let psi = &self.eigen[p].psi;
        let k = self.kgrid.get(p);
        let scale = 1.0 / (self.n_y as f64).sqrt();
        Mat::from_fn(psi.ncols(), support.len(), |s, a| {
            let (c, loc) = self.split(support[a]);
            psi[(loc, s)].conj() * C64::from_polar(scale, -k * c as f64)
        })
    }

    fn expand(&self, g: &[C64], weight: impl Fn(f64) -> Result<f64> + Sync) -> Result<Vec<C64>> {
        let blocks = self.forward(g)?;
        let out = blocks
            .par_iter()
            .enumerate()
            .map(|(p, block)| {
                let e = &self.eigen[p];
                let c = self.coefficients(p, block);
                let mut y = vec![C64::new(0.0, 0.0); block.len()];
                for (s, cs) in c.iter().enumerate() {
                    let w = weight(e.lambdas[s])? * cs;
                    for (yi, i) in y.iter_mut().zip(0..) {
                        *yi += e.psi[(i, s)] * w;
                    }
                }
                Ok(y)
            })
            .collect::<Result<Vec<_>>>()?;
        self.inverse(&out)
    }

    fn weighted_sum(&self, g: &[C64], weight: impl Fn(f64) -> Result<f64> + Sync) -> Result<f64> {
        let blocks = self.forward(g)?;
        let parts = blocks
            .par_iter()
            .enumerate()
            .map(|(p, block)| {
                let e = &self.eigen[p];
                self.coefficients(p, block)
                    .iter()
                    .zip(&e.lambdas)
                    .map(|(c, &l)| Ok(c.norm_sqr() * weight(l)?))
                    .sum::<Result<f64>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(parts.iter().sum())
    }

    /// `(L0 - lambda)^{-1} g` through the fiber expansions.
    pub fn resolvent_via_bloch(&self, g: &[C64], lambda: f64) -> Result<Vec<C64>> {
        self.expand(g, |l| {
            let d = l - lambda;
            if d.abs() <= 1e-10 * (1.0 + l.abs()) {
                return Err(Error::NearSingular {
                    shift: lambda,
                    pivot: d,
                    row: 0,
                    threshold: 1e-10 * (1.0 + l.abs()),
                });
            }
            Ok(1.0 / d)
        })
    }

    /// `||f||^2_{H^-1}` as `sum |c_s|^2 / (lambda_s + 1)`.
    pub fn hminus_norm_via_bloch(&self, f: &[C64]) -> Result<f64> {
        self.weighted_sum(f, |l| Ok(1.0 / (l + 1.0)))
    }

    /// `sum |c_s|^2 / ((lambda_s + 1)(1 - mu (lambda_s + 1)))`, the fiber form of
    /// `<-(1/mu)(L0 + 1 - 1/mu)^{-1} w, w>_{H^-1}`.
    pub fn rayleigh_via_bloch(&self, w: &[C64], mu: f64) -> Result<f64> {
        self.weighted_sum(w, |l| rayleigh_weight(l, mu))
    }

    /// Strip-side `||f||^2_{H^-1} = F* A^{-1} F`.
    pub fn hminus_norm_direct(&self, f: &[C64]) -> Result<f64> {
        Ok(self.strip.hminus_inner(f, f)?.re)
    }

    /// Strip-side `w* A^{-1} M (M - mu A)^{-1} w`.
    pub fn rayleigh_direct(&self, w: &[C64], mu: f64) -> Result<f64> {
        let x = self.strip.solve_shifted(mu, w)?;
        let mx = self.strip.mass().matvec(&x);
        Ok(self.strip.hminus_inner(&mx, w)?.re)
    }

    /// `sum_p (Wu)_p* A_p (Wv)_p`, the fiber side of the H^1 isometry.
    pub fn h1_inner_via_fibers(&self, u: &[C64], v: &[C64]) -> Result<C64> {
        let (bu, bv) = (self.forward(u)?, self.forward(v)?);
        Ok((0..self.n_y).map(|p| self.fibers[p].phi().form(&bv[p], &bu[p])).sum())
    }

    /// All `lambda_s(k_p)` sorted ascending.
    pub fn fiber_spectrum(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.eigen.iter().flat_map(|e| e.lambdas.iter().copied()).collect();
        v.sort_by(f64::total_cmp);
        v
    }

    /// Strip pencil eigenvalues below `lambda`, by Sylvester inertia.
    pub fn strip_count_below(&self, lambda: f64) -> Result<usize> {
        Ok(self.strip.resolvent_factor(lambda)?.negative_pivots())
    }

    /// Fiber eigenvalues below `lambda`.
    pub fn fiber_count_below(&self, lambda: f64) -> usize {
        self.eigen.iter().map(|e| e.lambdas.iter().filter(|&&l| l < lambda).count()).sum()
    }

    /// Compare strip and fiber spectra.
    ///
    /// `shifts` are compared by inertia counts. Each fiber eigenvalue `(s, p)` in
    /// `modes` is bracketed by `lambda (1 +- rel)` (on the `lambda + 1` scale) and
    /// the strip count inside the bracket must equal the fiber multiplicity there;
    /// its quasi-periodic extension must also be a strip eigenvector.
    pub fn spectral_coincidence(&self, shifts: &[f64], modes: &[(usize, usize)], rel: f64) -> Result<CoincidenceReport> {
        let mut report = CoincidenceReport::default();
        for &x in shifts {
            let strip = self.robust_count(x, rel)?;
            let fiber = self.fiber_count_below(x);
            report.count_mismatches += usize::from(strip != fiber);
            report.counts_checked += 1;
        }
        let c0 = (self.n_y - 1) / 2;
        for &(s, p) in modes {
            let e = &self.eigen[p];
            let l = e.lambdas[s];
            let h = rel * (l + 1.0);
            let (lo, hi) = (l - h, l + h);
            let strip = self.robust_count(hi, rel)? - self.robust_count(lo, rel)?;
            let fiber = self.fiber_count_below(hi) - self.fiber_count_below(lo);
            report.bracket_mismatches += usize::from(strip != fiber || strip == 0);
            report.brackets_checked += 1;
            let u = self.extend(self.kgrid.get(p), &e.psi_col(s), c0)?;
            let au = self.strip.phi().matvec(&u);
            let mu = self.strip.mass().matvec(&u);
            let r: Vec<C64> = au.iter().zip(&mu).map(|(a, m)| a - m * (l + 1.0)).collect();
            report.max_residual = report.max_residual.max(dense::norm(&r) / dense::norm(&au));
            let rq = self.strip.phi().form(&u, &u).re / self.strip.mass().form(&u, &u).re - 1.0;
            report.max_rayleigh_error = report.max_rayleigh_error.max((rq - l).abs() / (l + 1.0));
        }
        Ok(report)
    }

    /// Inertia count, nudging the shift if the factorization meets a tiny pivot.
    fn robust_count(&self, x: f64, rel: f64) -> Result<usize> {
        let mut shift = x;
        for _ in 0..4 {
            match self.strip_count_below(shift) {
                Ok(c) => return Ok(c),
                Err(Error::NearSingular { .. }) => shift += 0.01 * rel * (x.abs() + 1.0),
                Err(e) => return Err(e),
            }
        }
        self.strip_count_below(shift)
    }

    /// Factorization of `A - (lambda + 1) M` on fiber `p`.
    pub fn fiber_resolvent_factor(&self, p: usize, lambda: f64) -> Result<BandedLdl> {
        self.fibers[p].resolvent_factor(lambda)
    }
}

/// `1 / ((l + 1)(1 - mu (l + 1)))`, erroring at the pole.
pub fn rayleigh_weight(l: f64, mu: f64) -> Result<f64> {
    let d = 1.0 - mu * (l + 1.0);
    if d.abs() <= 1e-12 {
        return Err(Error::NearSingular {
            shift: mu,
            pivot: d,
            row: 0,
            threshold: 1e-12,
        });
    }
    Ok(1.0 / ((l + 1.0) * d))
}

/// Outcome of [`FloquetContext::spectral_coincidence`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CoincidenceReport {
    pub counts_checked: usize,
    pub count_mismatches: usize,
    pub brackets_checked: usize,
    pub bracket_mismatches: usize,
    /// Largest `||(A - (l+1) M) u|| / ||A u||` over extended fiber modes.
    pub max_residual: f64,
    /// Largest relative Rayleigh-quotient error of the extended modes.
    pub max_rayleigh_error: f64,
}

impl CoincidenceReport {
    pub fn holds(&self, tol: f64) -> bool {
        self.count_mismatches == 0 && self.bracket_mismatches == 0 && self.max_residual <= tol && self.max_rayleigh_error <= tol
    }
}
