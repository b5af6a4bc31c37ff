//! Bilinear quadrilateral finite elements on quasi-periodic grids.
//!
//! Functionals are represented by action vectors `F_i = f[basis_i]`, and the
//! dual pairing is `f[v] = v* F`. The negative-norm inner product is
//! `<F, G> = G* A^{-1} F`, so that `<A u, A v> = v* A u`.

use std::f64::consts::PI;
use std::sync::OnceLock;

use faer::Mat;

use crate::error::{Error, Result};
use crate::linalg::{BandOrdering, BandedLdl, Csr};
use crate::medium::DielectricMap;
use crate::C64;

/// Element stiffness for `grad u . grad v` on a square element (scale-free in 2D).
const KE: [[f64; 4]; 4] = [
    [4.0, -1.0, -2.0, -1.0],
    [-1.0, 4.0, -1.0, -2.0],
    [-2.0, -1.0, 4.0, -1.0],
    [-1.0, -2.0, -1.0, 4.0],
];

/// Element mass divided by `h^2`.
const ME: [[f64; 4]; 4] = [
    [4.0, 2.0, 1.0, 2.0],
    [2.0, 4.0, 2.0, 1.0],
    [1.0, 2.0, 4.0, 2.0],
    [2.0, 1.0, 2.0, 4.0],
];

/// Grid with quasi-periodic node identification in both directions.
///
/// Unit-cell meshes identify `y = 0` with `y = 1` through the phase `e^{ik}`.
/// Strip meshes are tori of `n_y` cells whose twist `e^{-i pi n_y}` makes the
/// fiber momenta `-pi + 2 pi p / n_y` exactly the Bloch momenta the torus supports.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuasiMesh {
    n: usize,
    n_y: usize,
    k_x: f64,
    k: Option<f64>,
}

impl QuasiMesh {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_y(&self) -> usize {
        self.n_y
    }

    pub fn k_x(&self) -> f64 {
        self.k_x
    }

    /// Fiber momentum of a unit-cell mesh, `None` for strips.
    pub fn k(&self) -> Option<f64> {
        self.k
    }

    pub fn rows(&self) -> usize {
        self.n * self.n_y
    }

    pub fn node_count(&self) -> usize {
        self.n * self.rows()
    }

    pub fn node(&self, i: usize, row: usize) -> usize {
        i + self.n * row
    }

    /// Phase angle picked up when wrapping from the top row back to row 0.
    pub fn y_twist(&self) -> f64 {
        self.k.unwrap_or(-PI * self.n_y as f64)
    }

    /// Global nodes and wrap phases of the element with lower-left corner `(i, row)`,
    /// in the local order `(i,j), (i+1,j), (i+1,j+1), (i,j+1)`.
    pub fn element_nodes(&self, i: usize, row: usize) -> [(usize, C64); 4] {
        let (n, r) = (self.n, self.rows());
        let px = C64::from_polar(1.0, self.k_x);
        let py = C64::from_polar(1.0, self.y_twist());
        let wrap = |a: usize, b: usize| {
            let mut ph = C64::new(1.0, 0.0);
            let (mut a, mut b) = (a, b);
            if a == n {
                a = 0;
                ph *= px;
            }
            if b == r {
                b = 0;
                ph *= py;
            }
            (a + n * b, ph)
        };
        [wrap(i, row), wrap(i + 1, row), wrap(i + 1, row + 1), wrap(i, row + 1)]
    }

    /// Row interleaving `0, R-1, 1, R-2, ...` so the periodic wrap stays banded
    /// (half-bandwidth about `3n`).
    pub fn band_ordering(&self) -> BandOrdering {
        let r = self.rows();
        let mut rows = Vec::with_capacity(r);
        let (mut lo, mut hi) = (0usize, r);
        while lo < hi {
            rows.push(lo);
            lo += 1;
            if lo < hi {
                hi -= 1;
                rows.push(hi);
            }
        }
        let perm = rows
            .iter()
            .flat_map(|&row| (0..self.n).map(move |i| i + self.n * row))
            .collect();
        BandOrdering::from_perm(perm)
    }
}

/// Validate parameters and build a mesh. `k = Some(..)` requests a unit cell.
pub fn build_mesh(n: usize, n_y: usize, k_x: f64, k: Option<f64>) -> Result<QuasiMesh> {
    const SLACK: f64 = 1e-12;
    if n < 4 {
        return Err(Error::InvalidInput(format!("N = {n} < 4")));
    }
    if n_y == 0 {
        return Err(Error::InvalidInput("N_y must be at least 1".into()));
    }
    if !(k_x.is_finite() && k_x.abs() <= PI + SLACK) {
        return Err(Error::InvalidInput(format!("k_x = {k_x} outside the Brillouin zone [-pi, pi]")));
    }
    if let Some(k) = k {
        if !(k.is_finite() && k.abs() <= PI + SLACK) {
            return Err(Error::InvalidInput(format!("k = {k} outside the Brillouin zone [-pi, pi]")));
        }
        if n_y != 1 {
            return Err(Error::InvalidInput("a fiber momentum requires a unit-cell mesh (N_y = 1)".into()));
        }
    }
    Ok(QuasiMesh { n, n_y, k_x, k })
}

/// Stiffness `S`, mass `M` and `A = S + M` for one permittivity map and mesh.
#[derive(Debug)]
pub struct AssembledForms {
    mesh: QuasiMesh,
    s: Csr,
    m: Csr,
    a: Csr,
    ordering: BandOrdering,
    a_factor: OnceLock<BandedLdl>,
}

pub fn assemble_forms(mesh: &QuasiMesh, eps: &DielectricMap) -> Result<AssembledForms> {
    if eps.resolution() != mesh.n || eps.strip_extent() != mesh.n_y {
        return Err(Error::Geometry(format!(
            "permittivity map (N={}, N_y={}) does not match mesh (N={}, N_y={})",
            eps.resolution(),
            eps.strip_extent(),
            mesh.n,
            mesh.n_y
        )));
    }
    let (n, rows) = (mesh.n, mesh.rows());
    let h2 = 1.0 / (n * n) as f64;
    let mut ts = Vec::with_capacity(16 * n * rows);
    let mut tm = Vec::with_capacity(16 * n * rows);
    for row in 0..rows {
        for i in 0..n {
            let inv_eps = 1.0 / eps.at(i, row);
            let nodes = mesh.element_nodes(i, row);
            for (a, &(ga, pa)) in nodes.iter().enumerate() {
                for (b, &(gb, pb)) in nodes.iter().enumerate() {
                    let f = pa.conj() * pb;
                    ts.push((ga, gb, f * (KE[a][b] * inv_eps / 6.0)));
                    tm.push((ga, gb, f * (ME[a][b] * h2 / 36.0)));
                }
            }
        }
    }
    let nn = mesh.node_count();
    let s = Csr::from_triplets(nn, ts);
    let m = Csr::from_triplets(nn, tm);
    let a = s.lincomb(1.0, &m, 1.0);
    Ok(AssembledForms {
        mesh: *mesh,
        s,
        m,
        a,
        ordering: mesh.band_ordering(),
        a_factor: OnceLock::new(),
    })
}

impl AssembledForms {
    pub fn mesh(&self) -> &QuasiMesh {
        &self.mesh
    }

    pub fn stiffness(&self) -> &Csr {
        &self.s
    }

    pub fn mass(&self) -> &Csr {
        &self.m
    }

    /// The matrix of the `H^1` inner product, `S + M`.
    pub fn phi(&self) -> &Csr {
        &self.a
    }

    pub fn ordering(&self) -> &BandOrdering {
        &self.ordering
    }

    pub fn dim(&self) -> usize {
        self.a.dim()
    }

    /// Cached factorization of `A`.
    pub fn phi_factor(&self) -> Result<&BandedLdl> {
        if let Some(f) = self.a_factor.get() {
            return Ok(f);
        }
        let f = BandedLdl::factor(&self.a, &self.ordering, -1.0)?;
        if f.negative_pivots() != 0 {
            return Err(Error::Internal("A = S + M is not positive definite".into()));
        }
        Ok(self.a_factor.get_or_init(|| f))
    }

    /// `u = A^{-1} F`.
    pub fn solve_phi_inverse(&self, f: &[C64]) -> Result<Vec<C64>> {
        self.check_len(f)?;
        Ok(self.phi_factor()?.solve(f))
    }

    /// Factorization of `M - mu A`.
    pub fn shifted_factor(&self, mu: f64) -> Result<BandedLdl> {
        BandedLdl::factor(&self.m.lincomb(1.0, &self.a, -mu), &self.ordering, mu)
    }

    /// `u` with `(M - mu A) u = F`.
    pub fn solve_shifted(&self, mu: f64, f: &[C64]) -> Result<Vec<C64>> {
        self.check_len(f)?;
        Ok(self.shifted_factor(mu)?.solve(f))
    }

    /// Factorization of `A - (lambda + 1) M`, i.e. of the discrete `L0 - lambda`.
    pub fn resolvent_factor(&self, lambda: f64) -> Result<BandedLdl> {
        BandedLdl::factor(&self.a.lincomb(1.0, &self.m, -(lambda + 1.0)), &self.ordering, lambda)
    }

    /// `u` with `(A - (lambda + 1) M) u = F`.
    pub fn apply_resolvent(&self, lambda: f64, f: &[C64]) -> Result<Vec<C64>> {
        self.check_len(f)?;
        Ok(self.resolvent_factor(lambda)?.solve(f))
    }

    /// `<F, G> = G* A^{-1} F`.
    pub fn hminus_inner(&self, f: &[C64], g: &[C64]) -> Result<C64> {
        let u = self.solve_phi_inverse(f)?;
        Ok(g.iter().zip(&u).map(|(a, b)| a.conj() * b).sum())
    }

    /// Dense `(A, M)` for fiber-sized problems.
    pub fn dense_pair(&self) -> (Mat<C64>, Mat<C64>) {
        (self.a.to_dense(), self.m.to_dense())
    }

    fn check_len(&self, f: &[C64]) -> Result<()> {
        if f.len() != self.dim() {
            return Err(Error::InvalidInput(format!(
                "vector of length {} for {} unknowns",
                f.len(),
                self.dim()
            )));
        }
        Ok(())
    }
}

/// `S0 - S1` restricted to the nodes of the elements where the maps differ.
#[derive(Debug, Clone)]
pub struct DefectCoupling {
    /// Sorted global node indices.
    pub support: Vec<usize>,
    /// Dense Hermitian `E* (S0 - S1) E`.
    pub d: Mat<C64>,
    /// Elements where `eps0 != eps1`.
    pub elements: Vec<usize>,
}

impl DefectCoupling {
    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    /// Gather `x` on the support.
    pub fn restrict(&self, x: &[C64]) -> Vec<C64> {
        self.support.iter().map(|&g| x[g]).collect()
    }

    /// Scatter support values into a zero vector of length `n`.
    pub fn extend(&self, y: &[C64], n: usize) -> Vec<C64> {
        let mut x = vec![C64::new(0.0, 0.0); n];
        for (&g, &v) in self.support.iter().zip(y) {
            x[g] = v;
        }
        x
    }
}

/// Assemble the defect-local stiffness difference element by element.
pub fn defect_coupling(mesh: &QuasiMesh, eps0: &DielectricMap, eps1: &DielectricMap) -> Result<DefectCoupling> {
    for eps in [eps0, eps1] {
        if eps.resolution() != mesh.n || eps.strip_extent() != mesh.n_y {
            return Err(Error::Geometry("permittivity map does not match mesh".into()));
        }
    }
    let n = mesh.n;
    let elements: Vec<usize> = (0..eps0.values().len())
        .filter(|&e| eps0.values()[e] != eps1.values()[e])
        .collect();
    let mut support: Vec<usize> = elements
        .iter()
        .flat_map(|&e| mesh.element_nodes(e % n, e / n).map(|(g, _)| g))
        .collect();
    support.sort_unstable();
    support.dedup();
    let pos = |g: usize| support.binary_search(&g).unwrap();
    let mut d = Mat::<C64>::zeros(support.len(), support.len());
    for &e in &elements {
        let (i, row) = (e % n, e / n);
        let w = (1.0 / eps0.at(i, row) - 1.0 / eps1.at(i, row)) / 6.0;
        let nodes = mesh.element_nodes(i, row);
        for (a, &(ga, pa)) in nodes.iter().enumerate() {
            for (b, &(gb, pb)) in nodes.iter().enumerate() {
                d[(pos(ga), pos(gb))] += pa.conj() * pb * (KE[a][b] * w);
            }
        }
    }
    Ok(DefectCoupling { support, d, elements })
}
