//! Band functions of the fiber operators over the one-dimensional Brillouin
//! zone, analytic band labelling, and the gap / edge-set analysis in [`gap`].

mod gap;

pub use gap::{
    analyze_gap, check_nonconstant_bands, detect_gaps, extract_sigma, fit_edge_nondegeneracy,
    isolation_margin, EdgeFit, Gap, GapOptions, GapReport, SigmaPoint, SigmaSet,
};

use std::f64::consts::PI;

use faer::Mat;
use rayon::prelude::*;

use crate::discretize::{assemble_forms, build_mesh};
use crate::error::{Error, Result};
use crate::linalg::{dense, Csr};
use crate::medium::DielectricMap;
use crate::C64;

/// Overlap ties closer than this are reported and broken by eigenvalue proximity.
pub const TIE_TOL: f64 = 1e-6;

/// Uniform Brillouin-zone samples `k_p = -pi + 2 pi p / n_k`, `p = 0..n_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Kgrid {
    points: Vec<f64>,
}

impl Kgrid {
    pub fn uniform(n_k: usize) -> Result<Self> {
        if n_k < 3 {
            return Err(Error::InvalidInput(format!("N_k = {n_k} < 3")));
        }
        Ok(Self {
            points: (0..n_k).map(|p| -PI + 2.0 * PI * p as f64 / n_k as f64).collect(),
        })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn spacing(&self) -> f64 {
        2.0 * PI / self.points.len() as f64
    }

    pub fn get(&self, p: usize) -> f64 {
        self.points[p]
    }
}

/// Eigenpairs of one fiber pencil `(A_k, M)`.
#[derive(Debug, Clone)]
pub struct FiberEigen {
    pub k: f64,
    /// `lambda_s(k)`, ascending.
    pub lambdas: Vec<f64>,
    /// Columns `psi_s(k)`, mass-orthonormal.
    pub psi: Mat<C64>,
}

impl FiberEigen {
    pub fn count(&self) -> usize {
        self.lambdas.len()
    }

    /// `phi_s = sqrt(lambda_s + 1) psi_s`, the mode of unit negative norm.
    pub fn phi(&self, s: usize) -> Vec<C64> {
        let w = (self.lambdas[s] + 1.0).sqrt();
        (0..self.psi.nrows()).map(|i| self.psi[(i, s)] * w).collect()
    }

    pub fn psi_col(&self, s: usize) -> Vec<C64> {
        dense::col_to_vec(self.psi.as_ref(), s)
    }
}

/// Dense generalized eigensolve of the fiber at momentum `k`, keeping `count` pairs.
pub fn solve_fiber(cell: &DielectricMap, k_x: f64, k: f64, count: Option<usize>) -> Result<FiberEigen> {
    let mesh = build_mesh(cell.resolution(), 1, k_x, Some(k))?;
    let forms = assemble_forms(&mesh, cell)?;
    let (a, m) = forms.dense_pair();
    let (w, v) = dense::pencil_eigen(a.as_ref(), m.as_ref())
        .map_err(|e| Error::NotConverged(format!("fiber k = {k:.6}: {e}")))?;
    let keep = count.unwrap_or(w.len()).min(w.len());
    let lambdas: Vec<f64> = w[..keep].iter().map(|x| x - 1.0).collect();
    if let Some(s) = lambdas.iter().position(|l| l + 1.0 <= 0.0) {
        return Err(Error::NotConverged(format!(
            "fiber k = {k:.6}, band {s}: pencil eigenvalue {} is not positive",
            lambdas[s] + 1.0
        )));
    }
    let psi = v.subcols(0, keep).to_owned();
    Ok(FiberEigen { k, lambdas, psi })
}

/// How fiber vectors at neighbouring momenta are compared.
#[derive(Debug, Clone)]
enum Metric {
    /// Plain Euclidean overlaps (synthetic tables).
    Identity,
    /// Gauge-fixed overlaps `(e^{-iky} v)* M_0 (e^{-ik'y} v')` with the y-periodic mass `M_0`.
    Gauge { n: usize, mass0: Csr },
}

/// Table `lambda_s(k_p)` with optional fiber vectors.
#[derive(Debug, Clone)]
pub struct BandStructure {
    kgrid: Kgrid,
    /// `bands[p][s]`
    bands: Vec<Vec<f64>>,
    /// `vectors[p]` holds `psi_s(k_p)` as columns.
    vectors: Option<Vec<Mat<C64>>>,
    metric: Metric,
    sorted: bool,
    /// Label `s` at the last sample continues as label `wrap[s]` at the first.
    wrap: Vec<usize>,
    warnings: Vec<String>,
}

impl BandStructure {
    /// Table without eigenvectors; rows are momenta.
    pub fn from_table(kgrid: Kgrid, bands: Vec<Vec<f64>>) -> Result<Self> {
        Self::check_table(&kgrid, &bands)?;
        let nb = bands[0].len();
        Ok(Self {
            kgrid,
            bands,
            vectors: None,
            metric: Metric::Identity,
            sorted: false,
            wrap: (0..nb).collect(),
            warnings: Vec::new(),
        })
    }

    /// Table with eigenvectors compared in the Euclidean metric.
    pub fn synthetic(kgrid: Kgrid, bands: Vec<Vec<f64>>, vectors: Vec<Mat<C64>>) -> Result<Self> {
        let mut b = Self::from_table(kgrid, bands)?;
        if vectors.len() != b.kgrid.len() || vectors.iter().any(|v| v.ncols() != b.n_bands()) {
            return Err(Error::InvalidInput("one vector column per band and momentum required".into()));
        }
        b.vectors = Some(vectors);
        Ok(b)
    }

    /// Band table built from already computed fibers (one per grid point).
    pub fn from_fibers(cell: &DielectricMap, k_x: f64, kgrid: Kgrid, fibers: &[FiberEigen], n_bands: usize) -> Result<Self> {
        if fibers.len() != kgrid.len() {
            return Err(Error::InvalidInput("one fiber per grid momentum required".into()));
        }
        if fibers.iter().any(|f| f.count() < n_bands) {
            return Err(Error::InvalidInput(format!("fewer than {n_bands} eigenpairs per fiber")));
        }
        let bands = fibers.iter().map(|f| f.lambdas[..n_bands].to_vec()).collect();
        let vectors = fibers.iter().map(|f| f.psi.subcols(0, n_bands).to_owned()).collect();
        let mesh0 = build_mesh(cell.resolution(), 1, k_x, Some(0.0))?;
        let mass0 = assemble_forms(&mesh0, cell)?.mass().clone();
        let mut b = Self::from_table(kgrid, bands)?;
        b.vectors = Some(vectors);
        b.metric = Metric::Gauge { n: cell.resolution(), mass0 };
        Ok(b)
    }

    fn check_table(kgrid: &Kgrid, bands: &[Vec<f64>]) -> Result<()> {
        if bands.len() != kgrid.len() || bands.is_empty() {
            return Err(Error::InvalidInput("one row of band values per momentum required".into()));
        }
        let nb = bands[0].len();
        if nb == 0 || bands.iter().any(|r| r.len() != nb) {
            return Err(Error::InvalidInput("ragged band table".into()));
        }
        if bands.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite band value".into()));
        }
        Ok(())
    }

    pub fn kgrid(&self) -> &Kgrid {
        &self.kgrid
    }

    pub fn n_k(&self) -> usize {
        self.kgrid.len()
    }

    pub fn n_bands(&self) -> usize {
        self.bands[0].len()
    }

    pub fn value(&self, s: usize, p: usize) -> f64 {
        self.bands[p][s]
    }

    /// Row of band values at momentum index `p`.
    pub fn row(&self, p: usize) -> &[f64] {
        &self.bands[p]
    }

    /// Band `s` across the grid.
    pub fn band(&self, s: usize) -> Vec<f64> {
        self.bands.iter().map(|r| r[s]).collect()
    }

    pub fn is_sorted(&self) -> bool {
        self.sorted
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn has_vectors(&self) -> bool {
        self.vectors.is_some()
    }

    /// `psi_s(k_p)`, mass-normalized.
    pub fn psi(&self, s: usize, p: usize) -> Option<Vec<C64>> {
        self.vectors.as_ref().map(|v| dense::col_to_vec(v[p].as_ref(), s))
    }

    /// `phi_s(k_p) = sqrt(lambda + 1) psi_s(k_p)`.
    pub fn phi(&self, s: usize, p: usize) -> Option<Vec<C64>> {
        let w = (self.value(s, p) + 1.0).sqrt();
        self.psi(s, p).map(|v| v.into_iter().map(|z| z * w).collect())
    }

    /// Label of band `s` after stepping from grid index `p` by `step` (periodically).
    pub fn neighbour(&self, s: usize, p: usize, step: isize) -> (usize, usize) {
        let n = self.n_k() as isize;
        let mut label = s;
        let mut q = p as isize;
        for _ in 0..step.unsigned_abs() {
            if step > 0 {
                if q == n - 1 {
                    label = self.wrap[label];
                    q = 0;
                } else {
                    q += 1;
                }
            } else if q == 0 {
                label = self.wrap.iter().position(|&w| w == label).unwrap_or(label);
                q = n - 1;
            } else {
                q -= 1;
            }
        }
        (label, q as usize)
    }

    /// Permutation mapping labels across the zone boundary.
    pub fn wrap_permutation(&self) -> &[usize] {
        &self.wrap
    }

    fn gauge_fixed(&self, v: &[C64], k: f64) -> Vec<C64> {
        match &self.metric {
            Metric::Identity => v.to_vec(),
            Metric::Gauge { n, .. } => v
                .iter()
                .enumerate()
                .map(|(g, z)| z * C64::from_polar(1.0, -k * (g / n) as f64 / *n as f64))
                .collect(),
        }
    }

    fn inner(&self, a: &[C64], b: &[C64]) -> C64 {
        match &self.metric {
            Metric::Identity => dense::dot(a, b),
            Metric::Gauge { mass0, .. } => mass0.form(a, b),
        }
    }

    /// Normalized overlap magnitudes between all labels at `(p, ka)` and `(q, kb)`.
    fn overlaps(&self, p: usize, ka: f64, q: usize, kb: f64) -> Vec<Vec<f64>> {
        let vecs = self.vectors.as_ref().expect("vectors present");
        let nb = self.n_bands();
        let fix = |m: &Mat<C64>, k: f64| -> Vec<Vec<C64>> {
            (0..nb).map(|s| self.gauge_fixed(&dense::col_to_vec(m.as_ref(), s), k)).collect()
        };
        let (va, vb) = (fix(&vecs[p], ka), fix(&vecs[q], kb));
        let na: Vec<f64> = va.iter().map(|x| self.inner(x, x).re.sqrt()).collect();
        let nbv: Vec<f64> = vb.iter().map(|x| self.inner(x, x).re.sqrt()).collect();
        (0..nb)
            .map(|a| (0..nb).map(|b| self.inner(&va[a], &vb[b]).norm() / (na[a] * nbv[b])).collect())
            .collect()
    }

    /// Greedy overlap matching; returns `perm[a] = b` (label `a` continues as column `b`).
    fn match_labels(&self, ov: &[Vec<f64>], la: &[f64], lb: &[f64], at: f64) -> (Vec<usize>, Vec<String>) {
        let nb = ov.len();
        let mut perm = vec![usize::MAX; nb];
        let mut used = vec![false; nb];
        let mut warnings = Vec::new();
        for _ in 0..nb {
            let best = (0..nb)
                .filter(|&a| perm[a] == usize::MAX)
                .flat_map(|a| (0..nb).filter(|&b| !used[b]).map(move |b| (a, b)))
                .map(|(a, b)| ov[a][b])
                .fold(f64::NEG_INFINITY, f64::max);
            let cands: Vec<(usize, usize)> = (0..nb)
                .filter(|&a| perm[a] == usize::MAX)
                .flat_map(|a| (0..nb).filter(|&b| !used[b]).map(move |b| (a, b)))
                .filter(|&(a, b)| ov[a][b] >= best - TIE_TOL)
                .collect();
            let &(a, b) = cands
                .iter()
                .min_by(|x, y| (la[x.0] - lb[x.1]).abs().total_cmp(&(la[y.0] - lb[y.1]).abs()))
                .expect("at least one candidate");
            let conflicting = cands.iter().any(|&(c, d)| (c == a) != (d == b));
            if conflicting {
                warnings.push(format!(
                    "ambiguous band matching near k = {at:.6}: overlap {best:.8} tied within {TIE_TOL:.0e}; \
                     resolved by eigenvalue proximity"
                ));
            }
            perm[a] = b;
            used[b] = true;
        }
        (perm, warnings)
    }
}

/// Lowest `n_bands` band functions on `kgrid`, fibers solved in parallel.
pub fn compute_bands(eps0: &DielectricMap, k_x: f64, kgrid: &Kgrid, n_bands: usize) -> Result<BandStructure> {
    if eps0.strip_extent() != 1 {
        return Err(Error::InvalidInput("band structure needs a unit-cell map".into()));
    }
    let nodes = eps0.resolution() * eps0.resolution();
    if n_bands == 0 || n_bands > nodes {
        return Err(Error::InvalidInput(format!("n_bands = {n_bands} not in 1..={nodes}")));
    }
    let fibers = kgrid
        .points()
        .par_iter()
        .map(|&k| solve_fiber(eps0, k_x, k, Some(n_bands)))
        .collect::<Result<Vec<_>>>()?;
    BandStructure::from_fibers(eps0, k_x, kgrid.clone(), &fibers, n_bands)
}

/// Relabel bands so eigenvectors at adjacent momenta overlap maximally.
pub fn sort_analytic(bands: BandStructure) -> Result<BandStructure> {
    if bands.vectors.is_none() {
        return Err(Error::InvalidInput("analytic sorting needs fiber vectors".into()));
    }
    let mut b = bands;
    let nk = b.n_k();
    let mut warnings = Vec::new();
    for p in 0..nk - 1 {
        let (ka, kb) = (b.kgrid.get(p), b.kgrid.get(p + 1));
        let ov = b.overlaps(p, ka, p + 1, kb);
        let (perm, w) = b.match_labels(&ov, &b.bands[p].clone(), &b.bands[p + 1].clone(), kb);
        warnings.extend(w);
        let row: Vec<f64> = perm.iter().map(|&c| b.bands[p + 1][c]).collect();
        b.bands[p + 1] = row;
        let vecs = b.vectors.as_mut().unwrap();
        let old = vecs[p + 1].clone();
        vecs[p + 1] = Mat::from_fn(old.nrows(), perm.len(), |i, a| old[(i, perm[a])]);
    }
    // Across the zone boundary k_0 + 2 pi is identified with k_0.
    let (ka, kb) = (b.kgrid.get(nk - 1), b.kgrid.get(0) + 2.0 * PI);
    let ov = b.overlaps(nk - 1, ka, 0, kb);
    let (wrap, w) = b.match_labels(&ov, &b.bands[nk - 1].clone(), &b.bands[0].clone(), PI);
    warnings.extend(w);
    b.wrap = wrap;
    b.sorted = true;
    for w in &warnings {
        log::warn!("{w}");
    }
    b.warnings.extend(warnings);
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::medium::{build_periodic_medium, CellGeometry};

    #[test]
    fn kgrid_is_the_fiber_grid() {
        let g = Kgrid::uniform(4).unwrap();
        assert_eq!(g.points(), &[-PI, -PI / 2.0, 0.0, PI / 2.0]);
        assert!(Kgrid::uniform(2).is_err());
    }

    #[test]
    fn free_fiber_has_constant_mode() {
        let cell = build_periodic_medium(&CellGeometry { background: 1.0, inclusions: vec![] }, 8).unwrap();
        let f = solve_fiber(&cell, 0.0, 0.0, Some(3)).unwrap();
        assert!(f.lambdas[0].abs() < 1e-12);
        assert_eq!(f.psi.ncols(), 3);
    }

    /// Two bands crossing linearly at k = 0 with fixed eigenvectors.
    fn crossing() -> BandStructure {
        let g = Kgrid::uniform(8).unwrap();
        let mut rows = Vec::new();
        let mut vecs = Vec::new();
        for &k in g.points() {
            let (a, b) = (k, -k);
            let e1 = [C64::new(1.0, 0.0), C64::new(0.0, 0.0)];
            let e2 = [C64::new(0.0, 0.0), C64::new(1.0, 0.0)];
            // magnitude order
            let (lo, hi, vlo, vhi) = if a <= b { (a, b, e1, e2) } else { (b, a, e2, e1) };
            rows.push(vec![lo, hi]);
            vecs.push(Mat::from_fn(2, 2, |i, j| if j == 0 { vlo[i] } else { vhi[i] }));
        }
        BandStructure::synthetic(g, rows, vecs).unwrap()
    }

    #[test]
    fn sorting_follows_a_linear_crossing() {
        let b = sort_analytic(crossing()).unwrap();
        assert!(b.is_sorted());
        let pts = b.kgrid().points().to_vec();
        let band0 = b.band(0);
        // label 0 starts at the minimum at k = -pi and keeps increasing through the crossing
        for (v, k) in band0.iter().zip(&pts) {
            assert!((v - k).abs() < 1e-15);
        }
    }

    #[test]
    fn sorting_without_crossings_is_identity() {
        let g = Kgrid::uniform(6).unwrap();
        let rows: Vec<Vec<f64>> = g.points().iter().map(|k| vec![k.cos(), 3.0 + k.cos()]).collect();
        let vecs = (0..6).map(|_| Mat::<C64>::identity(2, 2)).collect();
        let b = sort_analytic(BandStructure::synthetic(g, rows.clone(), vecs).unwrap()).unwrap();
        for p in 0..6 {
            assert_eq!(b.row(p), rows[p].as_slice());
        }
        assert_eq!(b.wrap_permutation(), &[0, 1]);
        assert!(b.warnings().is_empty());
    }

    #[test]
    fn ties_are_reported() {
        let g = Kgrid::uniform(4).unwrap();
        let rows = vec![vec![0.0, 1.0]; 4];
        let s = C64::new(0.5f64.sqrt(), 0.0);
        let mix = Mat::from_fn(2, 2, |i, j| if i == 1 && j == 1 { -s } else { s });
        let vecs = vec![Mat::<C64>::identity(2, 2), mix.clone(), Mat::<C64>::identity(2, 2), mix];
        let b = sort_analytic(BandStructure::synthetic(g, rows, vecs).unwrap()).unwrap();
        assert!(!b.warnings().is_empty());
        // eigenvalue proximity keeps the labels
        assert_eq!(b.band(0), vec![0.0; 4]);
    }

    #[test]
    fn neighbour_wraps_through_the_permutation() {
        let g = Kgrid::uniform(5).unwrap();
        let mut b = BandStructure::from_table(g, vec![vec![0.0, 1.0]; 5]).unwrap();
        b.wrap = vec![1, 0];
        assert_eq!(b.neighbour(0, 4, 1), (1, 0));
        assert_eq!(b.neighbour(1, 0, -1), (0, 4));
        assert_eq!(b.neighbour(0, 2, 2), (0, 4));
        assert_eq!(b.neighbour(0, 3, 3), (1, 1));
    }
}
