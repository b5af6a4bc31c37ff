//! Direct in-gap eigenvalues of the perturbed strip by spectrum slicing.
//!
//! Sylvester inertia of `A1 - (lambda + 1) M` counts eigenvalues below
//! `lambda`; bisection isolates each in-gap eigenvalue and shifted inverse
//! iteration with Rayleigh-quotient refinement resolves it.

use faer::linalg::triangular_solve::solve_lower_triangular_in_place;
use faer::{Mat, Par};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::discretize::{assemble_forms, build_mesh, AssembledForms};
use crate::error::{Error, Result};
use crate::linalg::{dense, BandedLdl};
use crate::medium::{apply_line_defect, DefectGeometry, DielectricMap};
use crate::C64;

/// In-gap eigenvalues stay this fraction of the gap width away from its edges.
pub const GAP_MARGIN: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceOptions {
    /// Initial isolation width relative to the gap.
    pub isolate: f64,
    /// Width below which a multi-eigenvalue bracket is treated as a cluster.
    pub cluster: f64,
    pub inverse_steps: usize,
    pub rqi_steps: usize,
    /// Accepted relative residual `||(A - (l+1) M) u|| / ||A u||`.
    pub residual: f64,
    pub seed: u64,
}

impl Default for SliceOptions {
    fn default() -> Self {
        Self {
            isolate: 1e-4,
            cluster: 1e-11,
            inverse_steps: 3,
            rqi_steps: 3,
            residual: 1e-9,
            seed: 11,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InGapMode {
    pub lambda: f64,
    /// Mass-normalized eigenvector on the strip.
    #[serde(skip)]
    pub vector: Vec<C64>,
    pub residual: f64,
    /// Inertia bracket that contains `lambda`.
    pub bracket: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectSpectrum {
    pub n_y: usize,
    pub lambda0: f64,
    pub lambda1: f64,
    /// Inertia count in `(Lambda_0 + margin, Lambda_1 - margin)`.
    pub count: usize,
    pub modes: Vec<InGapMode>,
    pub factorizations: usize,
}

impl DefectSpectrum {
    pub fn lambdas(&self) -> Vec<f64> {
        self.modes.iter().map(|m| m.lambda).collect()
    }
}

struct Slicer<'a> {
    forms: &'a AssembledForms,
    factorizations: usize,
    nudge: f64,
}

impl Slicer<'_> {
    fn factor(&mut self, lambda: f64) -> Result<(BandedLdl, f64)> {
        let mut shift = lambda;
        let mut last = None;
        for _ in 0..4 {
            self.factorizations += 1;
            match self.forms.resolvent_factor(shift) {
                Ok(f) => return Ok((f, shift)),
                Err(e @ Error::NearSingular { .. }) => {
                    last = Some(e);
                    shift += self.nudge;
                }
                Err(e) => return Err(e),
            }
        }
        Err(last.unwrap())
    }

    /// Eigenvalues below `lambda`.
    fn count(&mut self, lambda: f64) -> Result<(usize, f64)> {
        let (f, s) = self.factor(lambda)?;
        Ok((f.negative_pivots(), s))
    }
}

fn m_normalize(m: &crate::linalg::Csr, x: &mut [C64]) {
    let nrm = m.form(x, x).re.sqrt();
    for v in x.iter_mut() {
        *v /= nrm;
    }
}

fn rayleigh(forms: &AssembledForms, x: &[C64]) -> f64 {
    forms.phi().form(x, x).re / forms.mass().form(x, x).re - 1.0
}

fn residual(forms: &AssembledForms, x: &[C64], lambda: f64) -> f64 {
    let ax = forms.phi().matvec(x);
    let mx = forms.mass().matvec(x);
    let r: Vec<C64> = ax.iter().zip(&mx).map(|(a, m)| a - m * (lambda + 1.0)).collect();
    dense::norm(&r) / dense::norm(&ax)
}

/// Resolve the `mult` eigenvalues inside `[a, b]` by block inverse iteration
/// and Rayleigh-Ritz, then sharpen simple ones by Rayleigh-quotient iteration.
fn resolve(
    sl: &mut Slicer<'_>,
    a: f64,
    b: f64,
    mult: usize,
    opts: &SliceOptions,
    rng: &mut ChaCha8Rng,
) -> Result<Option<Vec<InGapMode>>> {
    let forms = sl.forms;
    let n = forms.dim();
    let (fac, _) = sl.factor(0.5 * (a + b))?;
    let mut x = Mat::from_fn(n, mult, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
    for _ in 0..opts.inverse_steps {
        let mut mx = Mat::<C64>::zeros(n, mult);
        for j in 0..mult {
            let col = forms.mass().matvec(&dense::col_to_vec(x.as_ref(), j));
            for (i, v) in col.into_iter().enumerate() {
                mx[(i, j)] = v;
            }
        }
        x = fac.solve_many(mx.as_ref());
        // M-orthonormalize through the Cholesky factor of X* M X
        let g = gram(forms, &x, true);
        let l = dense::cholesky(g.as_ref())?;
        let mut xt = x.adjoint().to_owned();
        solve_lower_triangular_in_place(l.as_ref(), xt.as_mut(), Par::Seq);
        x = xt.adjoint().to_owned();
    }
    let ga = gram(forms, &x, false);
    let gm = gram(forms, &x, true);
    let (w, c) = dense::pencil_eigen(ga.as_ref(), gm.as_ref())?;
    let y = &x * &c;
    let mut modes = Vec::with_capacity(mult);
    for (j, wj) in w.iter().enumerate() {
        let mut v = dense::col_to_vec(y.as_ref(), j);
        let mut lambda = wj - 1.0;
        if mult == 1 {
            for _ in 0..opts.rqi_steps {
                let Ok(f) = forms.resolvent_factor(lambda) else {
                    // singular to working precision: already converged
                    break;
                };
                sl.factorizations += 1;
                v = f.solve(&forms.mass().matvec(&v));
                m_normalize(forms.mass(), &mut v);
                let next = rayleigh(forms, &v);
                let done = (next - lambda).abs() <= 1e-15 * (1.0 + lambda.abs());
                lambda = next;
                if done {
                    break;
                }
            }
        }
        m_normalize(forms.mass(), &mut v);
        let res = residual(forms, &v, lambda);
        if !(lambda >= a && lambda <= b) || res > opts.residual {
            return Ok(None);
        }
        modes.push(InGapMode {
            lambda,
            vector: v,
            residual: res,
            bracket: (a, b),
        });
    }
    Ok(Some(modes))
}

fn gram(forms: &AssembledForms, x: &Mat<C64>, mass: bool) -> Mat<C64> {
    let k = x.ncols();
    let op = if mass { forms.mass() } else { forms.phi() };
    let mut ox = Mat::<C64>::zeros(x.nrows(), k);
    for j in 0..k {
        for (i, v) in op.matvec(&dense::col_to_vec(x.as_ref(), j)).into_iter().enumerate() {
            ox[(i, j)] = v;
        }
    }
    dense::hermitian_part((x.adjoint() * ox).as_ref())
}

/// In-gap eigenpairs of the pencil held by `forms`.
pub fn defect_spectrum_from_forms(forms: &AssembledForms, gap: (f64, f64), opts: &SliceOptions) -> Result<DefectSpectrum> {
    let (l0, l1) = gap;
    if !(l0 < l1) {
        return Err(Error::InvalidInput(format!("({l0}, {l1}) is not a gap")));
    }
    let width = l1 - l0;
    let margin = GAP_MARGIN * width;
    let mut sl = Slicer {
        forms,
        factorizations: 0,
        nudge: 1e-3 * margin,
    };
    let (lo, hi) = (l0 + margin, l1 - margin);
    let (c_lo, lo) = sl.count(lo)?;
    let (c_hi, hi) = sl.count(hi)?;
    if c_hi < c_lo {
        return Err(Error::Internal("inertia decreased across the gap".into()));
    }
    let count = c_hi - c_lo;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut modes = Vec::new();
    // stack of (a, count below a, b, count below b, width tolerance)
    let mut stack = vec![(lo, c_lo, hi, c_hi, opts.isolate * width)];
    while let Some((a, ca, b, cb, tol)) = stack.pop() {
        let mult = cb - ca;
        if mult == 0 {
            continue;
        }
        let w = b - a;
        if (mult == 1 && w <= tol) || w <= opts.cluster * width {
            if let Some(found) = resolve(&mut sl, a, b, mult, opts, &mut rng)? {
                modes.extend(found);
                continue;
            }
            if w <= opts.cluster * width {
                return Err(Error::NotConverged(format!("eigenvalue cluster in [{a}, {b}] not resolved")));
            }
        }
        let (cm, m) = sl.count(0.5 * (a + b))?;
        let next = if w <= tol { 0.25 * tol } else { tol };
        stack.push((m, cm, b, cb, next));
        stack.push((a, ca, m, cm, next));
    }
    modes.sort_by(|x, y| x.lambda.total_cmp(&y.lambda));
    Ok(DefectSpectrum {
        n_y: forms.mesh().n_y(),
        lambda0: l0,
        lambda1: l1,
        count,
        modes,
        factorizations: sl.factorizations,
    })
}

/// Assemble the perturbed strip and slice its gap.
pub fn defect_spectrum_direct(eps1: &DielectricMap, k_x: f64, gap: (f64, f64), opts: &SliceOptions) -> Result<DefectSpectrum> {
    let n_y = eps1.strip_extent();
    if n_y % 2 == 0 || n_y < 3 {
        return Err(Error::InvalidInput(format!("N_y = {n_y} must be odd and at least 3")));
    }
    let forms = assemble_forms(&build_mesh(eps1.resolution(), n_y, k_x, None)?, eps1)?;
    defect_spectrum_from_forms(&forms, gap, opts)
}

/// Fraction of `u* M_c u` on each cell, starting at cell `c0` and wrapping around.
pub fn decay_profile(forms: &AssembledForms, u: &[C64], c0: usize) -> Vec<f64> {
    let mesh = forms.mesh();
    let (n, n_y) = (mesh.n(), mesh.n_y());
    let per = n * n;
    let mu = forms.mass().matvec(u);
    // split the mass form by the cell of the test node, then fold the
    // shared boundary rows evenly by summing nodal contributions
    let mut cells = vec![0.0f64; n_y];
    for (g, (x, y)) in u.iter().zip(&mu).enumerate() {
        cells[g / per] += (x.conj() * y).re;
    }
    let total: f64 = cells.iter().sum();
    (0..n_y).map(|i| cells[(c0 + i) % n_y] / total).collect()
}

/// One row of a truncation study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationRow {
    pub n_y: usize,
    pub lambdas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationStudy {
    pub rows: Vec<TruncationRow>,
    /// Largest change of matched eigenvalues between the two largest `N_y`.
    pub last_change: f64,
    /// Changes below `1e-6 (Lambda_1 - Lambda_0)`.
    pub converged: bool,
    /// Count differs between the two largest `N_y`.
    pub unconverged_truncation: bool,
}

/// In-gap eigenvalues of the same defect on tori of increasing length.
pub fn truncation_study(
    cell: &DielectricMap,
    defect: &DefectGeometry,
    t: f64,
    k_x: f64,
    gap: (f64, f64),
    n_y_list: &[usize],
    opts: &SliceOptions,
) -> Result<TruncationStudy> {
    if n_y_list.windows(2).any(|w| w[0] >= w[1]) || n_y_list.iter().any(|n| n % 2 == 0) {
        return Err(Error::InvalidInput("N_y list must be increasing and odd".into()));
    }
    let rows = n_y_list
        .iter()
        .map(|&n_y| {
            let eps1 = apply_line_defect(cell, defect, t, n_y)?;
            let spectrum = defect_spectrum_direct(&eps1, k_x, gap, opts)?;
            Ok(TruncationRow { n_y, lambdas: spectrum.lambdas() })
        })
        .collect::<Result<Vec<_>>>()?;
    let width = gap.1 - gap.0;
    let (mut last_change, mut unconverged) = (0.0f64, false);
    if let [.., a, b] = rows.as_slice() {
        unconverged = a.lambdas.len() != b.lambdas.len();
        for x in &b.lambdas {
            let d = a.lambdas.iter().map(|y| (x - y).abs()).fold(f64::INFINITY, f64::min);
            last_change = last_change.max(d);
        }
    }
    Ok(TruncationStudy {
        rows,
        last_change,
        converged: !unconverged && last_change < 1e-6 * width,
        unconverged_truncation: unconverged,
    })
}

/// Inertia counts `N(sigma, t)` of the perturbed pencil; each row must be
/// nondecreasing in `t` for every eigenvalue to be nonincreasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TMonotonicity {
    pub ts: Vec<f64>,
    pub sigmas: Vec<f64>,
    /// `counts[i][j] = N(sigmas[j], ts[i])`.
    pub counts: Vec<Vec<usize>>,
    pub holds: bool,
}

pub fn eigenvalue_monotonicity(
    cell: &DielectricMap,
    defect: &DefectGeometry,
    k_x: f64,
    n_y: usize,
    ts: &[f64],
    sigmas: &[f64],
) -> Result<TMonotonicity> {
    let mut ts = ts.to_vec();
    ts.sort_by(f64::total_cmp);
    let mesh = build_mesh(cell.resolution(), n_y, k_x, None)?;
    let mut counts = Vec::with_capacity(ts.len());
    for &t in &ts {
        let forms = assemble_forms(&mesh, &apply_line_defect(cell, defect, t, n_y)?)?;
        let mut sl = Slicer {
            forms: &forms,
            factorizations: 0,
            nudge: 1e-9,
        };
        counts.push(sigmas.iter().map(|&s| sl.count(s).map(|c| c.0)).collect::<Result<Vec<_>>>()?);
    }
    let holds = counts.windows(2).all(|w| w[0].iter().zip(&w[1]).all(|(a, b)| a <= b));
    Ok(TMonotonicity {
        ts,
        sigmas: sigmas.to_vec(),
        counts,
        holds,
    })
}
