use faer::Mat;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{KOperatorState, ShiftedKernel};
use crate::error::{Error, Result};
use crate::linalg::dense;
use crate::C64;

/// The admissible shifts `mu = 1/(lambda + 1)` for `lambda` inside a gap,
/// kept a relative `1e-8` of the gap width away from both edges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MuWindow {
    pub lambda0: f64,
    pub lambda1: f64,
    /// Image of `Lambda_1 - margin`.
    pub mu_min: f64,
    /// Image of `Lambda_0 + margin`.
    pub mu_max: f64,
}

impl MuWindow {
    pub const EDGE_MARGIN: f64 = 1e-8;

    pub fn from_gap(lambda0: f64, lambda1: f64) -> Result<Self> {
        if !(lambda0 < lambda1 && lambda0 > -1.0) {
            return Err(Error::InvalidInput(format!("({lambda0}, {lambda1}) is not a gap above -1")));
        }
        let m = Self::EDGE_MARGIN * (lambda1 - lambda0);
        Ok(Self {
            lambda0,
            lambda1,
            mu_min: 1.0 / (lambda1 - m + 1.0),
            mu_max: 1.0 / (lambda0 + m + 1.0),
        })
    }

    /// `mu` at normalized position `s in [0, 1]`, `s = 0` being the upper gap edge.
    pub fn at(&self, s: f64) -> f64 {
        self.mu_min + s * (self.mu_max - self.mu_min)
    }

    pub fn mid(&self) -> f64 {
        self.at(0.5)
    }

    pub fn lambda_of(mu: f64) -> f64 {
        1.0 / mu - 1.0
    }
}

fn geometric(lo: f64, hi: f64, count: usize) -> impl Iterator<Item = f64> {
    let r = (hi / lo).ln() / (count - 1) as f64;
    (0..count).map(move |i| lo * (r * i as f64).exp())
}

/// 64 shifts ascending: both ends, 24 geometric toward the upper gap edge,
/// 8 geometric toward the lower edge and 30 uniform interior points.
pub fn mu_grid(window: &MuWindow) -> Vec<f64> {
    let mut s: Vec<f64> = vec![0.0, 1.0];
    s.extend(geometric(1e-7, 1e-1, 24));
    s.extend(geometric(1e-5, 1e-1, 8).map(|x| 1.0 - x));
    s.extend((1..=30).map(|i| i as f64 / 31.0));
    s.sort_by(f64::total_cmp);
    s.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    s.into_iter().map(|x| window.at(x)).collect()
}

/// `A_mu` in the basis `Q` and its Hermitian form.
#[derive(Debug, Clone)]
pub struct AmuMatrix {
    pub mu: f64,
    /// Column `i` holds the `Q`-coordinates of `A_mu q_i`.
    pub amu: Mat<C64>,
    /// `a = diag(nu) A_mu`, the matrix of `<A_mu x, y>_K`, symmetrized.
    pub a: Mat<C64>,
    /// `nu^{-1/2} a nu^{-1/2}`; its eigenvalues are the `kappa_m(mu)`.
    pub h: Mat<C64>,
    /// Relative defect of `K`-symmetry before symmetrizing.
    pub symmetry_defect: f64,
}

impl AmuMatrix {
    /// `<A_mu x, x>_K`.
    pub fn form(&self, x: &[C64]) -> f64 {
        let ax = &self.a * dense::vec_to_col(x);
        dense::dot(x, &dense::col_to_vec(ax.as_ref(), 0)).re
    }
}

/// Build `P (I - mu G0^{-1})^{-1} K` on the range of `K`: `Q* R(mu) D G1 Q`.
pub fn assemble_amu(state: &KOperatorState, kernel: &dyn ShiftedKernel, mu: f64) -> Result<AmuMatrix> {
    let r = state.rank();
    if r == 0 {
        let z = Mat::zeros(0, 0);
        return Ok(AmuMatrix { mu, amu: z.clone(), a: z.clone(), h: z, symmetry_defect: 0.0 });
    }
    if kernel.dim() != state.support().len() {
        return Err(Error::InvalidInput("kernel and K live on different supports".into()));
    }
    let rk = kernel.kernel(mu)?;
    let amu = state.q().adjoint() * (&rk * state.kq());
    let nu = state.nu();
    let raw = Mat::from_fn(r, r, |j, i| amu[(j, i)] * nu[j]);
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for i in 0..r {
        for j in 0..r {
            num = num.max((raw[(j, i)] - raw[(i, j)].conj()).norm());
            den = den.max(raw[(j, i)].norm());
        }
    }
    let a = dense::hermitian_part(raw.as_ref());
    let h = Mat::from_fn(r, r, |i, j| a[(i, j)] / (nu[i] * nu[j]).sqrt());
    Ok(AmuMatrix {
        mu,
        amu,
        a,
        h,
        symmetry_defect: if den > 0.0 { num / den } else { 0.0 },
    })
}

/// The `m_max` lowest `kappa_m(mu)`.
pub fn kappa_spectrum(amu: &AmuMatrix, m_max: usize) -> Result<Vec<f64>> {
    if amu.h.nrows() == 0 {
        return Ok(Vec::new());
    }
    let mut k = dense::hermitian_eigenvalues(amu.h.as_ref())?;
    k.truncate(m_max);
    Ok(k)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    /// Number of `kappa_m` kept in the trace.
    pub m_max: usize,
    /// Relative width at which root refinement stops.
    pub root_tol: f64,
    pub max_iter: usize,
    /// Allowed decrease `tol * max(1, |kappa|)` between consecutive shifts.
    pub monotone_tol: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            m_max: 8,
            root_tol: 1e-12,
            max_iter: 100,
            monotone_tol: 1e-8,
        }
    }
}

/// A solution of `kappa_m(mu) = -1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    /// 1-based eigenvalue index.
    pub m: usize,
    pub mu: f64,
    /// The eigenvalue `1/mu - 1` of the perturbed operator.
    pub lambda: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaTrace {
    pub window: MuWindow,
    pub mu: Vec<f64>,
    /// `kappa[i]` holds the lowest `kappa_m(mu[i])`, ascending in `m`.
    pub kappa: Vec<Vec<f64>>,
    pub crossings: Vec<Crossing>,
    pub count: usize,
    /// Pairs of indices `m` crossing at the same shift within `1e-10`.
    pub degenerate: Vec<(usize, usize)>,
    pub max_symmetry_defect: f64,
    /// Smallest `kappa_m(mu_{i+1}) - kappa_m(mu_i)` over the trace.
    pub min_increment: f64,
}

impl KappaTrace {
    pub fn lambdas(&self) -> Vec<f64> {
        let mut l: Vec<f64> = self.crossings.iter().map(|c| c.lambda).collect();
        l.sort_by(f64::total_cmp);
        l
    }
}

fn all_kappa(state: &KOperatorState, kernel: &dyn ShiftedKernel, mu: f64) -> Result<(Vec<f64>, f64)> {
    let a = assemble_amu(state, kernel, mu)?;
    Ok((kappa_spectrum(&a, usize::MAX)?, a.symmetry_defect))
}

/// Sample `kappa_m` on the shift grid, check monotonicity and refine every
/// crossing of `-1` with the Illinois method.
pub fn sweep_and_count(
    state: &KOperatorState,
    kernel: &dyn ShiftedKernel,
    window: &MuWindow,
    opts: &SweepOptions,
) -> Result<KappaTrace> {
    let mu = mu_grid(window);
    let samples = mu
        .par_iter()
        .map(|&m| all_kappa(state, kernel, m))
        .collect::<Result<Vec<_>>>()?;
    let max_symmetry_defect = samples.iter().map(|s| s.1).fold(0.0, f64::max);
    let full: Vec<Vec<f64>> = samples.into_iter().map(|s| s.0).collect();
    let r = state.rank();
    let mut min_increment = f64::INFINITY;
    for i in 0..mu.len().saturating_sub(1) {
        for m in 0..r {
            let (lo, hi) = (full[i][m], full[i + 1][m]);
            let inc = hi - lo;
            min_increment = min_increment.min(inc);
            if inc < -opts.monotone_tol * lo.abs().max(hi.abs()).max(1.0) {
                return Err(Error::MonotonicityViolated {
                    m: m + 1,
                    mu_lo: mu[i],
                    mu_hi: mu[i + 1],
                    drop: -inc,
                });
            }
        }
    }
    let below = |k: &Vec<f64>| k.iter().filter(|&&v| v < -1.0).count();
    let count = if r == 0 { 0 } else { below(&full[0]) - below(&full[mu.len() - 1]).min(below(&full[0])) };
    let mut crossings = Vec::new();
    for m in 0..r {
        let Some(j) = (0..mu.len() - 1).find(|&j| full[j][m] < -1.0 && full[j + 1][m] >= -1.0) else {
            continue;
        };
        let f = |x: f64| -> Result<f64> { Ok(all_kappa(state, kernel, x)?.0[m] + 1.0) };
        let (root, evals) = illinois(f, mu[j], full[j][m] + 1.0, mu[j + 1], full[j + 1][m] + 1.0, opts)?;
        crossings.push(Crossing {
            m: m + 1,
            mu: root,
            lambda: MuWindow::lambda_of(root),
            evaluations: evals,
        });
    }
    if crossings.len() != count {
        return Err(Error::Internal(format!(
            "{} refined crossings but the endpoint counts differ by {count}",
            crossings.len()
        )));
    }
    let mut degenerate = Vec::new();
    for (i, a) in crossings.iter().enumerate() {
        for b in &crossings[i + 1..] {
            if (a.mu - b.mu).abs() <= 1e-10 * a.mu {
                degenerate.push((a.m, b.m));
            }
        }
    }
    let kappa = full.into_iter().map(|mut k| {
        k.truncate(opts.m_max);
        k
    });
    Ok(KappaTrace {
        window: *window,
        mu,
        kappa: kappa.collect(),
        crossings,
        count,
        degenerate,
        max_symmetry_defect,
        min_increment: if min_increment.is_finite() { min_increment } else { 0.0 },
    })
}

/// Root of an increasing function with `fa < 0 <= fb`.
fn illinois(
    f: impl Fn(f64) -> Result<f64>,
    mut a: f64,
    mut fa: f64,
    mut b: f64,
    mut fb: f64,
    opts: &SweepOptions,
) -> Result<(f64, usize)> {
    if fb == 0.0 {
        return Ok((b, 0));
    }
    let mut side = 0i8;
    let mut evals = 0;
    let mut best = b;
    while evals < opts.max_iter {
        if (b - a).abs() <= opts.root_tol * b.abs() {
            return Ok((best, evals));
        }
        let mut c = (a * fb - b * fa) / (fb - fa);
        // Regula falsi can stall on one side; bisect when it does.
        if !(c > a && c < b) || evals % 8 == 7 {
            c = 0.5 * (a + b);
        }
        let fc = f(c)?;
        evals += 1;
        best = c;
        if fc == 0.0 {
            return Ok((c, evals));
        }
        if fc < 0.0 {
            a = c;
            fa = fc;
            if side == -1 {
                fb *= 0.5;
            }
            side = -1;
        } else {
            b = c;
            fb = fc;
            if side == 1 {
                fa *= 0.5;
            }
            side = 1;
        }
    }
    Err(Error::NotConverged(format!("kappa crossing in [{a}, {b}] after {evals} evaluations")))
}
